#!/usr/bin/env python3
# ABOUTME: Script to generate synthetic attention traces with a planted positional bias
# ABOUTME: Writes *.trace.jsonl files that the `bias` command aggregates

import argparse
import os
import sys

# Add parent directory to path to allow importing the application
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from pulse_focus.config import Config
from pulse_focus.traces.trace_io import TRACE_SUFFIX, write_trace
from pulse_focus.utils.synthetic import DEFAULT_TAGS, generate_traces


def main():
    parser = argparse.ArgumentParser(description="Generate synthetic attention traces for PulseFocus")
    parser.add_argument("--count", type=int, default=200, help="Number of traces to generate")
    parser.add_argument("--beta", type=float, default=0.7, help="Per-position decay of image mass (1.0 = uniform)")
    parser.add_argument("--uniform", action="store_true", help="Uniform traces (beta 1, no noise)")
    parser.add_argument("--noise", type=float, default=0.05, help="Relative jitter on each image's mass")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parser.add_argument("--min-images", type=int, default=2, help="Fewest images per trace")
    parser.add_argument("--max-images", type=int, default=6, help="Most images per trace")
    parser.add_argument("--steps", type=int, default=20, help="Decode steps per trace")
    parser.add_argument("--no-tags", action="store_true", help="Leave the tag field empty")
    parser.add_argument("--output-dir", default=None, help="Directory for the trace files")
    args = parser.parse_args()

    beta, noise = (1.0, 0.0) if args.uniform else (args.beta, args.noise)
    out_dir = args.output_dir or os.path.join(Config().output_dir, "synthetic")
    os.makedirs(out_dir, exist_ok=True)

    traces = generate_traces(
        args.count, beta=beta, seed=args.seed, min_images=args.min_images, max_images=args.max_images,
        steps=args.steps, noise=noise, tags=() if args.no_tags else DEFAULT_TAGS,
    )
    width = len(str(max(args.count - 1, 0)))
    for i, trace in enumerate(traces):
        write_trace(trace, os.path.join(out_dir, f"synthetic-{i:0{width}d}{TRACE_SUFFIX}"))

    print(f"Wrote {len(traces)} traces (beta={beta}, noise={noise}) to {out_dir}")
    print("\nAggregate them with:")
    print(f"pulse-focus bias '{out_dir}/*{TRACE_SUFFIX}' --group-by tag")


if __name__ == "__main__":
    main()
