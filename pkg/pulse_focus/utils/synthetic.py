# ABOUTME: Synthetic attention traces with a planted per-position image bias
# ABOUTME: Image j receives mass proportional to beta**(j-1); beta=1 with no noise gives uniform traces

import logging

import numpy as np

from pulse_focus.exceptions import ConfigurationError
from pulse_focus.model.layout import TokenLayout
from pulse_focus.traces.models import AttentionTrace, TraceMetadata, TraceStep

logger = logging.getLogger(__name__)

DEFAULT_TAGS = ("counting", "ordering", "matching", "retrieval")


def planted_bias_trace(rng, num_images, beta=0.7, steps=20, image_len=4, text_len=4,
                       base_mass=0.15, noise=0.05, tag=None):
    """
    One trace whose image j gets ``base_mass * beta**(j-1)`` per step, jittered by ``noise``.

    Mass is spread evenly over each image's tokens; the rest goes evenly to
    text and generated positions.
    """
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    shares = base_mass * beta ** np.arange(num_images)
    if shares.sum() * (1.0 + noise) >= 1.0:
        raise ConfigurationError("Planted image mass leaves nothing for text positions")
    layout = TokenLayout.from_lengths([("text", text_len)] + [("image", image_len)] * num_images)
    owner = layout.position_images
    trace_steps = []
    for k in range(steps):
        length = layout.total_len + k + 1
        jitter = 1.0 + noise * rng.uniform(-1.0, 1.0, size=num_images)
        image_mass = shares * jitter
        row = np.empty(length)
        text_positions = length - num_images * image_len
        row[:] = (1.0 - image_mass.sum()) / text_positions
        for j in range(1, num_images + 1):
            row[:layout.total_len][owner == j] = image_mass[j - 1] / image_len
        trace_steps.append(TraceStep(step=k, row=row))
    metadata = TraceMetadata(mode="synthetic", tag=tag, source="synthetic")
    return AttentionTrace(layout=layout, steps=trace_steps, metadata=metadata)


def generate_traces(count, beta=0.7, seed=0, min_images=2, max_images=6, steps=20, noise=0.05,
                    tags=DEFAULT_TAGS):
    """
    ``count`` planted-bias traces with image counts drawn from [min_images, max_images].

    Tags cycle through ``tags`` so grouped aggregation has several groups.
    """
    if min_images < 2 or max_images < min_images:
        raise ConfigurationError(f"Invalid image range [{min_images}, {max_images}]")
    rng = np.random.default_rng(seed)
    traces = []
    for i in range(count):
        num_images = int(rng.integers(min_images, max_images + 1))
        traces.append(planted_bias_trace(
            rng, num_images, beta=beta, steps=steps, noise=noise, tag=tags[i % len(tags)] if tags else None,
        ))
    logger.info(f"Generated {count} synthetic traces (beta={beta}, seed={seed})")
    return traces
