# ABOUTME: Application layer for PulseFocus: builds models and prompts, runs episodes, writes outputs
# ABOUTME: The CLI is a thin wrapper over PulseFocusApp

import glob
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from functools import partial

import numpy as np

from pulse_focus.agents.token_agent import create_agent
from pulse_focus.config import Config, model_config
from pulse_focus.exceptions import ConfigurationError
from pulse_focus.grammar.generator import random_transcript
from pulse_focus.model.prompt import DEFAULT_TEMPLATE, build_prompt
from pulse_focus.model.tokenizer import Tokenizer
from pulse_focus.model.transformer import init_model
from pulse_focus.services import analytics
from pulse_focus.services.controller import BudgetConfig, EpisodeController, Mode
from pulse_focus.services.gating import GateConfig
from pulse_focus.traces import reports
from pulse_focus.traces.trace_io import TRACE_SUFFIX, TRANSCRIPT_SUFFIX, read_trace, write_trace, write_transcript

logger = logging.getLogger(__name__)


def _read_text(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


class PulseFocusApp:
    """Main application class that coordinates model, controller and analytics."""

    def __init__(self, config=None):
        """Initialize the application."""
        self.config = config or Config()
        self.tokenizer = Tokenizer()
        self._models = {}
        logger.debug("PulseFocus application initialized")

    def model_for(self, preset, seed):
        """Build (once) the seeded model for a preset."""
        key = (preset, seed)
        if key not in self._models:
            self._models[key] = init_model(model_config(preset, seed))
        return self._models[key]

    def _controller(self, spec, model, layout, gate_lambda, transcript):
        budget = BudgetConfig(
            plan_max_tokens=spec.plan_max_tokens,
            focus_max_tokens=spec.focus_max_tokens,
            max_cycles=spec.max_cycles,
            total_token_cap=spec.total_token_cap,
        )
        agent = create_agent(self.tokenizer, transcript, temperature=spec.temperature, seed=spec.sample_seed)
        return EpisodeController(
            model, self.tokenizer, layout, GateConfig(gate_lambda), budget, Mode(spec.mode),
            agent=agent, retain_raw=spec.retain_raw, seeds=spec.seeds, tag=spec.tag,
            diagnostic_heads=spec.diagnostic_heads,
        )

    def _prompt(self, spec, model, prompt_seed):
        template = _read_text(spec.template_path) if spec.template_path else DEFAULT_TEMPLATE
        return build_prompt(
            self.tokenizer, template, [spec.image_tokens] * spec.num_images, model.config.vocab_size, prompt_seed,
        )

    def run_episode(self, spec, transcript=None, gate_lambda=None, prompt_seed=None):
        """
        Run one episode for a RunSpec.

        Args:
            spec (RunSpec): Validated run settings
            transcript (str, optional): Script overriding ``spec.scripted_path``
            gate_lambda (float, optional): Overrides ``spec.gate_lambda``
            prompt_seed (int, optional): Overrides ``spec.prompt_seed``

        Returns:
            EpisodeResult: The finished episode
        """
        model = self.model_for(spec.preset, spec.seed)
        if transcript is None and spec.scripted_path:
            transcript = _read_text(spec.scripted_path)
        tokens, layout = self._prompt(spec, model, spec.prompt_seed if prompt_seed is None else prompt_seed)
        lam = spec.gate_lambda if gate_lambda is None else gate_lambda
        controller = self._controller(spec, model, layout, lam, transcript)
        return controller.run(tokens)

    def run(self, spec):
        """
        Run an episode and write ``<name>.trace.jsonl`` and ``<name>.transcript.txt``.

        Returns:
            tuple: (EpisodeResult, mean alignment or None, list of written paths)
        """
        result = self.run_episode(spec)
        out_dir = spec.output_dir or self.config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        trace_path = os.path.join(out_dir, spec.name + TRACE_SUFFIX)
        transcript_path = os.path.join(out_dir, spec.name + TRANSCRIPT_SUFFIX)
        write_trace(result, trace_path)
        write_transcript(result.transcript, transcript_path)
        alignment = _mean_alignment(result.trace)
        return result, alignment, [trace_path, transcript_path]

    def sweep(self, spec, lambdas, episodes):
        """
        Mean focus alignment per gate strength over seeded scripted episodes.

        Each episode uses one script and prompt for every lambda; lift is the
        difference to the same episodes run at lambda 0.

        Returns:
            AnalysisReport: The sweep table (lambda, mean_alignment, lift)
        """
        if episodes <= 0:
            raise ConfigurationError(f"episodes must be positive, got {episodes}")
        if any(lam < 0 for lam in lambdas):
            raise ConfigurationError("Sweep lambdas must be non-negative")
        fixed_script = _read_text(spec.scripted_path) if spec.scripted_path else None
        grid = sorted(set(lambdas) | {0.0})
        per_lambda = {lam: [] for lam in grid}
        for i in range(episodes):
            script = fixed_script
            if script is None:
                rng = np.random.default_rng(spec.sample_seed + i)
                script = random_transcript(
                    rng, max(spec.num_images, 1), cycles=int(rng.integers(1, spec.max_cycles + 1)),
                    max_words=8, end=False,
                )
            for lam in grid:
                result = self.run_episode(spec, transcript=script, gate_lambda=lam, prompt_seed=spec.prompt_seed + i)
                per_lambda[lam].append(_mean_alignment(result.trace))
        points = []
        base = _nanmean(per_lambda[0.0])
        for lam in sorted(set(lambdas)):
            mean = _nanmean(per_lambda[lam])
            lift = None if mean is None or base is None else mean - base
            points.append((float(lam), mean, lift))
            logger.info(f"lambda={lam}: mean alignment {mean}, lift {lift}")
        return reports.sweep_report(points)

    def analyze(self, path, analyses, threshold=None, baseline_path=None, pulse_z=None):
        threshold = self.config.diffuse_threshold if threshold is None else threshold
        pulse_z = self.config.pulse_z if pulse_z is None else pulse_z
        baseline = read_trace(baseline_path, source="replay") if baseline_path else None
        return reports.replay(path, analyses, threshold=threshold, baseline=baseline, z=pulse_z)

    def bias(self, patterns, grouping="none", workers=1):
        """Positional bias over every trace matched by ``patterns``, loaded in sorted path order."""
        paths = sorted({p for pattern in patterns for p in glob.glob(pattern)})
        if not paths:
            raise ConfigurationError(f"No trace files match {list(patterns)}")
        if grouping not in analytics.GROUPINGS:
            raise ConfigurationError(f"Unknown grouping '{grouping}'")
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            traces = list(pool.map(partial(read_trace, source="replay"), paths))
        report = analytics.positional_bias(
            traces, grouping=analytics.GROUPINGS[grouping], workers=workers, grouping_name=grouping,
        )
        return reports.bias_report(report), paths

    def plot_data(self, path):
        trace = read_trace(path, source="replay")
        return reports.plot_data_report(trace, analytics.pulse_series(trace))


def _mean_alignment(trace):
    if not trace.has_annotations:
        logger.warning("Episode produced no annotated steps; alignment is empty")
        return None
    return analytics.focus_alignment(trace).mean_alignment


def _nanmean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None
