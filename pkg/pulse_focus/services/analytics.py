# ABOUTME: Attention analytics over traces: per-image mass series, positional bias, colouring
# ABOUTME: Also focus alignment, pulse detection and the raw-row reduction check

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pulse_focus.exceptions import AnalyticsError, ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_DIFFUSE_THRESHOLD = 0.5
DEFAULT_PULSE_Z = 2.0
BIAS_FILTER_NOTE = "position j statistics use only traces with at least j images"


@dataclass
class PulseSeries:
    """``mass[k, j-1]`` is the attention mass of step k on image j."""

    mass: np.ndarray
    text_mass: np.ndarray

    @property
    def num_steps(self):
        return self.mass.shape[0]

    @property
    def num_images(self):
        return self.mass.shape[1]

    @property
    def image_total(self):
        return self.mass.sum(axis=1)


@dataclass(frozen=True)
class ColouringRecord:
    step: int
    token: str
    dominant: int
    ratio: float
    diffuse: bool


@dataclass(frozen=True)
class BlockAlignment:
    block: int
    focus: tuple
    start_step: int
    end_step: int
    steps: int
    alignment: float
    dominant: int
    misaligned: bool


@dataclass
class FocusAlignmentReport:
    blocks: list = field(default_factory=list)
    mean_alignment: float = None
    baseline_delta: float = None


@dataclass(frozen=True)
class BiasRow:
    position: int
    mean: float
    std: float
    n: int
    groups: int


@dataclass
class PositionalBiasReport:
    rows: list
    grouping: str = None
    note: str = BIAS_FILTER_NOTE


@dataclass(frozen=True)
class Pulse:
    step: int
    image_mass: float
    dominant: int
    focus: tuple
    aligned: bool


@dataclass(frozen=True)
class ReductionCheck:
    max_abs_diff: float
    tolerance: float

    @property
    def ok(self):
        return self.max_abs_diff <= self.tolerance


def select_diagnostic_layers(num_layers):
    """Layers at 0%, 50% and 100% depth: {0, floor((L-1)/2), L-1}."""
    if num_layers < 1:
        raise ConfigurationError(f"num_layers must be at least 1, got {num_layers}")
    return sorted({0, (num_layers - 1) // 2, num_layers - 1})


def _row_masses(row, layout):
    owner = layout.position_images
    prompt_len = layout.total_len
    if len(row) < prompt_len:
        raise AnalyticsError(f"Row of length {len(row)} is shorter than the prompt ({prompt_len})")
    sums = np.bincount(owner, weights=row[:prompt_len], minlength=layout.num_images + 1)
    images = sums[1:]
    return images, float(row.sum()) - float(images.sum())


def pulse_series(trace):
    """
    Per-step, per-image attention mass a[k][j] and the text complement.

    Raises:
        AnalyticsError: If a row length does not match its step index
    """
    n_images = trace.num_images
    mass = np.zeros((len(trace.steps), n_images))
    text_mass = np.zeros(len(trace.steps))
    for k, step in enumerate(trace.steps):
        if step.row is not None:
            row = np.asarray(step.row, dtype=np.float64)
            if len(row) != trace.expected_row_len(step.step):
                raise AnalyticsError(
                    f"Step {step.step} row has {len(row)} entries, expected {trace.expected_row_len(step.step)}"
                )
            mass[k], text_mass[k] = _row_masses(row, trace.layout)
        else:
            if len(step.image_mass) != n_images:
                raise AnalyticsError(f"Step {step.step} carries mass for {len(step.image_mass)} images")
            mass[k] = step.image_mass
            text_mass[k] = step.text_mass
    return PulseSeries(mass=mass, text_mass=text_mass)


def _dominant(masses):
    total = float(masses.sum())
    if total <= 0.0:
        return None, 0.0
    j = int(np.argmax(masses))
    return j + 1, float(masses[j]) / total


def colouring(trace, threshold=DEFAULT_DIFFUSE_THRESHOLD, series=None):
    """
    Dominant image per step and how strongly it dominates the image-directed mass.

    A step is diffuse when the dominance ratio is below ``threshold``; steps
    with no image mass have no dominant image and count as diffuse.
    """
    if not 0.0 <= threshold <= 1.0:
        raise AnalyticsError(f"Diffuse threshold must lie in [0, 1], got {threshold}")
    series = series if series is not None else pulse_series(trace)
    records = []
    for k, step in enumerate(trace.steps):
        dominant, ratio = _dominant(series.mass[k])
        records.append(ColouringRecord(
            step=step.step, token=step.token, dominant=dominant, ratio=ratio,
            diffuse=dominant is None or ratio < threshold,
        ))
    return records


def _block_steps(trace):
    blocks = {}
    for k, step in enumerate(trace.steps):
        if step.in_focus_body:
            blocks.setdefault((step.block, tuple(step.focus)), []).append(k)
    return blocks


def _mean_alignment(report_or_trace):
    if isinstance(report_or_trace, FocusAlignmentReport):
        return report_or_trace.mean_alignment
    return focus_alignment(report_or_trace).mean_alignment


def focus_alignment(trace, baseline=None, series=None):
    """
    Mean share of image-directed mass landing on the focused images, per focus block.

    Steps without image mass are skipped. ``baseline`` (a trace or a report)
    fills ``baseline_delta`` with this trace's mean minus the baseline's.

    Raises:
        AnalyticsError: If the trace carries no block annotations
    """
    if not trace.has_annotations:
        raise AnalyticsError("Alignment needs block annotations; this trace has none")
    series = series if series is not None else pulse_series(trace)
    report = FocusAlignmentReport()
    for (block, focus), indices in _block_steps(trace).items():
        fractions = []
        dominants = []
        for k in indices:
            masses = series.mass[k]
            total = float(masses.sum())
            if total <= 0.0:
                continue
            fractions.append(sum(float(masses[j - 1]) for j in focus) / total)
            dominants.append(_dominant(masses)[0])
        if not fractions:
            continue
        counts = Counter(dominants)
        dominant = min(counts, key=lambda j: (-counts[j], j))
        report.blocks.append(BlockAlignment(
            block=block,
            focus=focus,
            start_step=trace.steps[indices[0]].step,
            end_step=trace.steps[indices[-1]].step,
            steps=len(fractions),
            alignment=float(np.mean(fractions)),
            dominant=dominant,
            misaligned=dominant not in focus,
        ))
    if report.blocks:
        report.mean_alignment = float(np.mean([b.alignment for b in report.blocks]))
    if baseline is not None:
        base = _mean_alignment(baseline)
        if report.mean_alignment is not None and base is not None:
            report.baseline_delta = report.mean_alignment - base
    logger.debug(f"Alignment over {len(report.blocks)} focus blocks: {report.mean_alignment}")
    return report


def _time_average(trace):
    if trace.num_images < 2:
        raise AnalyticsError(f"Positional bias needs at least 2 images per trace, got {trace.num_images}")
    if not trace.steps:
        raise AnalyticsError("Positional bias needs traces with at least one step")
    return pulse_series(trace).mass.mean(axis=0)


GROUPINGS = {
    "none": None,
    "tag": lambda trace: trace.metadata.tag,
    "mode": lambda trace: trace.metadata.mode,
    "num-images": lambda trace: trace.num_images,
}


def positional_bias(traces, grouping=None, workers=1, grouping_name=None):
    """
    Mean and spread of time-averaged attention mass per image position.

    Args:
        traces (list): AttentionTraces, each with N >= 2
        grouping (callable, optional): Key function; std is taken across group
            means when given, across traces otherwise
        workers (int): Threads used to reduce traces; output does not depend on it
        grouping_name (str, optional): Label stored in the report

    Returns:
        PositionalBiasReport: One row per position 1..max N

    Raises:
        AnalyticsError: On empty input or a trace with fewer than 2 images
    """
    traces = list(traces)
    if not traces:
        raise AnalyticsError("Positional bias needs at least one trace")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        profiles = list(pool.map(_time_average, traces))
    keys = [grouping(trace) if grouping is not None else index for index, trace in enumerate(traces)]

    rows = []
    for j in range(1, max(len(p) for p in profiles) + 1):
        values = []
        by_group = {}
        for key, profile in zip(keys, profiles):
            if len(profile) >= j:
                values.append(profile[j - 1])
                by_group.setdefault(key, []).append(profile[j - 1])
        group_means = [float(np.mean(group)) for group in by_group.values()]
        spread = np.std(values) if grouping is None else np.std(group_means)
        rows.append(BiasRow(
            position=j, mean=float(np.mean(values)), std=float(spread), n=len(values), groups=len(by_group),
        ))
    logger.info(f"Positional bias over {len(traces)} traces, {len(rows)} positions")
    return PositionalBiasReport(rows=rows, grouping=grouping_name)


def detect_pulses(series, trace=None, z=DEFAULT_PULSE_Z):
    """
    Steps whose total image mass spikes above mean + z * std of the episode.

    When ``trace`` carries annotations, each pulse inside a focus body records
    the focus and whether its dominant image is one of the focused images.
    """
    totals = series.image_total
    if len(totals) == 0:
        return []
    spread = float(np.std(totals))
    if spread == 0.0:
        return []
    threshold = float(np.mean(totals)) + z * spread
    pulses = []
    for k in np.flatnonzero(totals > threshold):
        dominant, _ = _dominant(series.mass[k])
        focus = None
        step_index = int(k)
        if trace is not None:
            step = trace.steps[k]
            step_index = step.step
            if step.in_focus_body:
                focus = tuple(step.focus)
        pulses.append(Pulse(
            step=step_index,
            image_mass=float(totals[k]),
            dominant=dominant,
            focus=focus,
            aligned=None if focus is None else dominant in focus,
        ))
    return pulses


def scatter_score(pulses):
    """Fraction of in-focus pulses whose dominant image is not focused; None without any."""
    in_focus = [pulse for pulse in pulses if pulse.focus is not None]
    if not in_focus:
        return None
    return sum(1 for pulse in in_focus if not pulse.aligned) / len(in_focus)


def verify_reduction(trace, tol=1e-9):
    """
    Recompute per-image mass from retained raw rows and compare with the reduced rows.

    Returns None (and logs a notice) when the trace kept no raw rows.
    """
    if not trace.has_raw or not trace.has_rows:
        logger.warning("Trace has no raw per-layer rows; reduction check skipped")
        return None
    heads = trace.metadata.heads
    worst = 0.0
    for step in trace.steps:
        raw = np.asarray(step.raw, dtype=np.float64)
        if heads is not None:
            raw = raw[:, list(heads), :]
        direct, _ = _row_masses(raw.mean(axis=(0, 1)), trace.layout)
        reduced, _ = _row_masses(np.asarray(step.row, dtype=np.float64), trace.layout)
        worst = max(worst, float(np.max(np.abs(direct - reduced), initial=0.0)))
    return ReductionCheck(max_abs_diff=worst, tolerance=tol)
