# ABOUTME: Turns analytics results into CSV tables and a plain-text summary
# ABOUTME: Live episodes and replayed trace files go through the same analyze_trace path

import csv
import io
import logging
import os

from pulse_focus.exceptions import AnalyticsError
from pulse_focus.services import analytics
from pulse_focus.traces.trace_io import read_trace
from pulse_focus.utils.numeric import format_float

logger = logging.getLogger(__name__)

ANALYSES = ("pulse", "colouring", "alignment", "pulses", "verify")


class AnalysisReport:
    """A named table plus the metadata and notes that go into the text summary."""

    def __init__(self, name, columns, rows, source=None, metadata=None, notes=None):
        self.name = name
        self.columns = list(columns)
        self.rows = list(rows)
        self.source = source
        self.metadata = dict(metadata or {})
        self.notes = list(notes or [])

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_cell(value) for value in row])
        return buffer.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())
        logger.info(f"Wrote {self.name} report to {path}")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (tuple, list)):
        return ";".join(str(v) for v in value)
    if hasattr(value, "dtype"):
        return format_float(value) if value.dtype.kind == "f" else str(value)
    return str(value)


def pulse_report(trace, series):
    columns = ["step"] + [f"image_{j}" for j in range(1, trace.num_images + 1)] + ["text_mass"]
    rows = []
    for k, step in enumerate(trace.steps):
        rows.append([step.step] + [float(m) for m in series.mass[k]] + [float(series.text_mass[k])])
    return AnalysisReport("pulse", columns, rows)


def colouring_report(records, threshold):
    rows = [[r.step, r.token, r.dominant, r.ratio, r.diffuse] for r in records]
    return AnalysisReport(
        "colouring", ["step", "token", "dominant", "ratio", "diffuse"], rows,
        metadata={"diffuse_threshold": format_float(threshold)},
    )


def alignment_report(report):
    columns = ["block", "focus", "start_step", "end_step", "steps", "alignment", "dominant", "misaligned"]
    rows = [
        [b.block, b.focus, b.start_step, b.end_step, b.steps, b.alignment, b.dominant, b.misaligned]
        for b in report.blocks
    ]
    metadata = {"mean_alignment": format_float(report.mean_alignment)}
    if report.baseline_delta is not None:
        metadata["baseline_delta"] = format_float(report.baseline_delta)
    notes = [] if report.blocks else ["trace has no focus blocks"]
    return AnalysisReport("alignment", columns, rows, metadata=metadata, notes=notes)


def pulses_report(pulses):
    rows = [[p.step, p.image_mass, p.dominant, p.focus, p.aligned] for p in pulses]
    score = analytics.scatter_score(pulses)
    return AnalysisReport(
        "pulses", ["step", "image_mass", "dominant", "focus", "aligned"], rows,
        metadata={"pulses": str(len(pulses)), "scatter_score": format_float(score)},
    )


def reduction_report(check):
    if check is None:
        return AnalysisReport(
            "verify", ["max_abs_diff", "tolerance", "ok"], [],
            notes=["trace has no raw per-layer rows; reduction check skipped"],
        )
    return AnalysisReport(
        "verify", ["max_abs_diff", "tolerance", "ok"], [[check.max_abs_diff, check.tolerance, check.ok]],
    )


def bias_report(report):
    rows = [[r.position, r.mean, r.std, r.n] for r in report.rows]
    groups = ";".join(str(r.groups) for r in report.rows)
    return AnalysisReport(
        "bias", ["position", "mean", "std", "n"], rows,
        metadata={"grouping": report.grouping or "none", "groups_per_position": groups},
        notes=[report.note],
    )


def plot_data_report(trace, series):
    """Long-format per-step, per-image mass for plotting pulse curves."""
    rows = []
    for k, step in enumerate(trace.steps):
        for j in range(1, trace.num_images + 1):
            rows.append([step.step, j, float(series.mass[k, j - 1]), step.mode, step.focus, step.block])
    return AnalysisReport("plot_data", ["step", "image", "mass", "mode", "focus", "block"], rows)


def sweep_report(points):
    """``points`` is a list of (lambda, mean_alignment, lift) tuples."""
    return AnalysisReport("sweep", ["lambda", "mean_alignment", "lift"], [list(p) for p in points])


def analyze_trace(trace, analyses=("pulse",), threshold=analytics.DEFAULT_DIFFUSE_THRESHOLD,
                  baseline=None, source=None, z=analytics.DEFAULT_PULSE_Z):
    """
    Run the requested analyses on one trace.

    Args:
        trace (AttentionTrace): Live or replayed trace
        analyses (iterable): Names from ``ANALYSES``
        threshold (float): Diffuse threshold for colouring
        z (float): Spike threshold for pulses, in standard deviations above the mean
        baseline (AttentionTrace, optional): Trace to compare alignment against
        source (str, optional): Source tag; defaults to the trace's own

    Returns:
        dict: Report name -> AnalysisReport, in ``ANALYSES`` order

    Raises:
        AnalyticsError: For unknown analyses or alignment without block annotations
    """
    requested = set(analyses)
    unknown = requested - set(ANALYSES)
    if unknown:
        raise AnalyticsError(f"Unknown analyses: {sorted(unknown)}")
    source = source or trace.metadata.source
    series = analytics.pulse_series(trace)
    reports = {}
    for name in ANALYSES:
        if name not in requested:
            continue
        if name == "pulse":
            report = pulse_report(trace, series)
        elif name == "colouring":
            report = colouring_report(analytics.colouring(trace, threshold, series=series), threshold)
        elif name == "alignment":
            report = alignment_report(analytics.focus_alignment(trace, baseline=baseline, series=series))
        elif name == "pulses":
            report = pulses_report(analytics.detect_pulses(series, trace, z=z))
        else:
            report = reduction_report(analytics.verify_reduction(trace))
        report.source = source
        reports[name] = report
    return reports


def replay(path, analyses=("pulse",), **kwargs):
    """Load a trace file and analyze it exactly as a live episode would be."""
    trace = read_trace(path, source="replay")
    return analyze_trace(trace, analyses, source="replay", **kwargs)


def summary_text(reports, title=None):
    """Structured text summary: one section per report with its source, metadata and notes."""
    lines = []
    if title:
        lines.append(f"# {title}")
    for report in reports.values():
        lines.append(f"[{report.name}]")
        lines.append(f"source = {report.source or 'live'}")
        lines.append(f"rows = {len(report.rows)}")
        for key, value in report.metadata.items():
            lines.append(f"{key} = {value}")
        for note in report.notes:
            lines.append(f"note = {note}")
        lines.append("")
    return "\n".join(lines)


def write_reports(reports, out_dir, stem, title=None):
    """
    Write ``<stem>.<name>.csv`` for each report and ``<stem>.report.txt``.

    Returns:
        list: Paths written
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for report in reports.values():
        path = os.path.join(out_dir, f"{stem}.{report.name}.csv")
        report.write_csv(path)
        paths.append(path)
    summary_path = os.path.join(out_dir, f"{stem}.report.txt")
    with open(summary_path, "w", encoding="utf-8", newline="") as f:
        f.write(summary_text(reports, title))
    paths.append(summary_path)
    return paths
