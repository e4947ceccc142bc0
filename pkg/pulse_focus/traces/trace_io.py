# ABOUTME: Reads and writes attention traces as versioned JSON Lines files
# ABOUTME: One header record, then one record per decode step; errors report the line number

import json
import logging
import os
from dataclasses import replace

import numpy as np

from pulse_focus.exceptions import LayoutError, TraceFormatError
from pulse_focus.model.layout import TokenLayout
from pulse_focus.traces.models import SCHEMA_VERSION, AttentionTrace, TraceMetadata, TraceStep

logger = logging.getLogger(__name__)

TRACE_SUFFIX = ".trace.jsonl"
TRANSCRIPT_SUFFIX = ".transcript.txt"
SIZE_WARNING_BYTES = 1 << 30
SUPPORTED_MAJOR = SCHEMA_VERSION.split(".")[0]


def _floats(values):
    return [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]


def header_record(trace):
    meta = trace.metadata
    return {
        "record": "header",
        "schema_version": SCHEMA_VERSION,
        "layout": trace.layout.to_list(),
        "num_images": trace.num_images,
        "prompt_len": trace.prompt_len,
        "lambda": meta.lam,
        "mode": meta.mode,
        "model_digest": meta.model_digest,
        "selected_layers": list(meta.selected_layers),
        "heads": list(meta.heads) if meta.heads is not None else None,
        "seeds": dict(meta.seeds),
        "tag": meta.tag,
        "source": meta.source,
    }


def step_record(step):
    record = {
        "record": "step",
        "step": step.step,
        "token": step.token,
        "mode": step.mode,
        "focus": list(step.focus) if step.focus is not None else None,
        "block": step.block,
        "delimiter": step.delimiter,
        "injected": step.injected,
    }
    if step.row is not None:
        record["row"] = _floats(step.row)
    else:
        record["image_mass"] = _floats(step.image_mass)
        record["text_mass"] = float(step.text_mass)
    if step.raw is not None:
        record["raw"] = np.asarray(step.raw, dtype=np.float64).tolist()
    return record


def write_trace(result, path):
    """
    Write an episode's trace (or a bare AttentionTrace) to ``path``.

    Args:
        result (EpisodeResult or AttentionTrace): What to write
        path (str): Destination, conventionally ``*.trace.jsonl``
    """
    trace = getattr(result, "trace", result)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header_record(trace)) + "\n")
        for step in trace.steps:
            f.write(json.dumps(step_record(step)) + "\n")
    size = os.path.getsize(path)
    if size > SIZE_WARNING_BYTES:
        logger.warning(f"Trace file {path} is {size} bytes (over 1 GB)")
    logger.info(f"Wrote {len(trace.steps)} steps to {path}")


def write_transcript(transcript, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(transcript)
    logger.info(f"Wrote transcript to {path}")


def _require(record, key, line):
    if key not in record:
        raise TraceFormatError(f"Missing field '{key}'", line)
    return record[key]


def _parse_header(record, line):
    if record.get("record") != "header":
        raise TraceFormatError("First record must be the header", line)
    version = str(_require(record, "schema_version", line))
    if version.split(".")[0] != SUPPORTED_MAJOR:
        raise TraceFormatError(f"Unsupported schema_version {version}; this reader handles {SCHEMA_VERSION}", line)
    try:
        layout = TokenLayout.from_list(_require(record, "layout", line))
    except (LayoutError, IndexError, TypeError, ValueError) as e:
        raise TraceFormatError(f"Invalid layout: {e}", line) from e
    num_images = record.get("num_images", layout.num_images)
    if num_images != layout.num_images:
        raise TraceFormatError(
            f"Header declares {num_images} images but the layout has {layout.num_images}", line
        )
    prompt_len = record.get("prompt_len", layout.total_len)
    if prompt_len != layout.total_len:
        raise TraceFormatError(f"prompt_len {prompt_len} disagrees with layout length {layout.total_len}", line)
    heads = record.get("heads")
    metadata = TraceMetadata(
        lam=record.get("lambda"),
        mode=record.get("mode"),
        seeds=dict(record.get("seeds") or {}),
        model_digest=record.get("model_digest"),
        selected_layers=tuple(record.get("selected_layers") or ()),
        heads=tuple(heads) if heads is not None else None,
        schema_version=version,
        tag=record.get("tag"),
        source=record.get("source", "live"),
    )
    return layout, metadata


def _array(record, key, line):
    value = record.get(key)
    if value is None:
        return None
    try:
        return np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise TraceFormatError(f"Field '{key}' is not numeric", line) from e


def _parse_step(record, line):
    if record.get("record") == "header":
        raise TraceFormatError("A trace has exactly one header", line)
    if record.get("record") != "step":
        raise TraceFormatError(f"Unknown record type {record.get('record')!r}", line)
    focus = record.get("focus")
    text_mass = record.get("text_mass")
    return TraceStep(
        step=_require(record, "step", line),
        token=record.get("token", ""),
        mode=record.get("mode"),
        focus=tuple(focus) if focus is not None else None,
        block=record.get("block"),
        delimiter=bool(record.get("delimiter", False)),
        injected=bool(record.get("injected", False)),
        row=_array(record, "row", line),
        image_mass=_array(record, "image_mass", line),
        text_mass=float(text_mass) if text_mass is not None else None,
        raw=_array(record, "raw", line),
    )


def read_trace(path, source=None):
    """
    Read a trace file.

    Args:
        path (str): A ``*.trace.jsonl`` file
        source (str, optional): Overrides the header's source tag (e.g. "replay")

    Returns:
        AttentionTrace: The validated trace

    Raises:
        TraceFormatError: On unsupported versions or malformed/inconsistent records
    """
    size = os.path.getsize(path)
    if size > SIZE_WARNING_BYTES:
        logger.warning(f"Trace file {path} is {size} bytes (over 1 GB)")
    trace = None
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"Invalid JSON: {e.msg}", line_number) from e
            if not isinstance(record, dict):
                raise TraceFormatError("Record is not a JSON object", line_number)
            if trace is None:
                layout, metadata = _parse_header(record, line_number)
                if source is not None:
                    metadata = replace(metadata, source=source)
                trace = AttentionTrace(layout=layout, metadata=metadata)
                continue
            step = _parse_step(record, line_number)
            try:
                trace.check_step(step, len(trace.steps))
            except TraceFormatError as e:
                raise TraceFormatError(e.message, line_number) from e
            trace.steps.append(step)
    if trace is None:
        raise TraceFormatError(f"{path} has no header record")
    logger.info(f"Read {len(trace.steps)} steps from {path}")
    return trace
