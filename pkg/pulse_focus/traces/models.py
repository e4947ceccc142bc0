# ABOUTME: In-memory attention trace: per-decode-step reduced rows plus block annotations
# ABOUTME: Shared by live episodes and traces replayed from disk

import logging
from dataclasses import dataclass, field

import numpy as np

from pulse_focus.exceptions import TraceFormatError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class TraceMetadata:
    """Run-level facts recorded in the trace header."""

    lam: float = None
    mode: str = None
    seeds: dict = field(default_factory=dict)
    model_digest: str = None
    selected_layers: tuple = ()
    heads: tuple = None
    schema_version: str = SCHEMA_VERSION
    tag: str = None
    source: str = "live"


@dataclass
class TraceStep:
    """
    One decode step.

    ``mode`` is the block annotation ("plan", "focus", "answer", "outside",
    "terminated" or "free"); it is None for traces recorded without one.
    ``delimiter`` marks tokens that belong to a block tag. Either ``row`` (the
    reduced attention row) or ``image_mass`` plus ``text_mass`` is present.
    """

    step: int
    token: str = ""
    mode: str = None
    focus: tuple = None
    block: int = None
    delimiter: bool = False
    injected: bool = False
    row: np.ndarray = None
    image_mass: np.ndarray = None
    text_mass: float = None
    raw: np.ndarray = None

    @property
    def has_row(self):
        return self.row is not None

    @property
    def in_focus_body(self):
        return self.mode == "focus" and not self.delimiter and bool(self.focus)


@dataclass
class AttentionTrace:
    layout: object
    steps: list = field(default_factory=list)
    metadata: TraceMetadata = field(default_factory=TraceMetadata)

    @property
    def prompt_len(self):
        return self.layout.total_len

    @property
    def num_images(self):
        return self.layout.num_images

    @property
    def has_rows(self):
        return bool(self.steps) and all(step.has_row for step in self.steps)

    @property
    def has_raw(self):
        return bool(self.steps) and all(step.raw is not None for step in self.steps)

    @property
    def has_annotations(self):
        return any(step.mode is not None for step in self.steps)

    def expected_row_len(self, step_index):
        """The query at step k attends to the prompt, the k earlier tokens and itself."""
        return self.prompt_len + step_index + 1

    def check_step(self, step, expected_index):
        """
        Check one step against the trace invariants.

        Raises:
            TraceFormatError: On a gap in step indices or an inconsistent row/mass length
        """
        if step.step != expected_index:
            raise TraceFormatError(f"Expected step {expected_index}, found step {step.step}")
        if step.row is None and step.image_mass is None:
            raise TraceFormatError(f"Step {step.step} has neither a row nor per-image mass")
        if step.row is not None and len(step.row) != self.expected_row_len(step.step):
            raise TraceFormatError(
                f"Step {step.step} row has {len(step.row)} entries, "
                f"expected {self.expected_row_len(step.step)}"
            )
        if step.image_mass is not None:
            if len(step.image_mass) != self.num_images:
                raise TraceFormatError(
                    f"Step {step.step} carries mass for {len(step.image_mass)} images, "
                    f"header declares {self.num_images}"
                )
            if step.text_mass is None:
                raise TraceFormatError(f"Step {step.step} has image_mass but no text_mass")

    def validate(self):
        for index, step in enumerate(self.steps):
            self.check_step(step, index)
        return self
