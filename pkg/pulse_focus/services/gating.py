# ABOUTME: Soft attention-logit gating for focus blocks plus its closed-form oracle
# ABOUTME: Non-focused image positions get a -lambda logit offset; text is never gated

import logging
import math
from dataclasses import dataclass

import numpy as np

from pulse_focus.exceptions import GateError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 2.0


@dataclass(frozen=True)
class GateConfig:
    """Gate strength; ``lam == 0`` turns gating into a no-op."""

    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if math.isnan(self.lam) or self.lam < 0:
            raise GateError(f"Gate strength must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class FocusSet:
    """Currently focused image indices (1-based)."""

    indices: frozenset

    def __post_init__(self):
        object.__setattr__(self, "indices", frozenset(int(j) for j in self.indices))
        if not self.indices:
            raise GateError("Focus set must not be empty")

    @classmethod
    def of(cls, *indices):
        return cls(frozenset(indices))

    def check(self, layout):
        for j in sorted(self.indices):
            layout.check_image_index(j)

    def __iter__(self):
        return iter(sorted(self.indices))

    def __len__(self):
        return len(self.indices)

    def __contains__(self, j):
        return j in self.indices


@dataclass(frozen=True)
class GateVector:
    """
    Additive pre-softmax offsets over the attended positions.

    Entries are 0 on text, generated tokens and focused images, and ``-lam`` on
    the other images' tokens. Usable anywhere an array is expected.
    """

    offsets: np.ndarray
    focus: FocusSet
    lam: float

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.offsets
        return self.offsets.astype(dtype)

    def __len__(self):
        return len(self.offsets)

    @property
    def is_identity(self):
        return not np.any(self.offsets)


def _as_focus(focus):
    if isinstance(focus, FocusSet):
        return focus
    return FocusSet(frozenset(focus))


def _unfocused_image_mask(layout, focus, length):
    images = [j for j in range(1, layout.num_images + 1) if j not in focus]
    return layout.image_mask(images, length)


def build_gate(layout, focus, config, attended_len):
    """
    Build the gate vector for one decode step.

    Args:
        layout (TokenLayout): Prompt layout; positions past it count as text
        focus (FocusSet or iterable): Focused image indices
        config (GateConfig): Gate strength
        attended_len (int): Number of positions the query attends to

    Returns:
        GateVector: Offsets of length ``attended_len``

    Raises:
        LayoutError: If a focus index is outside 1..N
    """
    focus = _as_focus(focus)
    focus.check(layout)
    if attended_len < 0:
        raise GateError(f"attended_len must be non-negative, got {attended_len}")
    offsets = np.zeros(attended_len, dtype=np.float64)
    if config.lam > 0:
        offsets[_unfocused_image_mask(layout, focus, attended_len)] = -config.lam
    logger.debug(f"Built gate F={sorted(focus.indices)} lam={config.lam} len={attended_len}")
    return GateVector(offsets=offsets, focus=focus, lam=config.lam)


def gated_distribution_oracle(baseline, layout, focus, lam):
    """
    Closed-form softmax result of adding the gate to the logits of ``baseline``.

    alpha'_p = alpha_p * exp(-lam * [p unfocused image]) / Z, with
    Z = 1 - (1 - exp(-lam)) * M and M the baseline mass on unfocused images.

    Raises:
        GateError: If ``baseline`` does not sum to 1 within 1e-9, or all mass
            sits on unfocused images under an infinite gate
    """
    baseline = np.asarray(baseline, dtype=np.float64)
    if math.isnan(lam) or lam < 0:
        raise GateError(f"Gate strength must be non-negative, got {lam}")
    if baseline.ndim != 1 or np.any(baseline < 0) or abs(float(baseline.sum()) - 1.0) > 1e-9:
        raise GateError("Baseline row must be a non-negative distribution summing to 1 within 1e-9")
    focus = _as_focus(focus)
    focus.check(layout)
    if lam == 0:
        return baseline.copy()
    mask = _unfocused_image_mask(layout, focus, len(baseline))
    unfocused = float(baseline[mask].sum())
    keep = math.exp(-lam)
    z = 1.0 - (1.0 - keep) * unfocused
    if z <= 0.0:
        raise GateError("All baseline mass is on unfocused images; gated distribution is undefined")
    gated = baseline / z
    gated[mask] = baseline[mask] * keep / z
    return gated


def focus_mass(row, layout, j):
    """Attention mass a_j: the sum of ``row`` over image j's positions."""
    layout.check_image_index(j)
    segment = layout.image_segment(j)
    row = np.asarray(row, dtype=np.float64)
    if segment.start >= len(row):
        return 0.0
    return float(row[segment.start:min(segment.end, len(row))].sum())


def focused_mass(row, layout, focus):
    """Total mass on the focused images."""
    return sum(focus_mass(row, layout, j) for j in _as_focus(focus))

