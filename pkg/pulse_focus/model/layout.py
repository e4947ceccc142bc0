# ABOUTME: Token layout of a multi-image prompt: text spans and per-image visual spans
# ABOUTME: Houses the position sets S_j used by attention mass reduction and gating

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from pulse_focus.exceptions import LayoutError

logger = logging.getLogger(__name__)


class SegmentKind(str, Enum):
    TEXT = "text"
    IMAGE = "image"


@dataclass(frozen=True)
class Segment:
    """A contiguous run of positions [start, end) holding text or one image's tokens."""

    kind: SegmentKind
    start: int
    end: int
    image: int = None

    @property
    def length(self):
        return self.end - self.start

    def to_list(self):
        if self.kind is SegmentKind.IMAGE:
            return ["image", self.image, self.start, self.end]
        return ["text", self.start, self.end]


@dataclass(frozen=True)
class TokenLayout:
    """
    Position map of a prompt.

    Segments are contiguous, non-overlapping and cover [0, total_len). Image
    indices run 1..N and each appears in exactly one segment. Positions past
    ``total_len`` (generated tokens) are treated as text everywhere.
    """

    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        cursor = 0
        seen = []
        for segment in self.segments:
            if segment.start != cursor:
                raise LayoutError(
                    f"Segment {segment} does not start at {cursor}; segments must be contiguous"
                )
            if segment.end < segment.start:
                raise LayoutError(f"Segment {segment} has negative length")
            if segment.kind is SegmentKind.IMAGE:
                if segment.image is None:
                    raise LayoutError(f"Image segment at {segment.start} has no image index")
                seen.append(segment.image)
            cursor = segment.end
        if sorted(seen) != list(range(1, len(seen) + 1)):
            raise LayoutError(f"Image indices must be exactly 1..N once each, got {seen}")

    @classmethod
    def from_lengths(cls, parts):
        """
        Build a layout from ``(kind, length)`` pairs; images are numbered in order.

        Args:
            parts (list): e.g. ``[("text", 4), ("image", 4), ("image", 4)]``

        Returns:
            TokenLayout: The layout
        """
        segments = []
        cursor = 0
        image = 0
        for kind, length in parts:
            kind = SegmentKind(kind)
            if length < 0:
                raise LayoutError(f"Segment length must be non-negative, got {length}")
            if kind is SegmentKind.IMAGE:
                image += 1
                segments.append(Segment(kind, cursor, cursor + length, image))
            else:
                segments.append(Segment(kind, cursor, cursor + length))
            cursor += length
        return cls(tuple(segments))

    @classmethod
    def parse(cls, spec):
        """Parse a spec string such as ``"text:4,image:16,image:16,text:2"``."""
        parts = []
        for item in spec.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                kind, length = item.split(":")
                parts.append((kind.strip().lower(), int(length)))
            except ValueError as e:
                raise LayoutError(f"Invalid layout item '{item}'; expected kind:length") from e
        return cls.from_lengths(parts)

    @classmethod
    def from_list(cls, items):
        """Inverse of ``to_list``, used by the trace reader."""
        segments = []
        for item in items:
            if item[0] == "image":
                segments.append(Segment(SegmentKind.IMAGE, int(item[2]), int(item[3]), int(item[1])))
            elif item[0] == "text":
                segments.append(Segment(SegmentKind.TEXT, int(item[1]), int(item[2])))
            else:
                raise LayoutError(f"Unknown segment kind '{item[0]}'")
        return cls(tuple(segments))

    def to_list(self):
        return [segment.to_list() for segment in self.segments]

    @property
    def total_len(self):
        return self.segments[-1].end if self.segments else 0

    @property
    def num_images(self):
        return sum(1 for segment in self.segments if segment.kind is SegmentKind.IMAGE)

    @cached_property
    def position_images(self):
        """Array of length total_len: image index at each position, 0 for text."""
        owner = np.zeros(self.total_len, dtype=np.int64)
        for segment in self.segments:
            if segment.kind is SegmentKind.IMAGE:
                owner[segment.start:segment.end] = segment.image
        return owner

    def image_segment(self, j):
        """Return the segment S_j for image ``j`` (1-based)."""
        self.check_image_index(j)
        for segment in self.segments:
            if segment.kind is SegmentKind.IMAGE and segment.image == j:
                return segment
        raise LayoutError(f"Image {j} not found")  # unreachable after check

    def check_image_index(self, j):
        if not 1 <= j <= self.num_images:
            raise LayoutError(f"Image index {j} out of range 1..{self.num_images}")

    def image_mask(self, images, length=None):
        """
        Boolean mask over ``length`` positions selecting the given images' tokens.

        Positions past the layout are never selected.
        """
        length = self.total_len if length is None else length
        mask = np.zeros(length, dtype=bool)
        if not images:
            return mask
        covered = min(length, self.total_len)
        mask[:covered] = np.isin(self.position_images[:covered], list(images))
        return mask
