# ABOUTME: Block kinds, plan directives and the events emitted by the streaming parser
# ABOUTME: Events carry their text so the serializer can rebuild a transcript exactly

from dataclasses import dataclass
from enum import Enum


class BlockType(str, Enum):
    PLAN = "plan"
    FOCUS = "focus"
    ANSWER = "answer"


class EventKind(str, Enum):
    BLOCK_START = "block_start"
    BLOCK_END = "block_end"
    DIRECTIVE = "directive"
    ANSWER_TEXT = "answer_text"
    MISMATCH = "mismatch"
    TRAILER = "trailer"


@dataclass(frozen=True)
class BlockKind:
    """A block type; focus blocks also carry their 1-2 image indices."""

    type: BlockType
    images: tuple = ()

    @classmethod
    def plan(cls):
        return cls(BlockType.PLAN)

    @classmethod
    def focus(cls, *images):
        return cls(BlockType.FOCUS, tuple(images))

    @classmethod
    def answer(cls):
        return cls(BlockType.ANSWER)

    def open_tag(self):
        if self.type is BlockType.FOCUS:
            return "<focus:" + ",".join(f"I{j}" for j in self.images) + ">"
        return f"<{self.type.value}>"

    def close_tag(self):
        return f"</{self.type.value}>"

    def __str__(self):
        if self.type is BlockType.FOCUS:
            return "Focus[" + ",".join(str(j) for j in self.images) + "]"
        return self.type.value.capitalize()


@dataclass(frozen=True)
class PlanDirective:
    """``Next focus: Ix [and Iy]``, or ``END`` when ``images`` is empty."""

    images: tuple = ()

    @classmethod
    def end(cls):
        return cls(())

    @classmethod
    def next_focus(cls, *images):
        return cls(tuple(images))

    @property
    def is_end(self):
        return not self.images

    def to_text(self):
        if self.is_end:
            return "END"
        return "Next focus: " + " and ".join(f"I{j}" for j in self.images)

    def __str__(self):
        if self.is_end:
            return "End"
        return "NextFocus[" + ",".join(str(j) for j in self.images) + "]"


@dataclass(frozen=True)
class BlockEvent:
    """
    One parser event.

    ``text`` holds the interstitial text before an opening tag (BLOCK_START),
    the block body (BLOCK_END, ANSWER_TEXT) or the text after the last block
    (TRAILER). ``char_span`` is the tag's span in the transcript; for a
    directive it is the span of the directive text. ``token_span`` is filled in
    by the controller, which knows which decode steps produced the characters.
    """

    kind: EventKind
    block: BlockKind = None
    directive: PlanDirective = None
    text: str = ""
    planned: tuple = None
    actual: tuple = None
    char_span: tuple = (0, 0)
    token_span: tuple = None
    injected: bool = False
    block_index: int = None

    @property
    def is_structural(self):
        return self.kind in (EventKind.BLOCK_START, EventKind.BLOCK_END)

    def __str__(self):
        if self.kind is EventKind.BLOCK_START:
            return f"BlockStart({self.block})"
        if self.kind is EventKind.BLOCK_END:
            return f"BlockEnd({self.block})"
        if self.kind is EventKind.DIRECTIVE:
            return f"Directive({self.directive})"
        if self.kind is EventKind.MISMATCH:
            return f"Mismatch(planned={list(self.planned)}, actual={list(self.actual)})"
        if self.kind is EventKind.ANSWER_TEXT:
            return f"AnswerText({self.text!r})"
        return f"Trailer({self.text!r})"
