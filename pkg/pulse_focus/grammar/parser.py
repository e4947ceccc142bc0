# ABOUTME: Streaming character-level parser for the plan/focus/answer output grammar
# ABOUTME: feed() consumes chunks of any size; tags split across chunks still parse

import logging
import re
from dataclasses import dataclass, replace
from enum import Enum

from pulse_focus.exceptions import GrammarError
from pulse_focus.grammar.events import BlockEvent, BlockKind, BlockType, EventKind, PlanDirective

logger = logging.getLogger(__name__)

FOCUS_PREFIX = "<focus:"
FIXED_TAGS = ("<plan>", "</plan>", "</focus>", "<answer>", "</answer>")
TAG_PREFIXES = FIXED_TAGS + (FOCUS_PREFIX,)
FOCUS_TAG_CHARS = frozenset("I0123456789,")
MAX_FOCUS_TAG_LEN = 64
MAX_FOCUS_IMAGES = 2

FOCUS_ITEM_RE = re.compile(r"I(\d+)")
NEXT_FOCUS_RE = re.compile(r"Next focus: I(\d+)(?: and I(\d+))?\s*$")
END_RE = re.compile(r"(?<![A-Za-z0-9])END\s*$")


class ParserMode(str, Enum):
    OUTSIDE = "outside"
    IN_PLAN = "plan"
    IN_FOCUS = "focus"
    IN_ANSWER = "answer"
    TERMINATED = "terminated"


_BLOCK_MODES = {
    BlockType.PLAN: ParserMode.IN_PLAN,
    BlockType.FOCUS: ParserMode.IN_FOCUS,
    BlockType.ANSWER: ParserMode.IN_ANSWER,
}


@dataclass(frozen=True)
class ParserState:
    """
    Immutable parser state; ``feed`` returns a new one.

    ``buffer`` holds a tag fragment that has not been resolved yet and
    ``text`` the characters since the last tag (interstitial text or the body
    of the open block). ``planned`` is the directive of the most recent plan
    block until a focus block consumes it (``()`` for END).
    """

    num_images: int
    mode: ParserMode = ParserMode.OUTSIDE
    focus: tuple = ()
    buffer: str = ""
    buffer_start: int = 0
    offset: int = 0
    text: str = ""
    text_start: int = 0
    block_index: int = -1
    planned: tuple = None
    finished: bool = False

    @property
    def pending(self):
        """True while a possible tag fragment is buffered."""
        return bool(self.buffer)

    @property
    def in_block(self):
        return self.mode in (ParserMode.IN_PLAN, ParserMode.IN_FOCUS, ParserMode.IN_ANSWER)

    @property
    def in_focus_body(self):
        return self.mode is ParserMode.IN_FOCUS and not self.buffer

    @property
    def open_block(self):
        """BlockKind of the open block, or None."""
        if self.mode is ParserMode.IN_PLAN:
            return BlockKind.plan()
        if self.mode is ParserMode.IN_FOCUS:
            return BlockKind.focus(*self.focus)
        if self.mode is ParserMode.IN_ANSWER:
            return BlockKind.answer()
        return None

    def discard_pending(self):
        """Drop a buffered tag fragment as if it had never been fed."""
        if not self.buffer:
            return self
        return replace(self, buffer="", offset=self.buffer_start)


def initial_state(num_images):
    if num_images < 0:
        raise ValueError(f"num_images must be non-negative, got {num_images}")
    return ParserState(num_images=num_images)


def parse_directive(body, num_images, body_start=0):
    """
    Extract the directive closing a plan body.

    Returns:
        tuple: (PlanDirective, (start, end) char span), or None when absent
    """
    match = NEXT_FOCUS_RE.search(body)
    if match:
        images = tuple(int(g) for g in match.groups() if g is not None)
        at = body_start + match.start()
        _check_indices(images, num_images, at)
        return PlanDirective.next_focus(*images), (at, body_start + match.end())
    match = END_RE.search(body)
    if match:
        return PlanDirective.end(), (body_start + match.start(), body_start + match.end())
    return None


def _check_indices(images, num_images, offset):
    if len(images) > MAX_FOCUS_IMAGES:
        raise GrammarError(
            "too_many_images", f"At most {MAX_FOCUS_IMAGES} images may be referenced, got {len(images)}", offset
        )
    if len(set(images)) != len(images):
        raise GrammarError("duplicate_index", f"Image indices {list(images)} repeat", offset)
    for j in images:
        if not 1 <= j <= num_images:
            raise GrammarError("index_out_of_range", f"Image index I{j} outside 1..{num_images}", offset)


class _Cursor:
    """Mutable working copy of a ParserState used inside one feed call."""

    def __init__(self, state):
        self.__dict__.update({name: getattr(state, name) for name in state.__dataclass_fields__})
        self.events = []

    @property
    def in_block(self):
        return self.mode in (ParserMode.IN_PLAN, ParserMode.IN_FOCUS, ParserMode.IN_ANSWER)

    def freeze(self):
        return ParserState(**{name: getattr(self, name) for name in ParserState.__dataclass_fields__})

    def consume(self, ch):
        if self.buffer:
            self.buffer += ch
            self.offset += 1
            self._advance_tag()
            return
        if self.mode is ParserMode.TERMINATED:
            if not ch.isspace():
                raise GrammarError("text_after_answer", f"Unexpected {ch!r} after </answer>", self.offset)
            self._append_text(ch)
            return
        if ch == "<":
            self.buffer = ch
            self.buffer_start = self.offset
            self.offset += 1
            return
        self._append_text(ch)

    def _append_text(self, chars):
        if not self.text:
            self.text_start = self.offset
        self.text += chars
        self.offset += len(chars)

    def _advance_tag(self):
        buffer = self.buffer
        if buffer.startswith(FOCUS_PREFIX) and len(buffer) > len(FOCUS_PREFIX):
            ch = buffer[-1]
            if ch == ">":
                self._focus_tag(buffer)
            elif ch not in FOCUS_TAG_CHARS or len(buffer) > MAX_FOCUS_TAG_LEN:
                raise GrammarError("malformed_tag", f"Malformed focus tag {buffer!r}", self.buffer_start)
            return
        if buffer in FIXED_TAGS:
            self._fixed_tag(buffer)
            return
        if any(tag.startswith(buffer) for tag in TAG_PREFIXES):
            return
        self._diverge()

    def _diverge(self, at_end=False):
        """The buffer stopped matching every tag: a lone '<' is text, a longer match is malformed."""
        buffer = self.buffer
        matched = buffer if at_end else buffer[:-1]
        if len(matched) > 1:
            raise GrammarError("malformed_tag", f"Malformed tag {buffer!r}", self.buffer_start)
        start = self.buffer_start
        self.buffer = ""
        self.offset = start
        self._append_text("<")
        for ch in buffer[1:]:
            self.consume(ch)

    def _open(self, block, tag_end):
        if self.in_block:
            raise GrammarError(
                "nested_block", f"Cannot open {block} inside an open {self.mode.value} block", self.buffer_start
            )
        if self.mode is ParserMode.TERMINATED:
            raise GrammarError("text_after_answer", f"Cannot open {block} after </answer>", self.buffer_start)
        self.block_index += 1
        self.events.append(BlockEvent(
            EventKind.BLOCK_START, block=block, text=self.text,
            char_span=(self.buffer_start, tag_end), block_index=self.block_index,
        ))
        self.mode = _BLOCK_MODES[block.type]
        self.focus = block.images
        self._reset_text(tag_end)
        logger.debug(f"Opened {block} at char {self.buffer_start}")

    def _close(self, block_type, tag_end):
        if self.mode is not _BLOCK_MODES[block_type]:
            raise GrammarError(
                "unmatched_close", f"</{block_type.value}> without a matching open block", self.buffer_start
            )
        block = BlockKind.focus(*self.focus) if block_type is BlockType.FOCUS else BlockKind(block_type)
        body = self.text
        if block_type is BlockType.PLAN:
            found = parse_directive(body, self.num_images, self.text_start if body else self.buffer_start)
            if found is None:
                raise GrammarError(
                    "missing_directive", "Plan block must end with 'Next focus: Ix' or 'END'", self.buffer_start
                )
            directive, span = found
            self.events.append(BlockEvent(
                EventKind.DIRECTIVE, block=block, directive=directive, text=directive.to_text(),
                char_span=span, block_index=self.block_index,
            ))
            self.planned = directive.images
        elif block_type is BlockType.ANSWER:
            self.events.append(BlockEvent(
                EventKind.ANSWER_TEXT, block=block, text=body,
                char_span=(self.text_start if body else self.buffer_start, self.buffer_start),
                block_index=self.block_index,
            ))
        self.events.append(BlockEvent(
            EventKind.BLOCK_END, block=block, text=body,
            char_span=(self.buffer_start, tag_end), block_index=self.block_index,
        ))
        self.mode = ParserMode.TERMINATED if block_type is BlockType.ANSWER else ParserMode.OUTSIDE
        self.focus = ()
        self._reset_text(tag_end)
        logger.debug(f"Closed {block} at char {tag_end}")

    def _reset_text(self, tag_end):
        self.buffer = ""
        self.text = ""
        self.text_start = tag_end

    def _fixed_tag(self, tag):
        tag_end = self.offset
        if tag == "<plan>":
            self._open(BlockKind.plan(), tag_end)
        elif tag == "<answer>":
            self._open(BlockKind.answer(), tag_end)
        elif tag == "</plan>":
            self._close(BlockType.PLAN, tag_end)
        elif tag == "</focus>":
            self._close(BlockType.FOCUS, tag_end)
        else:
            self._close(BlockType.ANSWER, tag_end)

    def _focus_tag(self, tag):
        inner = tag[len(FOCUS_PREFIX):-1]
        items = inner.split(",")
        matches = [FOCUS_ITEM_RE.fullmatch(item) for item in items]
        if not all(matches):
            raise GrammarError("malformed_tag", f"Malformed focus tag {tag!r}", self.buffer_start)
        images = tuple(int(m.group(1)) for m in matches)
        _check_indices(images, self.num_images, self.buffer_start)
        start = len(self.events)
        self._open(BlockKind.focus(*images), self.offset)
        planned = self.planned
        if planned is not None and set(planned) != set(images):
            span = self.events[start].char_span
            self.events.append(BlockEvent(
                EventKind.MISMATCH, block=BlockKind.focus(*images), planned=planned, actual=images,
                char_span=span, block_index=self.block_index,
            ))
            logger.debug(f"Focus tag {tag} does not match planned {list(planned)}")
        self.planned = None


def feed(state, text):
    """
    Feed a chunk of generated text.

    Args:
        state (ParserState): Current state
        text (str): Next chunk, of any length

    Returns:
        tuple: (new ParserState, list of BlockEvent emitted by this chunk)

    Raises:
        GrammarError: On malformed tags, bad indices, nesting or closing errors
    """
    if state.finished:
        raise GrammarError("feed_after_close", "Parser already finished", state.offset)
    cursor = _Cursor(state)
    for ch in text:
        cursor.consume(ch)
    return cursor.freeze(), cursor.events


def finish(state):
    """
    Close the stream: resolve a dangling '<', reject open blocks, emit the trailer.

    Returns:
        tuple: (finished ParserState, list of BlockEvent)
    """
    if state.finished:
        raise GrammarError("feed_after_close", "Parser already finished", state.offset)
    cursor = _Cursor(state)
    if cursor.buffer:
        cursor._diverge(at_end=True)
    if cursor.in_block:
        raise GrammarError(
            "unterminated_block", f"Transcript ended inside a {cursor.mode.value} block", cursor.offset
        )
    if cursor.text:
        cursor.events.append(BlockEvent(
            EventKind.TRAILER, text=cursor.text, char_span=(cursor.text_start, cursor.offset),
        ))
        cursor.text = ""
    cursor.finished = True
    return cursor.freeze(), cursor.events


def parse(text, num_images):
    """Parse a complete transcript and return its events."""
    state, events = feed(initial_state(num_images), text)
    _, tail = finish(state)
    return events + tail


class StreamParser:
    """Stateful convenience wrapper around ``feed``/``finish``."""

    def __init__(self, num_images):
        self.state = initial_state(num_images)
        self.events = []

    def feed(self, text):
        self.state, events = feed(self.state, text)
        self.events.extend(events)
        return events

    def finish(self):
        self.state, events = finish(self.state)
        self.events.extend(events)
        return events
