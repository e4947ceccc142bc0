# ABOUTME: Rebuilds transcript text from parser events
# ABOUTME: serialize(parse(t)) == t for every grammar-valid transcript

from pulse_focus.exceptions import GrammarError
from pulse_focus.grammar.events import BlockType, EventKind


def serialize(events):
    """
    Turn an event list back into transcript text.

    Args:
        events (list): BlockEvents as produced by ``parse`` (with text)

    Returns:
        str: The transcript

    Raises:
        GrammarError: If the events do not form a flat, properly closed sequence
    """
    parts = []
    open_block = None
    plan_directives = 0
    trailer_seen = False
    for index, event in enumerate(events):
        if trailer_seen:
            raise GrammarError("invalid_sequence", f"Event {index} follows the trailer")
        if event.kind is EventKind.BLOCK_START:
            if open_block is not None:
                raise GrammarError("invalid_sequence", f"Event {index} opens {event.block} inside {open_block}")
            open_block = event.block
            plan_directives = 0
            parts.append(event.text)
            parts.append(event.block.open_tag())
        elif event.kind is EventKind.BLOCK_END:
            if open_block != event.block:
                raise GrammarError("invalid_sequence", f"Event {index} closes {event.block} but {open_block} is open")
            if event.block.type is BlockType.PLAN and plan_directives != 1:
                raise GrammarError("invalid_sequence", f"Plan block closed by event {index} has no single directive")
            parts.append(event.text)
            parts.append(event.block.close_tag())
            open_block = None
        elif event.kind is EventKind.DIRECTIVE:
            if open_block is None or open_block.type is not BlockType.PLAN:
                raise GrammarError("invalid_sequence", f"Directive event {index} outside a plan block")
            plan_directives += 1
        elif event.kind is EventKind.TRAILER:
            if open_block is not None:
                raise GrammarError("invalid_sequence", f"Trailer while {open_block} is open")
            parts.append(event.text)
            trailer_seen = True
    if open_block is not None:
        raise GrammarError("invalid_sequence", f"{open_block} is never closed")
    return "".join(parts)
