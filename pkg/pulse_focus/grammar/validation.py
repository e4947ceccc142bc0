# ABOUTME: Whole-transcript validation producing error, warning and note findings
# ABOUTME: Grammar errors stop validation; plan/focus mismatches are only warnings

import logging
from dataclasses import dataclass, field
from enum import Enum

from pulse_focus.exceptions import GrammarError
from pulse_focus.grammar.events import BlockType, EventKind
from pulse_focus.grammar.parser import feed, finish, initial_state

logger = logging.getLogger(__name__)

SUMMARY_PREFIX = "Summary:"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    NOTE = "note"


@dataclass(frozen=True)
class Finding:
    severity: Severity
    code: str
    message: str
    char_span: tuple = None

    def __str__(self):
        where = f" at char {self.char_span[0]}" if self.char_span else ""
        return f"{self.severity.value}: {self.code}{where}: {self.message}"


@dataclass
class ValidationReport:
    """Findings for one transcript plus the events parsed before any error."""

    num_images: int
    findings: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def _of(self, severity):
        return [f for f in self.findings if f.severity is severity]

    @property
    def errors(self):
        return self._of(Severity.ERROR)

    @property
    def warnings(self):
        return self._of(Severity.WARNING)

    @property
    def notes(self):
        return self._of(Severity.NOTE)

    @property
    def is_valid(self):
        return not self.errors

    def has_findings(self, strict=False):
        """Errors always count; warnings count only when ``strict``."""
        return bool(self.errors) or (strict and bool(self.warnings))


def _stray_text(text, allow_summary):
    stripped = text.strip()
    if not stripped:
        return False
    return not (allow_summary and stripped.startswith(SUMMARY_PREFIX))


def validate_transcript(text, num_images):
    """
    Validate a complete transcript against the output grammar.

    Args:
        text (str): Transcript text
        num_images (int): Number of images N the transcript may reference

    Returns:
        ValidationReport: Findings; never raises for grammar problems
    """
    report = ValidationReport(num_images=num_images)
    try:
        state, events = feed(initial_state(num_images), text)
        report.events.extend(events)
        _, tail = finish(state)
        report.events.extend(tail)
    except GrammarError as e:
        span = (e.offset, e.offset) if e.offset is not None else None
        report.findings.append(Finding(Severity.ERROR, e.code, e.message, span))
        logger.debug(f"Transcript failed validation: {e}")
        return report

    focus_blocks = 0
    previous_close = None
    for event in report.events:
        if event.kind is EventKind.MISMATCH:
            report.findings.append(Finding(
                Severity.WARNING, "mismatch",
                f"Mismatch(planned={list(event.planned)}, actual={list(event.actual)})", event.char_span,
            ))
        elif event.kind is EventKind.BLOCK_START:
            is_answer = event.block.type is BlockType.ANSWER
            if _stray_text(event.text, allow_summary=is_answer):
                report.findings.append(Finding(
                    Severity.WARNING, "stray_text", f"Text outside blocks before {event.block}", event.char_span,
                ))
            if event.block.type is BlockType.FOCUS:
                focus_blocks += 1
                if previous_close is not BlockType.PLAN:
                    report.findings.append(Finding(
                        Severity.WARNING, "focus_without_plan",
                        f"{event.block} is not preceded by a plan block", event.char_span,
                    ))
        elif event.kind is EventKind.BLOCK_END:
            previous_close = event.block.type
        elif event.kind is EventKind.TRAILER:
            if _stray_text(event.text, allow_summary=True):
                report.findings.append(Finding(
                    Severity.WARNING, "stray_text", "Text after the last block", event.char_span,
                ))
    if focus_blocks == 0:
        report.findings.append(Finding(Severity.NOTE, "no_focus_blocks", "Transcript has no focus blocks"))
    return report
