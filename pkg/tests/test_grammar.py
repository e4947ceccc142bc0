"""Tests for the streaming parser, serializer, validator and transcript generator."""
import numpy as np
import pytest

from pulse_focus.exceptions import GrammarError
from pulse_focus.grammar.events import BlockKind, BlockType, EventKind, PlanDirective
from pulse_focus.grammar.generator import random_transcript
from pulse_focus.grammar.parser import ParserMode, StreamParser, feed, finish, initial_state, parse
from pulse_focus.grammar.serializer import serialize
from pulse_focus.grammar.validation import Severity, validate_transcript


def kinds(events):
    return [str(event) for event in events if event.kind is not EventKind.TRAILER]


class TestParser:
    """Test suite for feed/finish."""

    def test_plan_focus_answer(self, simple_transcript):
        """A full cycle emits starts, a directive, ends and the answer text."""
        events = parse(simple_transcript, 3)
        assert kinds(events) == [
            "BlockStart(Plan)", "Directive(NextFocus[2])", "BlockEnd(Plan)",
            "BlockStart(Focus[2])", "BlockEnd(Focus[2])",
            "BlockStart(Answer)", "AnswerText(' A ')", "BlockEnd(Answer)",
        ]

    def test_case_transcript(self, case_transcript):
        """The six-image fixture parses with three directives and no mismatch."""
        events = parse(case_transcript, 6)
        directives = [e.directive for e in events if e.kind is EventKind.DIRECTIVE]
        assert directives == [
            PlanDirective.next_focus(5), PlanDirective.next_focus(1), PlanDirective.next_focus(3, 6),
        ]
        focus = [e.block for e in events if e.kind is EventKind.BLOCK_START and e.block.type is BlockType.FOCUS]
        assert focus == [BlockKind.focus(5), BlockKind.focus(1), BlockKind.focus(3, 6)]
        assert not any(e.kind is EventKind.MISMATCH for e in events)

    def test_chunking_does_not_matter(self, case_transcript):
        """Feeding one character at a time yields the same events as one chunk."""
        whole = parse(case_transcript, 6)
        state = initial_state(6)
        events = []
        for ch in case_transcript:
            state, new = feed(state, ch)
            events.extend(new)
        _, tail = finish(state)
        assert events + tail == whole

    def test_random_partitions(self):
        """Ten random chunkings of each generated transcript give the whole-string events."""
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            text = random_transcript(rng, n, mismatch_rate=0.2)
            whole = parse(text, n)
            for _ in range(10):
                cuts = sorted(rng.choice(len(text) + 1, size=int(rng.integers(0, 12)), replace=True).tolist())
                pieces = [text[a:b] for a, b in zip([0] + cuts, cuts + [len(text)])]
                state = initial_state(n)
                events = []
                for piece in pieces:
                    state, new = feed(state, piece)
                    events.extend(new)
                _, tail = finish(state)
                assert events + tail == whole

    def test_split_tag_is_pending(self):
        """A tag split across chunks completes on the second chunk."""
        state, events = feed(initial_state(2), "<pl")
        assert events == []
        assert state.pending
        state, events = feed(state, "an>")
        assert [e.kind for e in events] == [EventKind.BLOCK_START]
        assert state.mode is ParserMode.IN_PLAN
        assert not state.pending

    def test_lone_angle_bracket_is_text(self):
        """'a < b' inside a plan is ordinary text."""
        events = parse("<plan>a < b Next focus: I1</plan>", 1)
        end = next(e for e in events if e.kind is EventKind.BLOCK_END)
        assert end.text == "a < b Next focus: I1"

    def test_end_directive(self):
        """END closes the plan with an End directive."""
        events = parse("<plan>Nothing left to check. END</plan>", 2)
        directive = next(e for e in events if e.kind is EventKind.DIRECTIVE)
        assert directive.directive.is_end

    def test_end_inside_word_is_not_a_directive(self):
        """'WEEKEND' does not count as END."""
        with pytest.raises(GrammarError) as excinfo:
            parse("<plan>See you at the WEEKEND</plan>", 2)
        assert excinfo.value.code == "missing_directive"

    def test_mismatch_event(self):
        """A focus tag that differs from the plan's directive emits Mismatch after BlockStart."""
        events = parse("<plan>x Next focus: I3</plan><focus:I5>y</focus>", 6)
        kinds_seen = [e.kind for e in events]
        start = kinds_seen.index(EventKind.MISMATCH) - 1
        assert events[start].kind is EventKind.BLOCK_START
        mismatch = events[start + 1]
        assert mismatch.planned == (3,)
        assert mismatch.actual == (5,)
        assert str(mismatch) == "Mismatch(planned=[3], actual=[5])"

    def test_pair_order_is_not_a_mismatch(self):
        """Directive and tag name the same set in a different order."""
        events = parse("<plan>x Next focus: I2 and I1</plan><focus:I1,I2>y</focus>", 2)
        assert not any(e.kind is EventKind.MISMATCH for e in events)

    def test_trailing_whitespace_after_answer(self):
        """Whitespace after </answer> is accepted and ends up in the trailer."""
        events = parse("<answer> C </answer>\n\n", 1)
        assert events[-1].kind is EventKind.TRAILER
        assert events[-1].text == "\n\n"

    def test_char_spans(self):
        """Tag events carry the tag's character span."""
        events = parse("ab<plan>x END</plan>", 1)
        start = events[0]
        assert start.char_span == (2, 8)
        assert start.text == "ab"

    def test_stream_parser_wrapper(self, simple_transcript):
        """StreamParser collects events across feeds."""
        parser = StreamParser(3)
        for i in range(0, len(simple_transcript), 7):
            parser.feed(simple_transcript[i:i + 7])
        parser.finish()
        assert parser.events == parse(simple_transcript, 3)

    @pytest.mark.parametrize("text,code", [
        ("<plan>no directive here</plan>", "missing_directive"),
        ("<plan>hi <pla!", "malformed_tag"),
        ("<focus:I1;>x</focus>", "malformed_tag"),
        ("<focus:>x</focus>", "malformed_tag"),
        ("<focus:I1,I2,I3>x</focus>", "too_many_images"),
        ("<focus:I2,I2>x</focus>", "duplicate_index"),
        ("<plan>x Next focus: I1 and I1</plan>", "duplicate_index"),
        ("<focus:I9>x</focus>", "index_out_of_range"),
        ("<plan>x Next focus: I0</plan>", "index_out_of_range"),
        ("<plan>x <focus:I1>", "nested_block"),
        ("<plan>x END</focus>", "unmatched_close"),
        ("</plan>", "unmatched_close"),
        ("<answer>A</answer> more", "text_after_answer"),
        ("<answer>A</answer><plan>", "text_after_answer"),
        ("<plan>x END", "unterminated_block"),
    ])
    def test_error_codes(self, text, code):
        """Each grammar violation raises GrammarError with its code."""
        with pytest.raises(GrammarError) as excinfo:
            parse(text, 6)
        assert excinfo.value.code == code

    def test_error_reports_offset(self):
        """The error carries the character offset of the bad tag."""
        with pytest.raises(GrammarError) as excinfo:
            parse("abc<focus:I9>", 6)
        assert excinfo.value.offset == 3
        assert str(excinfo.value).startswith("index_out_of_range at char 3")

    def test_feed_after_finish(self):
        """A finished parser refuses more input."""
        state, _ = finish(initial_state(1))
        with pytest.raises(GrammarError) as excinfo:
            feed(state, "x")
        assert excinfo.value.code == "feed_after_close"

    def test_dangling_angle_bracket_at_end(self):
        """A final lone '<' becomes trailer text."""
        events = parse("done <", 1)
        assert events[-1].text == "done <"

    def test_partial_tag_at_end_is_malformed(self):
        """A longer unfinished tag prefix at the end of input is malformed."""
        with pytest.raises(GrammarError) as excinfo:
            parse("done <pla", 1)
        assert excinfo.value.code == "malformed_tag"


class TestSerializer:
    """Test suite for serialize."""

    def test_reproduces_fixture(self, case_transcript):
        """serialize(parse(t)) == t for the six-image fixture."""
        assert serialize(parse(case_transcript, 6)) == case_transcript

    def test_reproduces_generated_transcripts(self):
        """Random valid transcripts survive a parse/serialize cycle."""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            text = random_transcript(rng, n, mismatch_rate=0.2)
            assert serialize(parse(text, n)) == text

    def test_rejects_unclosed_block(self):
        """Events that leave a block open cannot be serialized."""
        events = parse("<plan>x END</plan>", 1)[:1]
        with pytest.raises(GrammarError):
            serialize(events)

    def test_rejects_plan_without_directive(self):
        """A plan close without a directive event is invalid."""
        events = [e for e in parse("<plan>x END</plan>", 1) if e.kind is not EventKind.DIRECTIVE]
        with pytest.raises(GrammarError):
            serialize(events)


class TestValidation:
    """Test suite for validate_transcript."""

    def test_fixture_is_clean(self, case_transcript):
        """The six-image fixture has no findings at all."""
        report = validate_transcript(case_transcript, 6)
        assert report.is_valid
        assert report.findings == []

    def test_out_of_range_is_an_error(self, fixtures_dir):
        """<focus:I9> with six images is an error finding."""
        with open(f"{fixtures_dir}/bad_index.txt", encoding="utf-8") as f:
            report = validate_transcript(f.read(), 6)
        assert not report.is_valid
        assert report.errors[0].code == "index_out_of_range"
        assert str(report.errors[0]).startswith("error: index_out_of_range at char")

    def test_mismatch_is_a_warning(self):
        """A plan/focus mismatch is reported but does not invalidate."""
        report = validate_transcript("<plan>x Next focus: I1</plan><focus:I2>y</focus>", 2)
        assert report.is_valid
        assert [f.code for f in report.warnings] == ["mismatch"]
        assert report.has_findings(strict=True)
        assert not report.has_findings(strict=False)

    def test_stray_text(self):
        """Non-whitespace between blocks is a warning, a Summary before the answer is not."""
        report = validate_transcript(
            "<plan>x Next focus: I1</plan>oops<focus:I1>y</focus>\nSummary: fine\n<answer>A</answer>", 1,
        )
        assert [f.code for f in report.warnings] == ["stray_text"]

    def test_focus_without_plan(self):
        """A focus block with no plan before it is flagged."""
        report = validate_transcript("<focus:I1>y</focus>", 1)
        assert [f.code for f in report.warnings] == ["focus_without_plan"]

    def test_no_focus_blocks_note(self):
        """Transcripts without focus blocks get a note."""
        report = validate_transcript("<plan>x END</plan>", 1)
        assert [f.severity for f in report.findings] == [Severity.NOTE]
        assert report.notes[0].code == "no_focus_blocks"


class TestGenerator:
    """Test suite for random_transcript."""

    def test_generated_transcripts_validate(self):
        """Generated transcripts never produce error findings."""
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 7))
            report = validate_transcript(random_transcript(rng, n), n)
            assert report.is_valid

    def test_exact_cycle_count(self):
        """cycles= fixes the number of plan/focus pairs."""
        text = random_transcript(np.random.default_rng(0), 4, cycles=3, end=False)
        events = parse(text, 4)
        assert sum(1 for e in events if e.kind is EventKind.DIRECTIVE) == 3

    def test_requires_an_image(self):
        """Zero images cannot host focus blocks."""
        with pytest.raises(ValueError):
            random_transcript(np.random.default_rng(0), 0)
