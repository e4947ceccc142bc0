# ABOUTME: Episode controller: decodes token by token, parses the output grammar, gates focus blocks
# ABOUTME: Enforces per-block token caps and the cycle cap, force-closing blocks so transcripts stay valid

import bisect
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum

from pulse_focus.agents.token_agent import ModelAgent
from pulse_focus.exceptions import ConfigurationError, GrammarError
from pulse_focus.grammar.events import BlockType, EventKind
from pulse_focus.grammar.parser import ParserMode, feed, finish, initial_state, parse_directive
from pulse_focus.services.gating import build_gate
from pulse_focus.traces.models import AttentionTrace, TraceMetadata, TraceStep

logger = logging.getLogger(__name__)

DEFAULT_PLAN_MAX_TOKENS = 256
DEFAULT_FOCUS_MAX_TOKENS = 192
DEFAULT_MAX_CYCLES = 12
TOTAL_CAP_SLACK = 512
# Room kept free in the model's context for the closing text injected at termination
CLOSURE_RESERVE = 32

ANSWER_SPAN_RE = re.compile(r"<answer>(.*?)</answer>", re.S)
CHOICE_RE = re.compile(r"\b([A-Z])\b")


class Mode(str, Enum):
    PULSEFOCUS = "pulsefocus"
    PLAN_FOCUS_NO_GATING = "plan-focus-nogate"
    FREE_COT = "free-cot"


class TerminationReason(str, Enum):
    ANSWER_EMITTED = "AnswerEmitted"
    END_DIRECTIVE = "EndDirective"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    GRAMMAR_ERROR = "GrammarError"
    STREAM_EXHAUSTED = "StreamExhausted"


@dataclass(frozen=True)
class BudgetConfig:
    """
    Token and cycle budgets.

    ``total_token_cap`` defaults to plan_max * max_cycles + focus_max * max_cycles + 512.
    """

    plan_max_tokens: int = DEFAULT_PLAN_MAX_TOKENS
    focus_max_tokens: int = DEFAULT_FOCUS_MAX_TOKENS
    max_cycles: int = DEFAULT_MAX_CYCLES
    total_token_cap: int = None

    def __post_init__(self):
        if self.total_token_cap is None:
            object.__setattr__(
                self, "total_token_cap",
                (self.plan_max_tokens + self.focus_max_tokens) * self.max_cycles + TOTAL_CAP_SLACK,
            )
        for name in ("plan_max_tokens", "focus_max_tokens", "max_cycles", "total_token_cap"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")

    def block_cap(self, mode):
        if mode is ParserMode.IN_PLAN:
            return self.plan_max_tokens
        if mode is ParserMode.IN_FOCUS:
            return self.focus_max_tokens
        return None


@dataclass
class BudgetState:
    tokens_in_current_block: int = 0
    cycles_completed: int = 0
    terminated_reason: TerminationReason = None
    total_tokens: int = 0
    forced_closures: int = 0
    max_plan_tokens: int = 0
    max_focus_tokens: int = 0


@dataclass
class EpisodeResult:
    transcript: str
    events: list
    trace: AttentionTrace
    budget_state: BudgetState
    mode: Mode
    answer: str = None
    error: GrammarError = None
    rejected_text: str = None

    @property
    def steps(self):
        return len(self.trace.steps)


def gate_schedule(events, layout, gate_cfg, attended_len, step_index, pending_tag=False):
    """
    Gate for one decode step, or None.

    The gate is active from the first token after a focus opening tag has
    completed up to the token before ``</focus>``. Tokens of a tag, including
    a fragment that may still turn into one, are never gated.

    Args:
        events (list): Events so far, with token spans, including this step's
        layout (TokenLayout): Prompt layout
        gate_cfg (GateConfig): Gate strength
        attended_len (int): Attended length at this step
        step_index (int): This step's index
        pending_tag (bool): Whether this token is part of an unresolved tag fragment

    Returns:
        GateVector or None
    """
    if pending_tag:
        return None
    last = next((event for event in reversed(events) if event.is_structural), None)
    if last is None or last.kind is not EventKind.BLOCK_START or last.block.type is not BlockType.FOCUS:
        return None
    if last.token_span is not None and last.token_span[1] > step_index:
        return None
    return build_gate(layout, last.block.images, gate_cfg, attended_len)


def answer_choice(text):
    """Choice letter in an answer body, e.g. ``" B "`` -> ``"B"``."""
    if text is None:
        return None
    match = CHOICE_RE.search(text)
    return match.group(1) if match else None


class EpisodeController:
    """
    Runs one episode against a model.

    The agent picks each token; its text goes to the parser first so the gate
    for that token follows the parser state, then the token is decoded.
    """

    def __init__(self, model, tokenizer, layout, gate_cfg, budget_cfg, mode, agent=None,
                 retain_raw=False, seeds=None, tag=None, diagnostic_heads=None):
        self.model = model
        self.tokenizer = tokenizer
        self.layout = layout
        self.gate_cfg = gate_cfg
        self.budget_cfg = budget_cfg
        self.mode = Mode(mode)
        self.agent = agent if agent is not None else ModelAgent(tokenizer)
        self.retain_raw = retain_raw
        self.seeds = dict(seeds or {})
        self.tag = tag
        self.diagnostic_heads = diagnostic_heads
        tokenizer.check_vocab(model.config.vocab_size)

    def _reset(self, session):
        self.session = session
        self.logits = session.last_logits
        self.state = initial_state(self.layout.num_images)
        self.transcript = ""
        self.token_starts = []
        self.events = []
        self.budget = BudgetState()
        self.steps = []
        self.focused = set()
        self.plan_completed = False
        self.current_block = None
        self.error = None
        self.rejected_text = None

    def run(self, prompt_tokens):
        """
        Prefill the prompt and decode until a termination condition holds.

        Args:
            prompt_tokens (sequence): Prompt ids covering ``layout``

        Returns:
            EpisodeResult: Transcript, events with token spans, trace and budget state
        """
        room = self.model.config.max_seq_len - self.layout.total_len - CLOSURE_RESERVE
        total_cap = self.budget_cfg.total_token_cap
        if room < total_cap:
            logger.warning(f"Total token cap {total_cap} clamped to {max(room, 0)} to fit max_seq_len")
            total_cap = max(room, 0)
        session = self.model.prefill(
            prompt_tokens, self.layout, diagnostic_heads=self.diagnostic_heads,
            max_new_tokens=total_cap + CLOSURE_RESERVE,
        )
        self._reset(session)
        self.total_cap = total_cap
        logger.info(
            f"Episode start: mode={self.mode.value} lambda={self.gate_cfg.lam} "
            f"images={self.layout.num_images} prompt_len={self.layout.total_len}"
        )
        if self.mode is Mode.FREE_COT:
            reason = self._run_free()
        else:
            reason = self._run_structured()
        self.budget.terminated_reason = reason
        logger.info(
            f"Episode stop: reason={reason.value} steps={len(self.steps)} "
            f"cycles={self.budget.cycles_completed}"
        )
        return self._result()

    def _run_structured(self):
        while True:
            if self.budget.total_tokens >= self.total_cap:
                self._check_events(self._force_close())
                return TerminationReason.BUDGET_EXHAUSTED
            token = self.agent.next_token(self.logits)
            if token is None:
                self._check_events(self._force_close())
                return TerminationReason.STREAM_EXHAUSTED
            try:
                new_events = self._step(token)
            except GrammarError as e:
                logger.warning(f"Grammar error in generated output: {e}")
                self.error = e
                self.rejected_text = self.tokenizer.decode_token(token)
                self._check_events(self._force_close())
                return TerminationReason.GRAMMAR_ERROR
            reason = self._check_events(new_events)
            if reason is not None:
                return reason
            cap = self.budget_cfg.block_cap(self.state.mode)
            if cap is not None and self.budget.tokens_in_current_block >= cap:
                block_type = BlockType(self.state.mode.value)
                logger.info(f"{block_type.value} block hit its {cap}-token cap; forcing closure")
                closing_events = self._force_close()
                self.agent.skip_block(block_type)
                reason = self._check_events(closing_events)
                if reason is not None:
                    return reason

    def _check_events(self, events):
        for event in events:
            if event.kind is EventKind.BLOCK_END:
                if event.block.type is BlockType.ANSWER:
                    return TerminationReason.ANSWER_EMITTED
                if event.block.type is BlockType.PLAN:
                    self.plan_completed = True
                elif event.block.type is BlockType.FOCUS and self.plan_completed:
                    self.plan_completed = False
                    self.budget.cycles_completed += 1
                    if self.budget.cycles_completed >= self.budget_cfg.max_cycles:
                        return TerminationReason.BUDGET_EXHAUSTED
            elif event.kind is EventKind.DIRECTIVE and event.directive.is_end:
                return TerminationReason.END_DIRECTIVE
            elif event.kind is EventKind.BLOCK_START and event.block.type is BlockType.FOCUS:
                self.focused.update(event.block.images)
        return None

    def _step(self, token, injected=False):
        """Parse, gate and decode one token. Raises GrammarError before anything is recorded."""
        text = self.tokenizer.decode_token(token)
        before = self.state
        after, events = feed(before, text)
        step_index = len(self.steps)
        self.state = after
        self.token_starts.append(len(self.transcript))
        self.transcript += text
        events = [self._with_tokens(event, step_index, injected) for event in events]
        self.events.extend(events)

        gate = None
        if self.mode is Mode.PULSEFOCUS:
            gate = gate_schedule(
                self.events, self.layout, self.gate_cfg, self.session.current_len + 1,
                step_index, pending_tag=before.pending or after.pending,
            )
        self.logits, attention = self.model.decode_step(self.session, token, gate)
        self._count(before, after, injected)
        delimiter = before.pending or after.pending or any(event.is_structural for event in events)
        self._record(step_index, text, attention, self._annotation(before, after), delimiter, injected)
        return events

    def _with_tokens(self, event, step_index, injected):
        start = bisect.bisect_right(self.token_starts, event.char_span[0]) - 1
        return replace(event, token_span=(max(start, 0), step_index + 1), injected=injected)

    def _annotation(self, before, after):
        if after.in_block:
            return after.mode.value, after.focus or None, after.block_index
        if before.in_block:
            return before.mode.value, before.focus or None, before.block_index
        return after.mode.value, None, None

    def _count(self, before, after, injected):
        self.budget.total_tokens += 1
        if not after.in_block:
            self.budget.tokens_in_current_block = 0
            self.current_block = None
            return
        if after.block_index != self.current_block:
            self.current_block = after.block_index
            self.budget.tokens_in_current_block = 0
            return
        if injected:
            return
        self.budget.tokens_in_current_block += 1
        count = self.budget.tokens_in_current_block
        if after.mode is ParserMode.IN_PLAN:
            self.budget.max_plan_tokens = max(self.budget.max_plan_tokens, count)
        elif after.mode is ParserMode.IN_FOCUS:
            self.budget.max_focus_tokens = max(self.budget.max_focus_tokens, count)

    def _record(self, step_index, text, attention, annotation, delimiter, injected):
        mode, focus, block = annotation
        self.steps.append(TraceStep(
            step=step_index, token=text, mode=mode, focus=focus, block=block,
            delimiter=delimiter, injected=injected, row=attention.reduced_row,
            raw=attention.rows if self.retain_raw else None,
        ))

    def _discard_pending(self):
        if self.state.pending:
            self.state = self.state.discard_pending()
            self.transcript = self.transcript[:self.state.offset]
            self.token_starts = [min(start, len(self.transcript)) for start in self.token_starts]

    def _closing_text(self):
        """Text that closes the open block; a plan without a directive gets a fallback one."""
        block = self.state.open_block
        if block is None:
            return ""
        if block.type is not BlockType.PLAN:
            return block.close_tag()
        try:
            found = parse_directive(self.state.text, self.layout.num_images)
        except GrammarError:
            found = None
        if found is not None:
            return block.close_tag()
        unfocused = [j for j in range(1, self.layout.num_images + 1) if j not in self.focused]
        directive = f"\nNext focus: I{unfocused[0]}" if unfocused else "\nEND"
        return directive + block.close_tag()

    def _force_close(self):
        """Inject the closing text of the open block (if any) and return the events it produced."""
        self._discard_pending()
        text = self._closing_text()
        if not text:
            return []
        self.budget.forced_closures += 1
        events = []
        for token in self.tokenizer.encode(text):
            events.extend(self._step(token, injected=True))
        logger.info(f"Injected {text!r} to close the open block")
        return events

    def _run_free(self):
        while True:
            if self.budget.total_tokens >= self.total_cap:
                return TerminationReason.BUDGET_EXHAUSTED
            token = self.agent.next_token(self.logits)
            if token is None:
                return TerminationReason.STREAM_EXHAUSTED
            text = self.tokenizer.decode_token(token)
            step_index = len(self.steps)
            self.token_starts.append(len(self.transcript))
            self.transcript += text
            self.logits, attention = self.model.decode_step(self.session, token, None)
            self.budget.total_tokens += 1
            self._record(step_index, text, attention, ("free", None, None), False, False)
            if text.endswith(">") and ANSWER_SPAN_RE.search(self.transcript):
                return TerminationReason.ANSWER_EMITTED

    def _finish_parser(self):
        if self.mode is Mode.FREE_COT:
            return
        try:
            _, tail = finish(self.state)
        except GrammarError:
            self._discard_pending()
            _, tail = finish(self.state)
        step = max(len(self.steps) - 1, 0)
        self.events.extend(replace(event, token_span=(step, step)) for event in tail)

    def _answer(self):
        if self.mode is Mode.FREE_COT:
            matches = ANSWER_SPAN_RE.findall(self.transcript)
            return answer_choice(matches[-1]) if matches else None
        bodies = [event.text for event in self.events if event.kind is EventKind.ANSWER_TEXT]
        return answer_choice(bodies[-1]) if bodies else None

    def _result(self):
        self._finish_parser()
        metadata = TraceMetadata(
            lam=self.gate_cfg.lam,
            mode=self.mode.value,
            seeds=self.seeds,
            model_digest=self.model.digest(),
            selected_layers=tuple(self.session.selected_layers),
            heads=self.session.diagnostic_heads,
            tag=self.tag,
        )
        trace = AttentionTrace(layout=self.layout, steps=self.steps, metadata=metadata)
        return EpisodeResult(
            transcript=self.transcript,
            events=self.events,
            trace=trace,
            budget_state=self.budget,
            mode=self.mode,
            answer=self._answer(),
            error=self.error,
            rejected_text=self.rejected_text,
        )


def run_episode(model, prompt_tokens, layout, gate_cfg, budget_cfg, mode, tokenizer, agent=None, **kwargs):
    """
    Run one episode; see ``EpisodeController``.

    Returns:
        EpisodeResult: The finished episode
    """
    controller = EpisodeController(model, tokenizer, layout, gate_cfg, budget_cfg, mode, agent=agent, **kwargs)
    return controller.run(prompt_tokens)
