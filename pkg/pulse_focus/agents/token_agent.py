# ABOUTME: Token-choosing drivers for episodes: model sampling or a predetermined script
# ABOUTME: The controller asks an agent for each next token and tells it about forced closures

import logging

import numpy as np

from pulse_focus.exceptions import ConfigurationError
from pulse_focus.grammar.events import BlockKind, BlockType

logger = logging.getLogger(__name__)


class ModelAgent:
    """
    Picks the next token from the model's logits.

    Only ids that decode to text are eligible. With ``temperature == 0`` the
    choice is the argmax; otherwise tokens are sampled from the tempered
    softmax with a generator seeded by ``seed``.
    """

    def __init__(self, tokenizer, temperature=0.0, seed=0):
        if temperature < 0:
            raise ConfigurationError(f"temperature must be non-negative, got {temperature}")
        self.tokenizer = tokenizer
        self.temperature = temperature
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        logger.info(f"Model agent initialized (temperature={temperature}, seed={seed})")

    def next_token(self, logits):
        scores = np.asarray(logits, dtype=np.float64)[:self.tokenizer.size]
        if self.temperature == 0:
            return int(np.argmax(scores))
        scaled = scores / self.temperature
        probs = np.exp(scaled - scaled.max())
        probs /= probs.sum()
        return int(self._rng.choice(len(probs), p=probs))

    def skip_block(self, block_type):
        """Nothing to resynchronize: the model continues from the injected text."""


class ScriptedAgent:
    """
    Replays a transcript token by token, ignoring the logits.

    Used to drive the real controller, parser and gating path with a known
    output since the toy model does not follow the format instructions.
    """

    def __init__(self, tokenizer, transcript):
        self.tokenizer = tokenizer
        self.transcript = transcript
        self.tokens = tokenizer.encode(transcript)
        self.position = 0
        self._closers = {
            BlockType.PLAN: tokenizer.encode(BlockKind.plan().close_tag())[0],
            BlockType.FOCUS: tokenizer.encode(BlockKind.focus().close_tag())[0],
            BlockType.ANSWER: tokenizer.encode(BlockKind.answer().close_tag())[0],
        }
        logger.info(f"Scripted agent loaded {len(self.tokens)} tokens")

    @property
    def exhausted(self):
        return self.position >= len(self.tokens)

    def next_token(self, logits):
        if self.exhausted:
            return None
        token = self.tokens[self.position]
        self.position += 1
        return token

    def skip_block(self, block_type):
        """Skip the rest of a block the controller has already closed, including its closing tag."""
        closer = self._closers[BlockType(block_type)]
        skipped = 0
        while not self.exhausted and self.tokens[self.position] != closer:
            self.position += 1
            skipped += 1
        if not self.exhausted:
            self.position += 1
        logger.debug(f"Skipped {skipped} scripted tokens after forced {BlockType(block_type).value} closure")


def create_agent(tokenizer, transcript=None, temperature=0.0, seed=0):
    """
    Create the driver for an episode.

    Args:
        tokenizer (Tokenizer): Tokenizer shared with the controller
        transcript (str, optional): Script to replay; when absent the model drives
        temperature (float): Sampling temperature for the model agent
        seed (int): Sampling seed for the model agent

    Returns:
        ScriptedAgent or ModelAgent
    """
    if transcript is not None:
        return ScriptedAgent(tokenizer, transcript)
    return ModelAgent(tokenizer, temperature=temperature, seed=seed)
