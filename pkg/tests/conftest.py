"""Test configuration for pytest."""
import os

import numpy as np
import pytest

from pulse_focus.config import Config
from pulse_focus.model.layout import TokenLayout
from pulse_focus.model.prompt import build_prompt
from pulse_focus.model.tokenizer import Tokenizer
from pulse_focus.model.transformer import ModelConfig, StepAttention, init_model
from pulse_focus.utils.numeric import softmax

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

SIMPLE_TRANSCRIPT = (
    "<plan>Look at the second image. Next focus: I2</plan>\n"
    "<focus:I2>ab</focus>\n"
    "<answer> A </answer>"
)


class UniformSession:
    """Minimal decode session for UniformAttentionModel."""

    def __init__(self, layout, current_len, vocab_size, diagnostic_heads):
        self.layout = layout
        self.current_len = current_len
        self.last_logits = np.zeros(vocab_size)
        self.selected_layers = (0,)
        self.diagnostic_heads = tuple(diagnostic_heads) if diagnostic_heads is not None else None
        self.steps = 0

    @property
    def prompt_len(self):
        return self.layout.total_len


class UniformAttentionModel:
    """
    Model double whose attention logits are all zero.

    Each recorded row is softmax(gate), so ungated rows are uniform and gated
    rows follow the closed-form gated distribution exactly.
    """

    def __init__(self, vocab_size=128, max_seq_len=4096):
        self.config = ModelConfig(
            num_layers=1, num_heads=1, head_dim=4, vocab_size=vocab_size, max_seq_len=max_seq_len,
        )
        self.prefill_calls = []

    def digest(self):
        return "uniform-double"

    def prefill(self, tokens, layout, selected_layers=None, diagnostic_heads=None, max_new_tokens=None):
        assert len(tokens) == layout.total_len
        self.prefill_calls.append({
            "selected_layers": selected_layers, "diagnostic_heads": diagnostic_heads, "max_new_tokens": max_new_tokens,
        })
        return UniformSession(layout, len(tokens), self.config.vocab_size, diagnostic_heads)

    def decode_step(self, session, token, gate=None):
        attended = session.current_len + 1
        scores = np.zeros(attended)
        if gate is not None:
            scores = scores + np.asarray(gate, dtype=np.float64)
        row = softmax(scores)
        attention = StepAttention(
            step_index=session.steps, selected_layers=(0,), rows=row[None, None, :], reduced_row=row,
        )
        session.current_len += 1
        session.steps += 1
        return np.zeros(self.config.vocab_size), attention


@pytest.fixture
def test_config(tmp_path):
    """Create a test configuration writing into a temporary directory."""
    config = Config()
    config.debug = True  # Always use debug mode in tests
    config.output_dir = str(tmp_path / "out")
    return config


@pytest.fixture
def tokenizer():
    """The tag-aware character tokenizer."""
    return Tokenizer()


@pytest.fixture
def tiny_model_config():
    """A small, fast model config."""
    return ModelConfig(num_layers=2, num_heads=2, head_dim=8, vocab_size=128, max_seq_len=1024, rng_seed=0)


@pytest.fixture
def tiny_model(tiny_model_config):
    """A seeded numpy transformer built from tiny_model_config."""
    return init_model(tiny_model_config)


@pytest.fixture
def uniform_model():
    """Cheap model double with uniform attention."""
    return UniformAttentionModel()


@pytest.fixture
def three_image_layout():
    """Text, three 4-token images, then a short text tail."""
    return TokenLayout.from_lengths([("text", 4), ("image", 4), ("image", 4), ("image", 4), ("text", 2)])


@pytest.fixture
def prompt(tokenizer):
    """Token ids and layout of a short three-image prompt."""
    return build_prompt(tokenizer, "Q:\n", [4, 4, 4], 128, seed=0)


@pytest.fixture
def six_image_prompt(tokenizer):
    """Token ids and layout of a short six-image prompt."""
    return build_prompt(tokenizer, "Q:\n", [4] * 6, 128, seed=0)


@pytest.fixture
def fixtures_dir():
    """Directory holding transcripts, traces and golden CSVs."""
    return FIXTURES_DIR


@pytest.fixture
def case_transcript():
    """A six-image plan/focus transcript with a summary and an answer."""
    with open(os.path.join(FIXTURES_DIR, "six_image_dogs.txt"), "r", encoding="utf-8") as f:
        return f.read()


@pytest.fixture
def simple_transcript():
    """One plan/focus cycle followed by an answer, for three images."""
    return SIMPLE_TRANSCRIPT
