# ABOUTME: Deterministic, seeded, desk-scale decoder-only transformer with a KV cache
# ABOUTME: Exposes an additive pre-softmax attention-logit hook used by soft gating

import copy
import hashlib
import json
import logging
import threading
from dataclasses import asdict, dataclass

import numpy as np

from pulse_focus.exceptions import (
    ConfigurationError, GateError, LayoutError, SequenceOverflowError, SessionError
)
from pulse_focus.services.analytics import select_diagnostic_layers
from pulse_focus.utils.numeric import softmax

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5
# Cache slots allocated past the prompt when the caller gives no generation budget
DEFAULT_CACHE_HEADROOM = 256


@dataclass(frozen=True)
class ModelConfig:
    """
    Hyperparameters of the toy decoder.

    Give either ``head_dim`` or ``hidden_dim``; the other is derived as
    ``hidden_dim = num_heads * head_dim``.
    """

    num_layers: int
    num_heads: int
    head_dim: int = None
    vocab_size: int = 256
    max_seq_len: int = 2048
    rng_seed: int = 0
    hidden_dim: int = None
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.head_dim is None and self.hidden_dim is None:
            raise ConfigurationError("Either head_dim or hidden_dim must be given")
        for name in ("num_layers", "num_heads", "vocab_size", "max_seq_len", "mlp_ratio"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_dim is None:
            if self.head_dim <= 0:
                raise ConfigurationError(f"head_dim must be positive, got {self.head_dim}")
            object.__setattr__(self, "hidden_dim", self.num_heads * self.head_dim)
        else:
            if self.hidden_dim <= 0:
                raise ConfigurationError(f"hidden_dim must be positive, got {self.hidden_dim}")
            if self.hidden_dim % self.num_heads != 0:
                raise ConfigurationError(
                    f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
                )
            derived = self.hidden_dim // self.num_heads
            if self.head_dim is not None and self.head_dim != derived:
                raise ConfigurationError(
                    f"head_dim {self.head_dim} disagrees with hidden_dim/num_heads = {derived}"
                )
            object.__setattr__(self, "head_dim", derived)
        if not -(2 ** 63) <= self.rng_seed < 2 ** 64:
            raise ConfigurationError("rng_seed must fit in 64 bits")

    def digest(self):
        """Short, stable fingerprint of the config (recorded in trace headers)."""
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class StepAttention:
    """
    Attention recorded for one decode step.

    ``rows`` has shape (len(selected_layers), num_heads, T) and holds the
    post-softmax weights of the query token over all T attended positions;
    ``reduced_row`` is their mean over the diagnostic heads.
    """

    step_index: int
    selected_layers: tuple
    rows: np.ndarray
    reduced_row: np.ndarray
    heads: tuple = None


@dataclass
class _LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


def _layer_norm(x):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LAYER_NORM_EPS)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DecodeSession:
    """
    KV cache plus bookkeeping for one sequence.

    A session is single-threaded: a second concurrent ``decode_step`` raises
    ``SessionError``. Distinct sessions share only the immutable weights.
    """

    def __init__(self, model, layout, keys, values, current_len, last_logits,
                 selected_layers, diagnostic_heads=None):
        self.model = model
        self.layout = layout
        self.keys = keys
        self.values = values
        self.current_len = current_len
        self.last_logits = last_logits
        self.selected_layers = tuple(selected_layers)
        self.diagnostic_heads = tuple(diagnostic_heads) if diagnostic_heads is not None else None
        self.steps = 0
        self.active = True
        self._lock = threading.Lock()

    @property
    def prompt_len(self):
        return self.layout.total_len

    @property
    def capacity(self):
        return self.keys[0].shape[1] if self.keys else 0

    def ensure_capacity(self, length):
        """Grow the KV cache to hold ``length`` positions, doubling up to ``max_seq_len``."""
        capacity = self.capacity
        if length <= capacity:
            return
        cfg = self.model.config
        grown_to = min(max(length, 2 * capacity), cfg.max_seq_len)
        for caches in (self.keys, self.values):
            for index, cache in enumerate(caches):
                grown = np.zeros((cfg.num_heads, grown_to, cfg.head_dim))
                grown[:, :capacity, :] = cache
                caches[index] = grown
        logger.debug(f"KV cache grown from {capacity} to {grown_to} positions")

    def fork(self):
        """Independent copy of this session (cache included) sharing the weights."""
        twin = DecodeSession(
            self.model, self.layout,
            [k.copy() for k in self.keys], [v.copy() for v in self.values],
            self.current_len, copy.copy(self.last_logits),
            self.selected_layers, self.diagnostic_heads,
        )
        twin.steps = self.steps
        return twin

    def close(self):
        self.active = False
        self.keys = []
        self.values = []


class TransformerModel:
    """
    Pre-norm decoder-only transformer in float64 numpy.

    Weight initialization, in draw order from ``numpy.random.default_rng(rng_seed)``:
    token embedding (vocab x d) and position embedding (max_seq_len x d) from
    U(-1, 1); then for each layer Wq, Wk, Wv, Wo (d x d), W1 (d x 4d), W2 (4d x d);
    then the output projection (d x vocab). Every matrix is drawn from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Layer norms carry no parameters and there
    are no biases. Weights are never modified after construction.
    """

    def __init__(self, config):
        self.config = config
        d = config.hidden_dim
        rng = np.random.default_rng(config.rng_seed)
        self.token_embedding = rng.uniform(-1.0, 1.0, size=(config.vocab_size, d))
        self.position_embedding = rng.uniform(-1.0, 1.0, size=(config.max_seq_len, d))
        self.layers = []
        for _ in range(config.num_layers):
            self.layers.append(_LayerWeights(
                wq=_uniform(rng, (d, d), d),
                wk=_uniform(rng, (d, d), d),
                wv=_uniform(rng, (d, d), d),
                wo=_uniform(rng, (d, d), d),
                w1=_uniform(rng, (d, config.mlp_ratio * d), d),
                w2=_uniform(rng, (config.mlp_ratio * d, d), config.mlp_ratio * d),
            ))
        self.output = _uniform(rng, (d, config.vocab_size), d)
        self.scale = 1.0 / np.sqrt(config.head_dim)
        logger.debug(f"Initialized model {config.digest()} ({config.num_layers} layers, d={d})")

    def digest(self):
        return self.config.digest()

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ConfigurationError(f"Token ids must lie in [0, {self.config.vocab_size})")
        return tokens

    def _mlp(self, h, layer):
        return _gelu(h @ layer.w1) @ layer.w2

    def _forward_full(self, tokens):
        """Causal pass over a whole sequence; returns logits and per-layer K/V."""
        cfg = self.config
        length = len(tokens)
        heads, head_dim = cfg.num_heads, cfg.head_dim
        x = self.token_embedding[tokens] + self.position_embedding[:length]
        future = np.triu(np.ones((length, length), dtype=bool), k=1)
        keys, values = [], []
        for layer in self.layers:
            h = _layer_norm(x)
            q = (h @ layer.wq).reshape(length, heads, head_dim).transpose(1, 0, 2)
            k = (h @ layer.wk).reshape(length, heads, head_dim).transpose(1, 0, 2)
            v = (h @ layer.wv).reshape(length, heads, head_dim).transpose(1, 0, 2)
            scores = np.matmul(q, k.transpose(0, 2, 1)) * self.scale
            scores = np.where(future, -np.inf, scores)
            weights = softmax(scores, axis=-1)
            context = np.matmul(weights, v).transpose(1, 0, 2).reshape(length, cfg.hidden_dim)
            x = x + context @ layer.wo
            x = x + self._mlp(_layer_norm(x), layer)
            keys.append(k)
            values.append(v)
        logits = _layer_norm(x) @ self.output
        return logits, keys, values

    def forward(self, tokens):
        """
        Full recomputation without a cache.

        Args:
            tokens (sequence): Token ids

        Returns:
            np.ndarray: Logits of shape (len(tokens), vocab_size)
        """
        tokens = self._check_tokens(tokens)
        if len(tokens) > self.config.max_seq_len:
            raise SequenceOverflowError(
                f"Sequence of {len(tokens)} tokens exceeds max_seq_len {self.config.max_seq_len}"
            )
        logits, _, _ = self._forward_full(tokens)
        return logits

    def prefill(self, tokens, layout, selected_layers=None, diagnostic_heads=None, max_new_tokens=None):
        """
        Run the prompt through the model and fill the KV cache.

        Args:
            tokens (sequence): Prompt token ids, one per layout position
            layout (TokenLayout): Position map of the prompt
            selected_layers (list, optional): Layers whose attention rows are recorded;
                defaults to the 0%/50%/100% depth layers
            diagnostic_heads (list, optional): Head subset for the reduced row
            max_new_tokens (int, optional): Expected generation length, used to size
                the KV cache; the cache grows past it when needed

        Returns:
            DecodeSession: Session positioned after the prompt
        """
        cfg = self.config
        tokens = self._check_tokens(tokens)
        if len(tokens) != layout.total_len:
            raise LayoutError(
                f"Prompt has {len(tokens)} tokens but layout covers {layout.total_len} positions"
            )
        if len(tokens) == 0:
            raise LayoutError("Prompt must contain at least one token")
        if len(tokens) > cfg.max_seq_len:
            raise SequenceOverflowError(
                f"Prompt of {len(tokens)} tokens exceeds max_seq_len {cfg.max_seq_len}"
            )
        if selected_layers is None:
            selected_layers = select_diagnostic_layers(cfg.num_layers)
        for layer_index in selected_layers:
            if not 0 <= layer_index < cfg.num_layers:
                raise ConfigurationError(f"Selected layer {layer_index} out of range")
        if diagnostic_heads is not None:
            for head in diagnostic_heads:
                if not 0 <= head < cfg.num_heads:
                    raise ConfigurationError(f"Diagnostic head {head} out of range")

        logits, keys, values = self._forward_full(tokens)
        length = len(tokens)
        headroom = DEFAULT_CACHE_HEADROOM if max_new_tokens is None else max(int(max_new_tokens), 1)
        capacity = min(length + headroom, cfg.max_seq_len)
        key_cache, value_cache = [], []
        for k, v in zip(keys, values):
            kc = np.zeros((cfg.num_heads, capacity, cfg.head_dim))
            vc = np.zeros((cfg.num_heads, capacity, cfg.head_dim))
            kc[:, :length, :] = k
            vc[:, :length, :] = v
            key_cache.append(kc)
            value_cache.append(vc)
        return DecodeSession(
            self, layout, key_cache, value_cache, length, logits[-1],
            selected_layers, diagnostic_heads,
        )

    def decode_step(self, session, token, gate=None):
        """
        Feed one token, optionally adding gate offsets to every head's attention logits.

        Args:
            session (DecodeSession): Active session
            token (int): Token id appended at position ``session.current_len``
            gate (GateVector or array, optional): Additive offsets, one per attended position

        Returns:
            tuple: (logits over the vocabulary, StepAttention for the selected layers)
        """
        if not session.active:
            raise SessionError("Decode session is closed")
        if not session._lock.acquire(blocking=False):
            raise SessionError("Concurrent decode steps on one session are not allowed")
        try:
            return self._decode_locked(session, token, gate)
        finally:
            session._lock.release()

    def _decode_locked(self, session, token, gate):
        cfg = self.config
        position = session.current_len
        if position >= cfg.max_seq_len:
            raise SequenceOverflowError(
                f"Decode at position {position} exceeds max_seq_len {cfg.max_seq_len}"
            )
        if not 0 <= token < cfg.vocab_size:
            raise ConfigurationError(f"Token id {token} out of range [0, {cfg.vocab_size})")
        session.ensure_capacity(position + 1)
        attended = position + 1
        offsets = None
        if gate is not None:
            offsets = np.asarray(gate, dtype=np.float64)
            if offsets.shape != (attended,):
                raise GateError(f"Gate length {offsets.shape} does not match attended length {attended}")

        heads, head_dim = cfg.num_heads, cfg.head_dim
        selected = session.selected_layers
        recorded = []
        x = self.token_embedding[token] + self.position_embedding[position]
        for layer_index, layer in enumerate(self.layers):
            h = _layer_norm(x)
            q = (h @ layer.wq).reshape(heads, head_dim)
            session.keys[layer_index][:, position, :] = (h @ layer.wk).reshape(heads, head_dim)
            session.values[layer_index][:, position, :] = (h @ layer.wv).reshape(heads, head_dim)
            keys = session.keys[layer_index][:, :attended, :]
            values = session.values[layer_index][:, :attended, :]
            scores = np.matmul(keys, q[:, :, None])[:, :, 0] * self.scale
            if offsets is not None:
                scores = scores + offsets
            weights = softmax(scores, axis=-1)
            if layer_index in selected:
                recorded.append(weights)
            context = np.matmul(weights[:, None, :], values)[:, 0, :].reshape(cfg.hidden_dim)
            x = x + context @ layer.wo
            x = x + self._mlp(_layer_norm(x), layer)
        logits = _layer_norm(x) @ self.output

        rows = np.stack(recorded)
        if session.diagnostic_heads is None:
            reduced = rows.mean(axis=(0, 1))
        else:
            reduced = rows[:, list(session.diagnostic_heads), :].mean(axis=(0, 1))
        attention = StepAttention(
            step_index=session.steps,
            selected_layers=selected,
            rows=rows,
            reduced_row=reduced,
            heads=session.diagnostic_heads,
        )
        session.current_len += 1
        session.steps += 1
        session.last_logits = logits
        return logits, attention


def init_model(config):
    """Build a model from a validated config."""
    return TransformerModel(config)


def prefill(model, tokens, layout, **kwargs):
    return model.prefill(tokens, layout, **kwargs)


def decode_step(session, token, gate=None):
    return session.model.decode_step(session, token, gate)
