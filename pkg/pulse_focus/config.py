# ABOUTME: Configuration management for PulseFocus runs
# ABOUTME: Environment defaults via python-dotenv, model presets, run specs and config-file loading

import os
from dataclasses import dataclass, field

from dotenv import dotenv_values, load_dotenv

from pulse_focus.exceptions import ConfigurationError
from pulse_focus.model.transformer import ModelConfig
from pulse_focus.services.analytics import DEFAULT_DIFFUSE_THRESHOLD, DEFAULT_PULSE_Z
from pulse_focus.services.controller import DEFAULT_FOCUS_MAX_TOKENS, DEFAULT_MAX_CYCLES, DEFAULT_PLAN_MAX_TOKENS
from pulse_focus.services.gating import DEFAULT_LAMBDA

# Load environment variables from .env file if it exists
load_dotenv()

MODEL_PRESETS = {
    "tiny": dict(num_layers=2, num_heads=4, head_dim=16, vocab_size=256, max_seq_len=8192),
    "small": dict(num_layers=4, num_heads=8, head_dim=32, vocab_size=512, max_seq_len=8192),
}

MODES = ("pulsefocus", "plan-focus-nogate", "free-cot")

DEFAULT_NUM_IMAGES = 6
DEFAULT_IMAGE_TOKENS = 16


class Config:
    """Configuration class for PulseFocus."""

    def __init__(self):
        """Initialize configuration with values from environment variables or defaults."""
        # Output location (the only setting read from the environment)
        self.output_dir = os.getenv('PULSE_FOCUS_OUTPUT_DIR', 'pulse_focus_out')

        # Analytics
        self.diffuse_threshold = DEFAULT_DIFFUSE_THRESHOLD
        self.pulse_z = DEFAULT_PULSE_Z

        self.debug = False


def model_config(preset, seed):
    """Resolve a preset name into a ModelConfig seeded with ``seed``."""
    if preset not in MODEL_PRESETS:
        raise ConfigurationError(f"Unknown preset '{preset}'; choose from {sorted(MODEL_PRESETS)}")
    return ModelConfig(rng_seed=seed, **MODEL_PRESETS[preset])


@dataclass
class RunSpec:
    """Everything the ``run`` command needs; validated on construction."""

    preset: str = "tiny"
    mode: str = "pulsefocus"
    gate_lambda: float = DEFAULT_LAMBDA
    plan_max_tokens: int = DEFAULT_PLAN_MAX_TOKENS
    focus_max_tokens: int = DEFAULT_FOCUS_MAX_TOKENS
    max_cycles: int = DEFAULT_MAX_CYCLES
    total_token_cap: int = None
    num_images: int = DEFAULT_NUM_IMAGES
    image_tokens: int = DEFAULT_IMAGE_TOKENS
    seed: int = 0
    prompt_seed: int = 0
    sample_seed: int = 0
    temperature: float = 0.0
    template_path: str = None
    scripted_path: str = None
    output_dir: str = None
    name: str = None
    tag: str = None
    retain_raw: bool = False
    diagnostic_heads: list = field(default=None)

    def __post_init__(self):
        if self.preset not in MODEL_PRESETS:
            raise ConfigurationError(f"Unknown preset '{self.preset}'; choose from {sorted(MODEL_PRESETS)}")
        if self.mode not in MODES:
            raise ConfigurationError(f"Unknown mode '{self.mode}'; choose from {list(MODES)}")
        if not self.gate_lambda >= 0:
            raise ConfigurationError(f"--lambda must be non-negative, got {self.gate_lambda}")
        for name in ("plan_max_tokens", "focus_max_tokens", "max_cycles", "image_tokens"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.total_token_cap is not None and self.total_token_cap <= 0:
            raise ConfigurationError(f"total_token_cap must be positive, got {self.total_token_cap}")
        if self.num_images < 0:
            raise ConfigurationError(f"num_images must be non-negative, got {self.num_images}")
        if self.temperature < 0:
            raise ConfigurationError(f"temperature must be non-negative, got {self.temperature}")
        if self.name is None:
            self.name = f"{self.mode}-seed{self.seed}"

    @property
    def seeds(self):
        return {"model": self.seed, "prompt": self.prompt_seed, "sample": self.sample_seed}


def load_config_file(path, commands):
    """
    Read a ``key=value`` config file into a click ``default_map``.

    Keys are ``<subcommand>.<option>`` with the option's parameter name, for
    example ``run.gate_lambda=2.0``. Option names use underscores.

    Args:
        path (str): Config file path
        commands (dict): Subcommand name -> set of parameter names

    Returns:
        dict: {subcommand: {option: value}}

    Raises:
        ConfigurationError: On keys that name no known subcommand option
    """
    default_map = {}
    for key, value in dotenv_values(path).items():
        command, _, option = key.partition(".")
        option = option.replace("-", "_")
        if command not in commands or option not in commands[command]:
            raise ConfigurationError(f"Unknown config key '{key}' in {path}")
        default_map.setdefault(command, {})[option] = value
    return default_map
