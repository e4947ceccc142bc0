"""PulseFocus: plan/focus decoding with soft attention gating, and attention-trace analytics."""

__version__ = "0.1.0"
