# ABOUTME: Exception hierarchy for the PulseFocus decoding and analytics toolkit
# ABOUTME: Value-style errors subclass ValueError so callers can catch them either way


class PulseFocusError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(PulseFocusError, ValueError):
    """Invalid model config, run spec, budget config or tokenizer/vocab pairing."""


class LayoutError(PulseFocusError, ValueError):
    """Invalid token layout, image index out of range, or prompt/layout mismatch."""


class SequenceOverflowError(PulseFocusError):
    """A prefill or decode step would run past the model's max_seq_len."""


class GateError(PulseFocusError, ValueError):
    """Gate length mismatch, invalid gate strength, or unnormalized oracle input."""


class SessionError(PulseFocusError, RuntimeError):
    """A decode session was used concurrently or after it was closed."""


class AnalyticsError(PulseFocusError, ValueError):
    """An analysis was requested on input that cannot support it."""


class GrammarError(PulseFocusError):
    """
    A transcript violated the plan/focus output grammar.

    Attributes:
        code: Short machine-readable reason, e.g. ``malformed_tag``
        offset: Character offset in the transcript where the error was detected
    """

    def __init__(self, code, message, offset=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.offset = offset

    def __str__(self):
        if self.offset is None:
            return f"{self.code}: {self.message}"
        return f"{self.code} at char {self.offset}: {self.message}"


class TraceFormatError(PulseFocusError):
    """A trace file could not be read; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.message = message
        self.line = line

    def __str__(self):
        if self.line is None:
            return self.message
        return f"line {self.line}: {self.message}"
