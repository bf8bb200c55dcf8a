"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario, channel or policy configuration is invalid."""


class TraceFormatError(ValueError):
    """A line of a trace or log file could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EvictionUnavailable(RuntimeError):
    """Channel eviction needs at least two access channels."""


class PaddingOverflowError(ValueError):
    """A frame is larger than the largest padding bucket."""


class DurationExceeded(RuntimeError):
    """The scenario ran past its virtual-time budget."""


class PhaseError(Exception):
    """An attack phase could not produce a result.

    ``inconclusive`` distinguishes "the side channel gave no usable signal"
    from an outright failure (nothing found, or inconsistent answers).
    """

    def __init__(self, phase: str, reason: str, *, inconclusive: bool = False):
        super().__init__(f"{phase}: {reason}")
        self.phase = phase
        self.reason = reason
        self.inconclusive = inconclusive
