"""Exception types shared across the package."""


class ActivePropError(Exception):
    """Base class for every error raised by this package."""


class InputError(ActivePropError, ValueError):
    """An argument violates an operation's input domain."""


class GenerationError(ActivePropError, RuntimeError):
    """Synthetic world generation could not satisfy its placement constraints."""


class ConfigError(ActivePropError, ValueError):
    """A configuration file, section, or value is invalid."""


class ParseError(ActivePropError, ValueError):
    """A serialized record is malformed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TrainingDivergedError(ActivePropError, RuntimeError):
    """Training produced a non-finite loss; carries the offending step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
