"""Exception types shared across the package."""


class DropoutLabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(DropoutLabError):
    """An argument is outside the mathematical domain of an operation."""


class ContractViolationError(DropoutLabError):
    """A caller-supplied object broke a documented contract (e.g. a loss
    function that is not deterministic under a fixed seed)."""


class ShapeError(DropoutLabError):
    """Array shapes are inconsistent with the model architecture."""


class InputError(DropoutLabError):
    """Invalid data fed to a model (e.g. out-of-vocabulary token id)."""


class ConfigError(DropoutLabError):
    """Invalid experiment configuration or grid file."""


class ParseError(DropoutLabError):
    """Malformed input file; carries a line number when available."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergedError(DropoutLabError):
    """Training produced a non-finite loss."""
