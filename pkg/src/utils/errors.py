"""
Error Types
Exception hierarchy shared by the library and the command-line interface.
"""

from typing import Any, List, Optional


class MedsimError(Exception):
    """Base error. Carries the CLI exit code and a context chain."""

    exit_code = 1

    def __init__(self, message: str, context: Optional[List[str]] = None):
        """Initialize the error.

        Args:
            message: Human-readable description of the failure
            context: Optional list of context entries, innermost first
        """
        super().__init__(message)
        self.message = message
        self.context: List[str] = list(context or [])

    def add_context(self, entry: str) -> "MedsimError":
        """Append an outer context entry and return self for re-raising."""
        self.context.append(entry)
        return self

    def describe(self) -> str:
        """Render the message followed by its context chain."""
        if not self.context:
            return self.message
        chain = " <- ".join(reversed(self.context))
        return f"{self.message} (in {chain})"

    def __str__(self) -> str:
        return self.describe()


class ConfigError(MedsimError):
    """Invalid run configuration."""

    exit_code = 2


class DataError(MedsimError):
    """Problems with the input data."""

    exit_code = 3


class SchemaError(DataError):
    """The data does not match the declared causal schema."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class ParseError(DataError):
    """A cell could not be parsed as a number."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class DataValidationError(DataError):
    """A value is missing or lies outside its declared support."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ModelFitError(MedsimError):
    """A conditional model could not be fitted."""

    exit_code = 4


class ConvergenceError(ModelFitError):
    """Newton iterations did not converge."""

    def __init__(self, message: str, last_iterate: Any = None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class SeparationError(ModelFitError):
    """Quasi-complete separation: fitted probabilities collapse to 0 or 1."""


class SamplingError(ModelFitError):
    """Drawing from a fitted model failed."""

    def __init__(self, message: str, row: Optional[int] = None, replicate: Optional[int] = None):
        super().__init__(message)
        self.row = row
        self.replicate = replicate


class BootstrapError(ModelFitError):
    """Too many bootstrap replicates failed."""


class FlowRangeError(ModelFitError):
    """Bisection could not bracket the requested latent value."""


class TrainingDivergenceError(MedsimError):
    """Flow training produced a non-finite loss."""

    exit_code = 5

    def __init__(self, message: str, batch_index: Optional[int] = None):
        super().__init__(message)
        self.batch_index = batch_index
