"""Exception types raised across the package."""


class GridFragError(Exception):
    """Base class for package errors."""


class ContractError(GridFragError, ValueError):
    """An operation was called with arguments that violate its preconditions."""


class ParseError(GridFragError, ValueError):
    """A CSV row could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(GridFragError, ValueError):
    """Parsed data violate a type invariant."""


class DataError(GridFragError, ValueError):
    """Not enough usable data remain."""


class DegenerateFitError(GridFragError, ValueError):
    """A distribution cannot be fitted to the supplied values."""


class NoInformationError(GridFragError, ValueError):
    """The failure record carries no information about the parameters."""


class PriorConstructionError(GridFragError, RuntimeError):
    """Too many bootstrap replicate fits failed."""


class UnderflowError(GridFragError, ArithmeticError):
    """Every Monte Carlo draw had zero likelihood."""


class MissingPrerequisiteError(GridFragError, FileNotFoundError):
    """An input artifact expected on disk is absent."""


class SamplerDegenerateWarning(UserWarning):
    """The prior covariance was singular and a fallback jump scale was used."""
