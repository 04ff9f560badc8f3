"""Exception hierarchy shared across the package."""


class ProxieError(Exception):
    """Base class for all errors raised by proxie."""


class SchemaError(ProxieError):
    """A required column or configuration field is missing or malformed."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ParseError(ProxieError):
    """A data cell could not be parsed as a finite number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(ProxieError):
    """Data violate a role invariant (e.g. non-binary treatment)."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConfigurationError(ProxieError):
    """A data-generating model specification is invalid."""


class IdentificationError(ProxieError):
    """A moment system has fewer instruments than parameters."""


class RankDeficiencyError(ProxieError):
    """A linear system is singular or numerically rank deficient."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EvaluationError(ProxieError):
    """A moment function produced non-finite values."""


class CellSupportError(ProxieError):
    """Some cells of a saturated model have no observations."""

    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = tuple(cells)


class NearSingularityError(ProxieError):
    """A saturated 2x2 proxy matrix is too close to singular to invert."""


class InferenceUnreliableError(ProxieError):
    """Too many bootstrap replicates failed for the SE to be trusted."""
