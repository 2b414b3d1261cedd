"""Exception and warning types shared across the package."""


class DataError(Exception):
    """Base class for problems with input data files."""


class SchemaError(DataError):
    """A required column or config key is missing or malformed."""


class EmptyInputError(DataError):
    """An input file or filtered window contains no usable rows."""


class ValidationError(DataError):
    """A parsed value violates a domain invariant (e.g. population <= 0)."""


class RankDeficientError(Exception):
    """Too few distinct observations to identify the regression coefficients."""


class InfeasibleProblemError(Exception):
    """The allocation constraint set is empty (e.g. a prior rate above 1)."""


class DataQualityWarning(UserWarning):
    """Non-fatal data repair, e.g. a rate clipped back into [0, 1]."""
