"""Exception hierarchy for the toolkit.

Two branches matter for CLI exit codes: ValidationError (bad input, exit 1)
and NumericalError (computation failed, exit 2). Plain I/O failures propagate
as OSError.
"""


class MergeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MergeError):
    """Input rejected before any numerical work."""


class FormatError(ValidationError):
    """Checkpoint container is malformed (bad header, offsets, shapes)."""


class UnsupportedDtype(FormatError):
    """Container declares a dtype tag the toolkit does not handle."""


class StructureMismatch(ValidationError):
    """Checkpoints/factors disagree in names, dtypes or shapes."""


class BaseMismatch(ValidationError):
    """Task vector was computed against a different base checkpoint."""


class EmptyInput(ValidationError):
    """An operation received an empty model/task-vector list."""


class InvalidParameter(ValidationError):
    """A hyperparameter is outside its documented range."""


class MissingField(ValidationError):
    """A recipe is missing a required field."""


class UnknownMethod(ValidationError):
    """A recipe names a merge method the toolkit does not provide."""


class DegenerateInput(ValidationError):
    """Input is geometrically degenerate (zero norm, cancelling directions)."""


class NumericalError(MergeError):
    """Numerical computation cannot proceed (non-finite input, zero matrix)."""


class IllConditioned(NumericalError):
    """Matrix too close to rank-deficient for the requested factorization."""
