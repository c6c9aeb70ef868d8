"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation/schema problems exit 1,
I/O problems exit 2 (plain OSError), numeric failures exit 3.
"""


class PumpschedError(Exception):
    """Base class for all package errors."""


class SchemaError(PumpschedError):
    """A file or document does not match its documented schema."""


class ValidationError(PumpschedError):
    """A value violates a documented invariant or precondition."""


class NumericError(PumpschedError):
    """A computation produced a non-finite or otherwise unusable value."""


class TrainingError(PumpschedError):
    """Rollout collection or policy optimization failed."""
