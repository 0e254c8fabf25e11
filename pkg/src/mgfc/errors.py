"""Exception hierarchy shared across the package."""


class MgfcError(Exception):
    """Base class for all package errors."""


class ParseError(MgfcError, ValueError):
    """Raised when an input file cannot be decoded into its schema."""


class ValidationError(MgfcError, ValueError):
    """Raised when parsed data violates a documented invariant."""


class CheckpointError(MgfcError, ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


class TrainingError(MgfcError, RuntimeError):
    """Raised when a training run cannot continue (e.g. non-finite loss)."""
