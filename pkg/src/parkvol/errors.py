"""Exception types raised across the package."""


class ParkvolError(Exception):
    """Base class for all package errors."""


class UnsupportedFormat(ParkvolError):
    """File is not a single-file NIfTI-1 volume we can read."""


class UnsupportedDatatype(ParkvolError):
    """NIfTI datatype code outside the supported subset (2, 4, 16)."""


class CorruptFile(ParkvolError):
    """Header or data section is truncated or inconsistent."""


class WriteError(ParkvolError):
    """Volume/mask could not be written to disk."""


class InvalidArgument(ParkvolError):
    """Caller violated an operation precondition."""


class ConfigError(ParkvolError):
    """Model configuration violates an architecture invariant."""


class ModelStateError(ParkvolError):
    """Operation requires a trained model."""


class DivergenceError(ParkvolError):
    """Training loss became NaN; carries the history up to the failure."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class ConvergenceError(ParkvolError):
    """Iterative fit did not reach tolerance; carries the last iterate."""

    def __init__(self, message, classifier=None):
        super().__init__(message)
        self.classifier = classifier


class UndefinedRatio(ParkvolError):
    """Midbrain/pons ratio requested with zero pons volume."""


class RefusedOverwrite(ParkvolError):
    """Output directory exists and is non-empty; rerun with --force."""
