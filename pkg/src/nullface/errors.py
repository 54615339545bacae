"""Exception hierarchy.

The CLI maps these onto exit codes: ValidationError -> 2 (usage),
PluginError -> 3, DataCorruptionError / FingerprintMismatchError -> 4.
"""


class NullfaceError(Exception):
    """Base class for all package errors."""


class ValidationError(NullfaceError, ValueError):
    """Invalid argument, shape, or parameter range."""


class PluginError(NullfaceError):
    """A backend plugin failed, misbehaved, or could not be resolved."""


class FaceNotFoundError(PluginError):
    """An identity embedder could not locate a face in the input."""


class DataCorruptionError(NullfaceError):
    """A persisted artifact is truncated, tampered with, or version-incompatible."""


class FingerprintMismatchError(DataCorruptionError):
    """Stored fingerprints do not match the plugins or schedule in use."""
