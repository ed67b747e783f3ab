"""Exception types shared across the toolkit.

The CLI maps these onto stable exit codes: configuration problems exit
with 2, I/O and dataset problems with 3, numeric divergence with 4.
"""


class SpeckleKitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SpeckleKitError):
    """Invalid configuration value or malformed config document."""


class ShapeError(SpeckleKitError):
    """Array/image dimensions inconsistent with an operation's contract."""


class DomainError(SpeckleKitError):
    """Query outside the valid domain (e.g. a point outside the phantom)."""


class InputError(SpeckleKitError):
    """Input data violates a numeric precondition (non-finite, negative...)."""


class DatasetError(SpeckleKitError):
    """Dataset generation or loading failed (missing/corrupt files)."""


class TrainingDivergedError(SpeckleKitError):
    """Training produced a non-finite loss or gradient."""
