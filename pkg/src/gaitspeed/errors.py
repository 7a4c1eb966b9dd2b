"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
CompatibilityError -> 3, NumericalError -> 4.
"""


class GaitspeedError(Exception):
    """Base class for all package-specific errors."""


class InvalidRotationError(GaitspeedError):
    """A quaternion input is too far from unit norm."""


class ConfigError(GaitspeedError):
    """A configuration document is malformed or inconsistent."""


class CompatibilityError(GaitspeedError):
    """Checkpoint and requested usage do not match (e.g. training scheme)."""


class NumericalError(GaitspeedError):
    """Non-finite values encountered where finite ones are required."""


class UsageError(GaitspeedError):
    """An API was called in a state where the call is not allowed."""


class EstimatorDivergenceError(NumericalError):
    """The recurrent estimator produced a non-finite carry."""
