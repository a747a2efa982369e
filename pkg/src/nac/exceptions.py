"""Exception types shared across the package.

Everything raised on purpose derives from NacError so the CLI can map
anticipated failures to exit code 1 and let genuine bugs surface as
tracebacks.
"""


class NacError(Exception):
    """Base class for anticipated failures."""


class ShapeError(NacError, ValueError):
    """Operands have incompatible shapes. Message names both shapes."""


class DatasetError(NacError, ValueError):
    """A dataset directory or file violates the on-disk contract."""


class DegenerateCoefficientError(NacError, RuntimeError):
    """A coefficient vector collapsed below the normalization floor."""


class SingularProductError(NacError, RuntimeError):
    """A weight-matrix product is numerically singular.

    Carries the offending smallest singular value in the message.
    """


class NonFiniteLossError(NacError, RuntimeError):
    """The training objective became NaN or infinite."""


class ConfigError(NacError, ValueError):
    """A run configuration value is out of contract."""
