"""Exception hierarchy shared by the pipeline stages.

Each subclass maps to a distinct process exit code so shell callers can
tell configuration mistakes from bad data from numerical failures.
"""


class CadError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(CadError):
    """Malformed configuration, CLI arguments or experiment setup."""

    exit_code = 2


class DataError(CadError):
    """Malformed manifests, images, caches or model files."""

    exit_code = 3


class NumericalError(CadError):
    """Numerical failure (singular matrices, non-convergence)."""

    exit_code = 4
