"""Exception types shared across the package."""


class DexterError(Exception):
    """Base class for all package errors."""


class StationarityError(DexterError, ValueError):
    """AR coefficients violate the |phi| < 1 stationarity requirement."""


class SpliceError(DexterError, ValueError):
    """Pre- and post-injection noise processes are incompatible."""


class ConfigError(DexterError, ValueError):
    """Invalid configuration value or structure."""


class DataError(DexterError, ValueError):
    """Dataset does not satisfy the preconditions of an operation."""


class WindowTooShortError(DataError):
    """Feature window shorter than the minimum supported size."""


class InvalidInputError(DataError):
    """Non-finite or malformed numeric input."""


class SimulationDivergedError(DexterError, RuntimeError):
    """Environment state became non-finite during simulation."""


class IncompatibleModelError(DexterError, ValueError):
    """Model and data disagree on dimensionality or feature catalogue."""


class UndefinedMetricError(DexterError, ValueError):
    """Metric is undefined for the given input (e.g. single-class AUROC)."""
