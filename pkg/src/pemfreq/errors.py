"""Exception types raised by the simulator."""


class PemFreqError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(PemFreqError, ValueError):
    """Invalid parameters, dimension mismatch or a bad scenario file."""


class PolicyConfigurationError(ConfigurationError):
    """Control-policy thresholds that leave a non-positive denominator."""


class NumericalInstabilityError(PemFreqError, ArithmeticError):
    """A grid state became non-finite during integration."""


class UndefinedDampingError(PemFreqError, ArithmeticError):
    """Damping cannot be inferred from a zero steady-state deviation."""


class DeviceFaultError(PemFreqError, ArithmeticError):
    """A device thermal state became non-finite."""


class MetricError(PemFreqError, ValueError):
    """A metric was requested outside the recorded trace."""


class AssumptionViolation(PemFreqError):
    """Raised when an estimator assumption fails and the run is set to error."""
