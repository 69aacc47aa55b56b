"""
Error hierarchy shared by the library and the CLI.

Every error carries the exit code the CLI returns for it:
1 for usage/configuration/input problems, 2 for runtime or numerical failures.
"""

from typing import Optional, Sequence


class BerksonMDError(Exception):
    """Base class for all package errors"""

    exit_code = 2


class ConfigurationError(BerksonMDError, ValueError):
    """Invalid configuration: unknown key, out-of-range value, missing capability"""

    exit_code = 1

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DataFormatError(BerksonMDError, ValueError):
    """Dataset file could not be parsed or has the wrong shape"""

    exit_code = 1

    def __init__(
        self, message: str, row: Optional[int] = None, column: Optional[str] = None
    ):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class CalibrationError(BerksonMDError, ArithmeticError):
    """The regression function returned non-finite values during calibration"""

    def __init__(self, theta: Sequence[float], z: Sequence[float]):
        self.theta = tuple(float(t) for t in theta)
        self.z = tuple(float(v) for v in z)
        super().__init__(
            f"non-finite model evaluation while calibrating at theta={self.theta}, "
            f"z={self.z}"
        )


class SingularFitError(BerksonMDError, ArithmeticError):
    """The minimum-distance normal equations are singular"""

    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)


class IdentifiabilityError(BerksonMDError, ArithmeticError):
    """Sigma_0 is singular, so the parameter is not identified"""


class DegenerateVarianceError(BerksonMDError, ArithmeticError):
    """The variance estimate of the test statistic is not positive"""


class MonteCarloError(BerksonMDError):
    """Too many Monte Carlo replications failed"""

    def __init__(self, failures: int, reps: int):
        self.failures = failures
        self.reps = reps
        super().__init__(
            f"{failures} of {reps} replications failed (more than 5%); "
            "inspect the replication failure log"
        )
