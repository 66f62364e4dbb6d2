"""
Exception hierarchy shared by the library and the command line.
"""

from typing import Optional


class HotdaError(Exception):
    """Base class for every error raised by this package"""


class InvalidInputError(HotdaError, ValueError):
    """Rejected input: shapes, simplex violations, empty classes, bad files"""


class ConfigError(HotdaError, ValueError):
    """Malformed environment or command-line configuration"""


class SolverError(HotdaError, RuntimeError):
    """A numerical solver failed to produce a valid answer"""

    def __init__(self, message: str, iterations: Optional[int] = None,
                 marginal_violation: Optional[float] = None):
        details = []
        if iterations is not None:
            details.append(f"iterations={iterations}")
        if marginal_violation is not None:
            details.append(f"marginal_violation={marginal_violation:.3e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.iterations = iterations
        self.marginal_violation = marginal_violation
