from typing import Optional, Sequence


class FractalError(Exception):
    """Base class for every failure raised by the fractal expansion library"""
    exit_code = 2


class UsageError(FractalError, ValueError):
    """Invalid arguments or violated size/rank preconditions"""
    exit_code = 1


class DataError(FractalError):
    """Malformed, empty or numerically degenerate input data"""
    exit_code = 2


class ConvergenceError(DataError):
    """Truncated SVD did not reach the residual tolerance"""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class RankDeficiencyError(DataError):
    """Gram matrix too close to singular for an inverse square root"""

    def __init__(self, message: str, smallest_eigenvalue: float = 0.0, threshold: float = 0.0):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue
        self.threshold = threshold


class SizeGuardError(DataError):
    """An operation would allocate more than it is allowed to"""


class VerificationError(FractalError):
    """Checksum, count or statistics mismatch in an expansion output"""
    exit_code = 3
