"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


class DegenerateGradient(ArithmeticError):
    """Raised when a score gradient vanishes away from the target level set."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonFiniteState(ArithmeticError):
    """Raised when a flow state leaves the finite range."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def as_float_array(a, name="array", allow_nonfinite=False, min_ndim=0):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim < min_ndim:
        raise ValueError(f"{name} must have at least {min_ndim} dimensions, got {arr.ndim}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_alpha(alpha, name="alpha"):
    if not isinstance(alpha, numbers.Real) or not 0.0 < float(alpha) < 1.0:
        raise ValueError(f"{name} must lie in the open interval (0, 1), got {alpha!r}")
    return float(alpha)


def check_same_shape(a, b, names=("y_hat", "y")):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {names[0]} {np.shape(a)} vs {names[1]} {np.shape(b)}")


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def is_power_of_two(n):
    n = int(n)
    return n >= 1 and (n & (n - 1)) == 0


class ConvergenceFailure(RuntimeError):
    """Raised when a level-set correction fails to reach its tolerance."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
