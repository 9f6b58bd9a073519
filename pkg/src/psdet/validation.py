"""Input validation helpers shared by every module.

All array-consuming entry points funnel through these checks so that shape
bugs surface as descriptive ``ValueError``s at the boundary instead of as
silent mis-indexing deeper down. No implicit broadcasting anywhere: a
mismatch is always an error.
"""

import numpy as np

__all__ = ["as_feature_map", "check_same_shape", "check_finite", "check_positive_int"]


def as_feature_map(x, name: str = "tensor") -> np.ndarray:
    """Validate and canonicalize a dense 4-D (n, c, h, w) float64 array.

    Returns a C-contiguous float64 view/copy. Rejects anything that is not
    4-D or has a zero-length axis.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, c, h, w), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has a degenerate axis: shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_same_shape(a: np.ndarray, b_shape, name: str = "array") -> None:
    if tuple(a.shape) != tuple(b_shape):
        raise ValueError(f"{name} shape {a.shape} does not match expected {tuple(b_shape)}")


def check_finite(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
