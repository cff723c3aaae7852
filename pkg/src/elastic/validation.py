"""Input validation helpers shared by every module.

A "grid" is a rank-3 float64 array (height, width, channels).  Validators
return the checked (and, when necessary, converted) array so call sites can
write ``x = check_grid(x)``.
"""

from __future__ import annotations

import numpy as np


def require(condition: bool, message: str) -> None:
    """Raise ValueError with `message` unless `condition` holds."""
    if not condition:
        raise ValueError(message)


def check_grid(a, name: str = "grid") -> np.ndarray:
    """Validate a (H, W, C) grid: rank 3, positive dims, finite float values."""
    arr = np.asarray(a, dtype=np.float64)
    require(arr.ndim == 3, f"{name} must have shape (height, width, channels), got ndim={arr.ndim}")
    h, w, c = arr.shape
    require(h >= 1 and w >= 1 and c >= 1, f"{name} must have positive dimensions, got {arr.shape}")
    ensure_finite(arr, name)
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str = "a", name_b: str = "b") -> None:
    require(
        a.shape == b.shape,
        f"shape mismatch: {name_a} has {a.shape}, {name_b} has {b.shape}",
    )


def check_mask(m, height: int, width: int, name: str = "mask") -> np.ndarray:
    """Validate a (H, W) boolean mask against the given spatial dims."""
    arr = np.asarray(m)
    require(arr.ndim == 2, f"{name} must have shape (height, width), got ndim={arr.ndim}")
    require(
        arr.shape == (height, width),
        f"{name} shape {arr.shape} does not match grid spatial dims ({height}, {width})",
    )
    if arr.dtype != np.bool_:
        require(
            bool(np.isin(arr, (0, 1)).all()),
            f"{name} must be boolean or 0/1 valued",
        )
        arr = arr.astype(bool)
    return arr


def ensure_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_index(value: int, low: int, high: int, name: str) -> int:
    """Validate an integer in the inclusive range [low, high]."""
    v = int(value)
    require(low <= v <= high, f"{name} must be in [{low}, {high}], got {value}")
    return v
