"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_image(arr, resolution: int | None = None) -> np.ndarray:
    """Validate an H x W x 3 float image in [0, 1] and return it as float32."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
    if resolution is not None and arr.shape[:2] != (resolution, resolution):
        raise ValueError(
            f"image is {arr.shape[0]}x{arr.shape[1]}, model expects {resolution}x{resolution}"
        )
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def check_label_map(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected an HxW label map, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def check_fraction(value: float, name: str, open_interval: bool = False) -> float:
    value = float(value)
    if open_interval:
        ok = 0.0 < value < 1.0
    else:
        ok = 0.0 <= value <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'(0,1)' if open_interval else '[0,1]'}, got {value}")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_odd_kernel(k: int) -> int:
    k = int(k)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 1, got {k}")
    return k
