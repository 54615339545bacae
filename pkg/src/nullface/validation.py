"""Input validation helpers shared across the package.

Latents are float32 numpy arrays of shape (channels, height, width);
images are uint8 numpy arrays of shape (height, width, 3).
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_latent(x, name: str = "latent") -> np.ndarray:
    """Coerce to a float32 (C, H, W) array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValidationError(f"{name} must have shape (channels, height, width), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch between {names}: {a.shape} vs {b.shape}")


def check_finite_scalar(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


def check_range(value, name: str, low=None, high=None, integer: bool = False):
    """Validate a scalar against an inclusive range; returns the coerced value."""
    if integer:
        if int(value) != value:
            raise ValidationError(f"{name} must be an integer, got {value!r}")
        value = int(value)
    else:
        value = check_finite_scalar(value, name)
    if low is not None and value < low:
        raise ValidationError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ValidationError(f"{name} must be <= {high}, got {value}")
    return value


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an 8-bit RGB image buffer of shape (H, W, 3)."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains non-finite pixels")
        raise ValidationError(f"{name} must be uint8, got dtype {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"{name} must have shape (height, width, 3), got {arr.shape}")
    return arr
