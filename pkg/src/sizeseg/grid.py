"""Grid conventions shared across the package, plus the two evaluation metrics.

Every grid is a 2-D numpy array indexed ``[row, col]`` with ``(0, 0)`` at the
top-left corner. The value conventions are:

* image     -- float64 intensities in ``[0, 1]``
* logits    -- finite float64 network outputs ``a_i``
* mask      -- int8 labels in ``{-1, +1}``; ``+1`` is foreground
* distances -- int64 Chebyshev distances to the nearest background pixel
* size      -- a non-negative scalar; sizes derived from masks are even integers

The ``as_*`` helpers validate and normalise inputs, returning read-only arrays
so that values can be shared freely.
"""
from __future__ import annotations

import numpy as np

FOREGROUND = 1
BACKGROUND = -1


class GridError(ValueError):
    """Raised when an array violates a grid invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _check_2d(arr: np.ndarray, what: str) -> None:
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GridError(f"{what} must be a non-empty 2-D array, got shape {arr.shape}")


def as_image(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    _check_2d(arr, "image")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise GridError("image intensities must lie in [0, 1]")
    return _frozen(arr)


def as_logits(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    _check_2d(arr, "logit map")
    if not np.all(np.isfinite(arr)):
        raise GridError("logits must be finite")
    return _frozen(arr)


def as_mask(values) -> np.ndarray:
    """Validate a {-1, +1} mask. Boolean input is accepted (True = foreground)."""
    arr = np.asarray(values)
    if arr.dtype == np.bool_:
        arr = np.where(arr, FOREGROUND, BACKGROUND)
    arr = np.array(arr, dtype=np.int8)
    _check_2d(arr, "mask")
    if not np.all((arr == FOREGROUND) | (arr == BACKGROUND)):
        raise GridError("mask entries must be exactly -1 or +1")
    return _frozen(arr)


def mask_from_bool(fg: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(fg, dtype=bool), FOREGROUND, BACKGROUND).astype(np.int8)


def threshold(logits: np.ndarray) -> np.ndarray:
    """Hard mask ``sign(a)`` with the tie ``sign(0) = +1``."""
    return mask_from_bool(np.asarray(logits) >= 0)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise GridError(f"dimension mismatch: {a.shape} vs {b.shape}")


def iou(gt, pred) -> float:
    """Foreground intersection-over-union in the ±1 closed form.

    Two all-background masks agree perfectly and score 1.0.
    """
    y = np.asarray(gt, dtype=np.int64)
    yh = np.asarray(pred, dtype=np.int64)
    _check_same_shape(y, yh)
    num = np.sum(1 + y + yh + y * yh)
    den = np.sum(3 + y + yh - y * yh)
    if den == 0:
        return 1.0
    return float(num / den)


def size_error(gt_size: float, pred_size: float) -> float:
    """Squared size prediction error ``(s - ŝ)²``."""
    return float((gt_size - pred_size) ** 2)
