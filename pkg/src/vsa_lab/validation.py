"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericInputError


def check_images(X, img_size=None, channels: int = 3, dtype=np.float64) -> np.ndarray:
    """Return ``X`` as a float array ``[n, S, S, channels]``.

    Accepts a single image ``[S, S, channels]`` (promoted to a batch of one).
    """
    X = np.asarray(X)
    if X.dtype == object or not np.issubdtype(X.dtype, np.number):
        raise NumericInputError(f"images must be numeric, got dtype {X.dtype}")
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != channels:
        raise DimensionError(f"expected images of shape [n, H, W, {channels}], got {X.shape}")
    if X.shape[1] != X.shape[2]:
        raise DimensionError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    if img_size is not None and X.shape[1] != img_size:
        raise DimensionError(f"expected {img_size}x{img_size} images, got {X.shape[1]}x{X.shape[2]}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise NumericInputError("images contain NaN or infinite values")
    return X


def check_images_labels(X, y, **kw):
    X = check_images(X, **kw)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(X):
        raise DimensionError(f"labels must be 1-D with {len(X)} entries, got shape {y.shape}")
    return X, y
