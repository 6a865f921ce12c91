"""Input validation helpers for array-shaped estimator inputs.

The estimator consumes stacks of 2D slices rather than tabular data, so
these replace ``sklearn.utils.check_array`` for this package.
"""

import numpy as np

from .exceptions import ConfigurationError


def check_image_stack(X, name="X"):
    """Validate a stack of grayscale slices.

    Accepts [n, H, W] (or a single [H, W] slice, which gets a leading
    axis), requires finite values inside [0, 1], returns float32.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape [n, H, W], got {X.shape}")
    if X.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(X.min()), float(X.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(
            f"{name} values must lie in [0, 1] (got range [{lo:g}, {hi:g}]); "
            "apply intensity windowing first"
        )
    return np.ascontiguousarray(X, dtype=np.float32)


def check_label_stack(y, num_classes, name="y"):
    """Validate a stack of integer label maps against the class count."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"{name} must have shape [n, H, W], got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ValueError(f"{name} must contain integer class ids")
    y = y.astype(np.int64, copy=False)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(
            f"{name} labels must lie in [0, {num_classes}), "
            f"got range [{y.min()}, {y.max()}]"
        )
    return np.ascontiguousarray(y)


def check_consistent_stacks(X, y):
    if X.shape != y.shape:
        raise ValueError(
            f"image and label stacks disagree: {X.shape} vs {y.shape}"
        )


def check_divisible_size(height, width, depth):
    """Spatial dims must survive ``depth`` rounds of 2x pooling."""
    factor = 2 ** depth
    if height % factor or width % factor:
        raise ConfigurationError(
            f"input size {height}x{width} not divisible by 2^{depth}={factor}"
        )
