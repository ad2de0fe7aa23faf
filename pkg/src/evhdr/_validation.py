"""Small input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_log_exposure(X):
    """Column of log exposures ``(n, 1)`` from ``(n,)`` or ``(n, 1)`` input."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single log-exposure column, got {X.shape[1]}")
    return X


def check_targets(y, n):
    """LDR targets as ``(n, 3)``; a single column is broadcast to all channels."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = np.repeat(y[:, None], 3, axis=1)
    y = check_array(y, dtype=np.float64)
    if y.shape != (n, 3):
        raise ValueError(f"targets must have shape ({n},) or ({n}, 3), got {y.shape}")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("LDR targets must lie in [0, 1]")
    return y


def check_hdr_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} has non-finite values")
    return img


def check_pose(pose):
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape == (3, 4):
        pose = np.vstack([pose, [0.0, 0.0, 0.0, 1.0]])
    if pose.shape != (4, 4):
        raise ValueError(f"pose must be 4x4 (or 3x4), got {pose.shape}")
    rot = pose[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise ValueError("pose rotation block is not orthonormal")
    return pose


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value}")
    return value


def parse_range(text):
    """``"lo,hi"`` to a float pair with ``lo < hi``."""
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError:
        raise ValueError(f"range must look like 'lo,hi', got {text!r}") from None
    if not lo < hi:
        raise ValueError(f"range needs lo < hi, got {text!r}")
    return lo, hi
