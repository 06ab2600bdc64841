"""Input checks shared by the public entry points."""

import numpy as np

from .errors import ShapeError


def as_feature_matrix(x, name="x"):
    """Coerce to a finite float64 2-D array or refuse loudly."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def as_label_matrix(y, n_rows, name="y"):
    """Coerce targets to a 2-D 0/1 float64 matrix aligned with the features."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got shape {y.shape}")
    if y.shape[0] != n_rows:
        raise ShapeError(f"{name} has {y.shape[0]} rows, expected {n_rows}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError(f"{name} must contain only 0/1 entries")
    return y


def check_same_width(a, b, name_a="x_p", name_b="x_q"):
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"column mismatch: {name_a} has {a.shape[1]}, {name_b} has {b.shape[1]}")
