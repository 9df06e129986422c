"""Input-validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def check_same_shape(*arrays, names=None):
    """Raise ValueError unless every array has the same (H, W) footprint."""
    shapes = [np.asarray(a).shape[:2] for a in arrays]
    if len(set(shapes)) > 1:
        labels = names or [f"arg{i}" for i in range(len(arrays))]
        detail = ", ".join(f"{n}={s}" for n, s in zip(labels, shapes))
        raise ValueError(f"rasters are not aligned: {detail}")
    return shapes[0]


def check_unit_vector(v, tol: float = 1e-3, name: str = "vector") -> np.ndarray:
    """Return a unit-normalized copy; error if the norm is off by more than tol."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError(f"{name} has invalid norm {norm}")
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} is not unit length (norm={norm:.6f})")
    return v / norm


def check_positive(value, name: str):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value
