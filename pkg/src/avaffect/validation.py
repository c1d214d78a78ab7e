"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_sequence_array(x, name: str, width: int | None = None, n_dim: int = 3) -> np.ndarray:
    """Validate a (n_windows, T, width) float array: finite, right rank,
    optional fixed feature width."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != n_dim:
        raise ValueError(f"{name} must be {n_dim}-D (n_windows, T, features), got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} is empty: shape {arr.shape}")
    if width is not None and arr.shape[-1] != width:
        raise ValueError(f"{name} must have feature width {width}, got {arr.shape[-1]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_labels(y, n_windows: int, length: int) -> np.ndarray:
    """Validate (n_windows, T, 2) valence/arousal labels in [-1, 1]."""
    arr = np.asarray(y, dtype=np.float32)
    if arr.shape != (n_windows, length, 2):
        raise ValueError(f"y must have shape ({n_windows}, {length}, 2), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("y contains NaN or Inf")
    if np.abs(arr).max() > 1.0:
        raise ValueError("labels must lie in [-1, 1]")
    return arr


def check_consistent_lengths(*arrays) -> None:
    lengths = {a.shape[0] for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of windows: {sorted(lengths)}")
    times = {a.shape[1] for a in arrays if a is not None}
    if len(times) > 1:
        raise ValueError(f"inconsistent window lengths: {sorted(times)}")
