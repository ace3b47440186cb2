"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

MODALITIES = ("dfc", "sfc", "alff", "fa")


def check_time_series(ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 2:
        raise ValueError(f"time series must be 2-D (N_t x R), got {ts.ndim}-D")
    if ts.shape[0] < 2:
        raise ValueError("time series needs at least 2 samples")
    if not np.all(np.isfinite(ts)):
        raise ValueError("time series contains non-finite values")
    flat = np.ptp(ts, axis=0) == 0
    if flat.any():
        raise ValueError(f"constant signal in ROI {int(np.flatnonzero(flat)[0])}")
    return ts


def check_modalities(X, expected_shapes=None) -> dict[str, np.ndarray]:
    """Validate a modality batch dict; returns float32 arrays with a shared N."""
    if not isinstance(X, dict):
        raise TypeError("X must be a dict with keys " + ", ".join(MODALITIES))
    missing = [k for k in MODALITIES if k not in X]
    if missing:
        raise ValueError(f"X is missing modalities {missing}")
    out = {k: np.asarray(X[k], dtype=np.float32) for k in MODALITIES}
    ndims = {"dfc": 5, "sfc": 4, "alff": 4, "fa": 4}
    for k, arr in out.items():
        if arr.ndim != ndims[k]:
            raise ValueError(f"{k} must be {ndims[k]}-D (batch first), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{k} contains non-finite values")
    n = {arr.shape[0] for arr in out.values()}
    if len(n) != 1:
        raise ValueError(f"inconsistent subject counts across modalities: {n}")
    if expected_shapes is not None:
        for k in MODALITIES:
            if tuple(out[k].shape[1:]) != tuple(expected_shapes[k]):
                raise ValueError(
                    f"{k} shape {out[k].shape[1:]} does not match fitted shape {tuple(expected_shapes[k])}"
                )
    return out


def n_samples(X) -> int:
    return int(np.asarray(X["sfc"]).shape[0])


def take(X, idx) -> dict[str, np.ndarray]:
    return {k: v[idx] for k, v in X.items()}


def zscore_subjects(X) -> dict[str, np.ndarray]:
    """Per-subject, per-modality z-scoring. Constant inputs are only centred."""
    out = {}
    for k, arr in X.items():
        axes = tuple(range(1, arr.ndim))
        mu = arr.mean(axis=axes, keepdims=True, dtype=np.float64)
        sd = arr.std(axis=axes, keepdims=True, dtype=np.float64)
        sd[sd == 0] = 1.0
        out[k] = ((arr - mu) / sd).astype(arr.dtype)
    return out
