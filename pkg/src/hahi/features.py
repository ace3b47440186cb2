"""Connectivity and regional features computed from ROI time series.

Connectivity tensors are ``(R, R, D)`` arrays, one correlation frame per depth
slice. Regional volumes are ``(X, Y, Z)`` arrays on the atlas grid.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from .data import BlockAtlas
from .validation import check_time_series


def _corr_frames(windows: np.ndarray) -> np.ndarray:
    """Pearson correlation of every ``(..., T_w, R)`` window -> ``(..., R, R)``."""
    x = windows - windows.mean(axis=-2, keepdims=True)
    ss = np.einsum("...tr,...tr->...r", x, x)
    if np.any(ss <= 0):
        bad = np.argwhere(np.atleast_2d(ss <= 0))[0][-1]
        raise ValueError(f"constant signal in ROI {bad}: correlation undefined")
    z = x / np.sqrt(ss)[..., None, :]
    c = np.einsum("...ti,...tj->...ij", z, z)
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    np.clip(c, -1.0, 1.0, out=c)
    idx = np.arange(c.shape[-1])
    c[..., idx, idx] = 1.0
    return c


def pearson_fc(window) -> np.ndarray:
    """Sample Pearson correlation between the columns of a ``T_w x R`` window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 2:
        raise ValueError("window must be a T_w x R matrix with T_w >= 2")
    return _corr_frames(window)


def static_fc(ts) -> np.ndarray:
    """Full-series correlation as a single-frame ``(R, R, 1)`` tensor."""
    ts = check_time_series(ts)
    return pearson_fc(ts)[:, :, None]


def frame_indices(n_candidates: int, frames: int) -> np.ndarray:
    """Equal-interval selection of ``frames`` indices out of ``n_candidates``."""
    if frames == 1:
        return np.zeros(1, dtype=int)
    j = np.arange(frames)
    # floor(x + 0.5) rather than np.round: banker's rounding would break ties unevenly
    return np.floor(j * (n_candidates - 1) / (frames - 1) + 0.5).astype(int)


def dynamic_fc(ts, scale: int, base_window: int, frames: int) -> np.ndarray:
    """Sliding-window correlation with window ``base_window * scale`` and stride 1.

    Exactly ``frames`` windows are kept, spread at equal intervals over the
    ``N_t - window + 1`` candidates (repeats allowed when there are fewer).
    Returns an ``(R, R, frames)`` tensor.
    """
    ts = check_time_series(ts)
    width = base_window * scale
    if width < 2:
        raise ValueError("window length must be >= 2 samples")
    if ts.shape[0] < width:
        raise ValueError(f"window exceeds series: {width} > {ts.shape[0]} samples")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    wins = sliding_window_view(ts, width, axis=0)  # (A, R, width)
    sel = wins[frame_indices(wins.shape[0], frames)]
    return np.moveaxis(_corr_frames(np.swapaxes(sel, 1, 2)), 0, -1)


def scales_for(delta: int, levels: int) -> list[int]:
    """Base scale 1 followed by ``2**l * delta`` for ``l = 1..levels``."""
    return [1] + [2**l * delta for l in range(1, levels + 1)]


def multiscale_dfc(ts, delta: int = 1, levels: int = 4, base_window: int = 7,
                   frames: int = 128) -> dict[int, np.ndarray]:
    """Map level -> DFC tensor; level 0 is the base pathway input at scale 1."""
    if levels < 1 or delta < 1:
        raise ValueError("levels and delta must be >= 1")
    ts = check_time_series(ts)
    need = base_window * 2**levels * delta
    if ts.shape[0] < need:
        raise ValueError(f"window exceeds series: {need} > {ts.shape[0]} samples")
    return {l: dynamic_fc(ts, s, base_window, frames)
            for l, s in enumerate(scales_for(delta, levels))}


def alff(ts, sampling_interval: float, band_low: float = 0.01, band_high: float = 0.08) -> np.ndarray:
    """Mean single-sided amplitude spectrum within ``[band_low, band_high]`` Hz per ROI."""
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim == 1:
        ts = ts[:, None]
    nyquist = 0.5 / sampling_interval
    if not 0 <= band_low < band_high < nyquist:
        raise ValueError(f"need 0 <= band_low < band_high < Nyquist ({nyquist} Hz)")
    n = ts.shape[0]
    freqs = np.fft.rfftfreq(n, d=sampling_interval)
    in_band = (freqs >= band_low) & (freqs <= band_high)
    if not in_band.any():
        raise ValueError("no frequency bins inside the requested band")
    amp = np.abs(np.fft.rfft(ts - ts.mean(axis=0), axis=0)) * (2.0 / n)
    return amp[in_band].mean(axis=0)


def roi_to_volume(values, atlas: BlockAtlas) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (atlas.n_rois,):
        raise ValueError(f"expected {atlas.n_rois} ROI values, got shape {values.shape}")
    vol = np.zeros(atlas.grid)
    for v, (x0, x1, y0, y1, z0, z1) in zip(values, atlas.blocks):
        vol[x0:x1, y0:y1, z0:z1] = v
    return vol


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn raw subjects into the four model inputs.

    ``transform`` takes a sequence of ``(time_series, fa_volume)`` pairs and
    returns a dict of stacked float32 arrays:

    ``dfc``  ``(N, levels + 1, R, R, frames)`` -- scale 1 first
    ``sfc``  ``(N, R, R, 1)``
    ``alff`` ``(N, X, Y, Z)``
    ``fa``   ``(N, X, Y, Z)``
    """

    def __init__(self, atlas=None, sampling_interval=2.0, delta=1, levels=4,
                 base_window=7, frames=128, band_low=0.01, band_high=0.08):
        self.atlas = atlas
        self.sampling_interval = sampling_interval
        self.delta = delta
        self.levels = levels
        self.base_window = base_window
        self.frames = frames
        self.band_low = band_low
        self.band_high = band_high

    def fit(self, X=None, y=None):
        return self

    @property
    def scales(self) -> list[int]:
        return scales_for(self.delta, self.levels)

    def subject_features(self, ts, fa) -> dict[str, np.ndarray]:
        if self.atlas is None:
            raise ValueError("FeatureExtractor needs an atlas")
        ts = check_time_series(ts)
        fa = np.asarray(fa, dtype=np.float64)
        if fa.shape != tuple(self.atlas.grid):
            raise ValueError(f"FA volume shape {fa.shape} != atlas grid {tuple(self.atlas.grid)}")
        if not np.all(np.isfinite(fa)):
            raise ValueError("FA volume contains non-finite values")
        dfc = multiscale_dfc(ts, self.delta, self.levels, self.base_window, self.frames)
        return {
            "dfc": np.stack([dfc[l] for l in sorted(dfc)]).astype(np.float32),
            "sfc": static_fc(ts).astype(np.float32),
            "alff": roi_to_volume(
                alff(ts, self.sampling_interval, self.band_low, self.band_high), self.atlas
            ).astype(np.float32),
            "fa": fa.astype(np.float32),
        }

    def transform(self, X):
        per = [self.subject_features(ts, fa) for ts, fa in X]
        return {k: np.stack([p[k] for p in per]) for k in ("dfc", "sfc", "alff", "fa")}
