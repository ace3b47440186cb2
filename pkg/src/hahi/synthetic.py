"""Synthetic cohorts with planted connectivity and regional group effects."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import BlockAtlas, DatasetManifest, ManifestRow, save_array, write_manifest


@dataclass
class SyntheticConfig:
    n_subjects_per_class: int = 60
    n_rois: int = 32
    n_timepoints: int = 256
    sampling_interval: float = 2.0
    planted_rois: list = field(default_factory=lambda: [0, 1, 2, 3])
    # one entry per class; class 0 is normally the control group
    connectivity_delta: list = field(default_factory=lambda: [0.0, 0.3])
    regional_delta: list = field(default_factory=lambda: [0.0, 1.0])
    baseline_correlation: float = 0.1
    ar_coef: float = 0.3
    grid: list = field(default_factory=lambda: [32, 32, 32])
    atlas_arrangement: list = field(default_factory=lambda: [4, 4, 2])
    fa_baseline: float = 1.0
    noise_level: float = 1.0
    class_names: list = field(default_factory=lambda: ["control", "patient"])
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def atlas(self) -> BlockAtlas:
        return BlockAtlas.regular(self.grid, self.atlas_arrangement)

    def validate(self) -> None:
        if self.n_subjects_per_class < 1:
            raise ValueError("n_subjects_per_class must be >= 1")
        if self.n_timepoints < 2:
            raise ValueError("n_timepoints must be >= 2")
        if any(not 0 <= r < self.n_rois for r in self.planted_rois):
            raise ValueError(f"planted ROI indices must be < n_rois={self.n_rois}")
        for name in ("connectivity_delta", "regional_delta"):
            vals = getattr(self, name)
            if len(vals) != self.n_classes:
                raise ValueError(f"{name} needs one entry per class ({self.n_classes})")
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{name} must be finite")
        if not -1.0 < self.ar_coef < 1.0:
            raise ValueError("ar_coef must lie in (-1, 1) for a stationary process")
        if self.atlas.n_rois != self.n_rois:
            raise ValueError(
                f"atlas arrangement {self.atlas_arrangement} gives {self.atlas.n_rois} blocks, "
                f"expected n_rois={self.n_rois}"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cohort config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SyntheticConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def target_correlation(cfg: SyntheticConfig, label: int) -> np.ndarray:
    """Baseline correlation plus the class delta on the planted block, made PD."""
    R = cfg.n_rois
    C = np.full((R, R), cfg.baseline_correlation)
    idx = np.asarray(cfg.planted_rois, dtype=int)
    C[np.ix_(idx, idx)] += cfg.connectivity_delta[label]
    np.fill_diagonal(C, 1.0)
    w, V = np.linalg.eigh(C)
    if w.min() < 1e-3:
        C = (V * np.clip(w, 1e-3, None)) @ V.T
        d = np.sqrt(np.diag(C))
        C = C / np.outer(d, d)
    return C


def ar1_series(corr: np.ndarray, n_timepoints: int, phi: float, rng) -> np.ndarray:
    """Stationary AR(1) whose cross-sectional correlation equals ``corr``."""
    L = np.linalg.cholesky(corr)
    innov = rng.standard_normal((n_timepoints, corr.shape[0])) @ L.T
    x = np.empty_like(innov)
    x[0] = innov[0] / np.sqrt(1.0 - phi**2)
    for t in range(1, n_timepoints):
        x[t] = phi * x[t - 1] + innov[t]
    return x


def fa_volume(cfg: SyntheticConfig, label: int, rng) -> np.ndarray:
    atlas = cfg.atlas
    vol = np.full(atlas.grid, cfg.fa_baseline)
    for roi in cfg.planted_rois:
        vol[atlas.mask(roi)] += cfg.regional_delta[label]
    return vol + cfg.noise_level * rng.standard_normal(atlas.grid)


def simulate_subject(cfg: SyntheticConfig, label: int, rng) -> tuple[np.ndarray, np.ndarray]:
    ts = ar1_series(target_correlation(cfg, label), cfg.n_timepoints, cfg.ar_coef, rng)
    return ts, fa_volume(cfg, label, rng)


def iter_subjects(cfg: SyntheticConfig):
    """Yield ``(subject_id, label, ts, fa)``; each subject has its own child seed."""
    n = cfg.n_subjects_per_class
    children = np.random.SeedSequence(cfg.seed).spawn(n * cfg.n_classes)
    for c in range(cfg.n_classes):
        for i in range(n):
            rng = np.random.default_rng(children[c * n + i])
            ts, fa = simulate_subject(cfg, c, rng)
            yield f"sub-{c}{i:04d}", c, ts, fa


def cohort_meta(cfg: SyntheticConfig) -> dict:
    return {
        "class_names": list(cfg.class_names),
        "n_rois": cfg.n_rois,
        "n_timepoints": cfg.n_timepoints,
        "sampling_interval": cfg.sampling_interval,
        "seed": cfg.seed,
        "planted_rois": list(cfg.planted_rois),
        "atlas": cfg.atlas.to_dict(),
        "synthetic_config": cfg.to_dict(),
    }


def generate_synthetic_cohort(cfg: SyntheticConfig, out_dir) -> DatasetManifest:
    """Write per-subject time series and FA containers plus ``manifest.csv``."""
    cfg.validate()
    out_dir = Path(out_dir)
    rows = []
    for sid, label, ts, fa in iter_subjects(cfg):
        ts_rel = Path("subjects") / sid / "ts"
        fa_rel = Path("subjects") / sid / "fa"
        save_array(out_dir / ts_rel, ts, modality="ts", units="a.u.",
                   sampling_interval=cfg.sampling_interval, seed=cfg.seed)
        save_array(out_dir / fa_rel, fa, modality="FA", units="a.u.", seed=cfg.seed)
        rows.append(ManifestRow(sid, label, {"ts": ts_rel.as_posix(), "fa": fa_rel.as_posix()}))
    manifest = DatasetManifest(rows, cohort_meta(cfg), out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
