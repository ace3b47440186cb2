"""Synergistic activation maps: perturbation-scored, gradient-free explanations.

For each modality input, every high-level channel map is min-max normalised,
upsampled to the input grid and used to perturb that input while the other
modalities stay fixed. The softmax probability of the target class for the
perturbed subject becomes the channel's weight; the explanation is the ReLU
of the weighted sum of upsampled maps.

The DFC stack is explained per scale (each scale input is perturbed on its
own, sharing the DFC pathway's channel maps) and as an aggregate over
scales. Nothing here calls autograd, so any model exposing a forward pass
over z-scored inputs will do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import BlockAtlas, save_array
from .validation import zscore_subjects


class ForwardModel:
    """Minimal interface SAM needs.

    ``logits(X)`` maps a batch dict to ``(N, C)`` logits; ``features(X)``
    maps it to ``{modality: (N, K, a, b, c)}`` high-level channel maps.
    """

    def __init__(self, logits_fn, features_fn):
        self._logits = logits_fn
        self._features = features_fn

    def logits(self, X):
        return self._logits(X)

    def features(self, X):
        return self._features(X)

    @classmethod
    def from_network(cls, net) -> "ForwardModel":
        return cls(lambda X: net(X), net.high_level)

    @classmethod
    def from_estimator(cls, est) -> "ForwardModel":
        if not hasattr(est, "network_"):
            raise ValueError("model is not trained")
        est.network_.eval()
        return cls.from_network(est.network_)


@dataclass(frozen=True)
class Slot:
    """One explainable input: a modality, and for the DFC stack a scale index."""

    modality: str
    scale_index: int | None = None

    @property
    def name(self) -> str:
        return self.modality if self.scale_index is None else f"{self.modality}_{self.scale_index}"

    def get(self, X):
        v = X[self.modality]
        return v[:, self.scale_index] if self.scale_index is not None else v

    def replace(self, X, value):
        out = dict(X)
        if self.scale_index is None:
            out[self.modality] = value
        else:
            stack = X[self.modality].clone()
            stack[:, self.scale_index] = value
            out[self.modality] = stack
        return out


def input_slots(X) -> list[Slot]:
    n_scales = X["dfc"].shape[1]
    return [Slot("dfc", j) for j in range(n_scales)] + [Slot("sfc"), Slot("alff"), Slot("fa")]


def extract_high_level(model: ForwardModel, X, modality: str):
    """The ``K`` channel maps of ``modality`` for a single subject, ``(K, a, b, c)``."""
    with torch.no_grad():
        maps = model.features(X)[modality]
    if maps.shape[0] != 1:
        raise ValueError("extract_high_level expects a single-subject batch")
    return maps[0]


def normalize_map(fmap):
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    fmap = torch.as_tensor(fmap)
    if not torch.isfinite(fmap).all():
        raise ValueError("feature map contains non-finite values")
    lo, hi = fmap.min(), fmap.max()
    if hi == lo:
        return torch.zeros_like(fmap)
    return (fmap - lo) / (hi - lo)


def upsample(maps, shape):
    """Trilinear resize of ``(..., a, b, c)`` maps to ``shape``."""
    maps = torch.as_tensor(maps)
    lead = maps.shape[:-3]
    x = maps.reshape(-1, 1, *maps.shape[-3:])
    try:
        y = F.interpolate(x, size=tuple(shape), mode="trilinear", align_corners=False)
    except RuntimeError as exc:
        raise ValueError(f"cannot interpolate {tuple(maps.shape[-3:])} to {tuple(shape)}") from exc
    return y.reshape(*lead, *shape)


def perturb(value, up_map, mode: str):
    if mode == "add":
        return value + up_map
    if mode == "hadamard":
        return value * up_map
    raise ValueError(f"unknown perturbation mode {mode!r}")


def score_maps(model: ForwardModel, X, slot: Slot, up_maps, c: int, mode: str = "add",
               chunk: int = 16) -> torch.Tensor:
    """Class-``c`` softmax probability for each perturbed copy of the subject.

    ``up_maps`` is ``(K, *input_shape)``; returns ``K`` weights.
    """
    base = slot.get(X)
    if base.shape[0] != 1:
        raise ValueError("score_maps expects a single-subject batch")
    weights = []
    with torch.no_grad():
        for start in range(0, up_maps.shape[0], chunk):
            m = up_maps[start:start + chunk].to(base.dtype)
            k = m.shape[0]
            batch = {key: v.expand(k, *v.shape[1:]) for key, v in X.items()}
            batch = slot.replace(batch, perturb(base.expand(k, *base.shape[1:]), m, mode))
            logits = model.logits(batch)
            weights.append(torch.softmax(logits, dim=1)[:, c])
    return torch.cat(weights)


def score_map(model: ForwardModel, X, slot: Slot, m_k, c: int, mode: str = "add") -> float:
    """Weight of a single normalised map ``m_k``."""
    up = upsample(m_k, slot.get(X).shape[1:])
    return float(score_maps(model, X, slot, up[None], c, mode)[0])


def top_connectivities(cmap, n: int = 5) -> list[tuple[int, int, float]]:
    """Largest ``n`` ROI pairs of the symmetrised, zero-diagonal map."""
    cmap = np.asarray(cmap, dtype=np.float64)
    if cmap.ndim != 2 or cmap.shape[0] != cmap.shape[1]:
        raise ValueError("connectivity map must be square")
    if n < 1:
        raise ValueError("n must be >= 1")
    sym = 0.5 * (cmap + cmap.T)
    iu, ju = np.triu_indices(sym.shape[0], k=1)
    vals = sym[iu, ju]
    # lexsort: last key is primary -> descending score, then i, then j
    order = np.lexsort((ju, iu, -vals))[:n]
    return [(int(iu[o]), int(ju[o]), float(vals[o])) for o in order]


def roi_importance(cmap) -> list[tuple[int, float]]:
    """ROIs ranked by the mean of their row in the symmetrised, zero-diagonal map."""
    cmap = np.asarray(cmap, dtype=np.float64)
    if cmap.ndim != 2 or cmap.shape[0] != cmap.shape[1]:
        raise ValueError("connectivity map must be square")
    sym = 0.5 * (cmap + cmap.T)
    np.fill_diagonal(sym, 0.0)
    scores = sym.mean(axis=1)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [(int(i), float(scores[i])) for i in order]


def regional_importance(volume, atlas: BlockAtlas) -> list[tuple[int, float]]:
    scores = atlas.block_means(volume)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [(int(i), float(scores[i])) for i in order]


@dataclass
class ActivationReport:
    class_index: int
    maps: dict
    weights: dict
    connectivities: dict = field(default_factory=dict)
    rois: dict = field(default_factory=dict)

    def to_json(self, map_paths: dict | None = None) -> dict:
        return {
            "class_index": self.class_index,
            "maps": map_paths or {k: list(v.shape) for k, v in self.maps.items()},
            "weights": {k: [float(w) for w in v] for k, v in self.weights.items()},
            "top_connectivities": {k: [list(t) for t in v] for k, v in self.connectivities.items()},
            "roi_importance": {k: [list(t) for t in v] for k, v in self.rois.items()},
        }


def synergistic_activation(model: ForwardModel, X, c: int, mode: str = "add",
                           atlas: BlockAtlas | None = None, top_n: int = 5) -> ActivationReport:
    """Explain class ``c`` for one subject given as a z-scored tensor batch of size 1."""
    feats = {}
    with torch.no_grad():
        high = model.features(X)
    maps, weights, raw = {}, {}, {}
    for slot in input_slots(X):
        fk = high[slot.modality]
        if fk.shape[0] != 1:
            raise ValueError("synergistic_activation expects a single-subject batch")
        if slot.modality not in feats:
            m = torch.stack([normalize_map(f) for f in fk[0]])
            feats[slot.modality] = m
        shape = slot.get(X).shape[1:]
        up = upsample(feats[slot.modality], shape).to(torch.float64)
        w = score_maps(model, X, slot, up, c, mode).to(torch.float64)
        combined = torch.einsum("k,k...->...", w, up)
        raw[slot.name] = combined
        maps[slot.name] = F.relu(combined).numpy()
        weights[slot.name] = w.numpy()
    dfc_names = [s.name for s in input_slots(X) if s.modality == "dfc"]
    maps["dfc"] = F.relu(sum(raw[n] for n in dfc_names)).numpy()

    report = ActivationReport(int(c), maps, weights)
    for name, vol in maps.items():
        if name.startswith(("dfc", "sfc")):
            cmap = vol.mean(axis=-1)
            report.connectivities[name] = top_connectivities(cmap, top_n)
            report.rois[name] = roi_importance(cmap)
        elif atlas is not None:
            report.rois[name] = regional_importance(vol, atlas)
    return report


def explain_subject(est, X_subject: dict, c: int, atlas: BlockAtlas | None = None,
                    top_n: int = 5) -> ActivationReport:
    """Run SAM for a fitted :class:`HAHIClassifier` on one subject's raw features."""
    model = ForwardModel.from_estimator(est)
    Xn = zscore_subjects({k: np.asarray(v, dtype=np.float32)[None] for k, v in X_subject.items()})
    Xt = {k: torch.as_tensor(v, dtype=est.torch_dtype) for k, v in Xn.items()}
    return synergistic_activation(model, Xt, c, est.config_.sam_perturbation, atlas, top_n)


def save_report(report: ActivationReport, out_dir, images: bool = False) -> Path:
    out_dir = Path(out_dir)
    paths = {}
    for name, vol in report.maps.items():
        rel = Path("maps") / name
        save_array(out_dir / rel, vol, modality=name, class_index=report.class_index)
        paths[name] = rel.as_posix()
    (out_dir / "report.json").write_text(json.dumps(report.to_json(paths), indent=2))
    if images:
        render_heatmaps(report, out_dir / "images")
    return out_dir / "report.json"


def render_heatmaps(report: ActivationReport, out_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, vol in report.maps.items():
        if name.startswith(("dfc", "sfc")):
            img, title = vol.mean(axis=-1), f"{name}: mean over frames"
        else:
            img, title = vol[:, :, vol.shape[2] // 2], f"{name}: central axial slice"
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(img, cmap="hot", interpolation="nearest")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.savefig(out_dir / f"{name}.png", dpi=100, bbox_inches="tight")
        plt.close(fig)
