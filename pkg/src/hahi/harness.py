"""Dataset loading, training, evaluation, cross-validation and ablation runs."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import HAHIConfig, check_disable
from .data import DatasetManifest, ManifestRow, load_array, read_manifest, save_array, split_dataset, write_manifest
from .estimator import HAHIClassifier
from .features import FeatureExtractor
from .metrics import Metrics, classification_metrics, summarize
from .validation import MODALITIES

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["fold", "accuracy", "recall", "precision", "f1"]


def feature_extractor(manifest: DatasetManifest, cfg: HAHIConfig) -> FeatureExtractor:
    return FeatureExtractor(atlas=manifest.atlas,
                            sampling_interval=float(manifest.cohort.get("sampling_interval", 2.0)),
                            **cfg.feature_params())


def is_feature_manifest(manifest: DatasetManifest) -> bool:
    return bool(manifest.rows) and set(MODALITIES) <= set(manifest.rows[0].paths)


def load_dataset(manifest: DatasetManifest, cfg: HAHIConfig):
    """Return ``(X, y, subject_ids)`` for every manifest row.

    Feature manifests (written by :func:`compute_features`) are read as-is;
    raw manifests have their features computed on the fly.
    """
    if is_feature_manifest(manifest):
        stored = manifest.cohort.get("feature_params")
        if stored and stored != cfg.feature_params():
            raise ValueError(f"feature manifest was built with {stored}, config wants {cfg.feature_params()}")
        per = [{k: load_array(manifest.resolve(r, k)) for k in MODALITIES} for r in manifest.rows]
        X = {k: np.stack([p[k] for p in per]) for k in MODALITIES}
    else:
        fx = feature_extractor(manifest, cfg)
        X = fx.transform((load_array(manifest.resolve(r, "ts")), load_array(manifest.resolve(r, "fa")))
                         for r in manifest.rows)
    return X, manifest.labels, manifest.subject_ids


def compute_features(manifest: DatasetManifest, cfg: HAHIConfig, out_dir) -> DatasetManifest:
    """Precompute the four model inputs per subject and write a feature manifest."""
    out_dir = Path(out_dir)
    fx = feature_extractor(manifest, cfg)
    rows = []
    for r in manifest.rows:
        feats = fx.subject_features(load_array(manifest.resolve(r, "ts")),
                                    load_array(manifest.resolve(r, "fa")))
        paths = {}
        for k in MODALITIES:
            rel = Path("features") / r.subject_id / k
            meta = {"modality": k}
            if k == "dfc":
                meta["scales"] = ",".join(str(s) for s in fx.scales)
            save_array(out_dir / rel, feats[k], **meta)
            paths[k] = rel.as_posix()
        rows.append(ManifestRow(r.subject_id, r.label, paths))
    cohort = dict(manifest.cohort, feature_params=cfg.feature_params())
    out = DatasetManifest(rows, cohort, out_dir)
    write_manifest(out, out_dir / "features.csv")
    return out


@dataclass
class Dataset:
    X: dict
    y: np.ndarray
    ids: list

    def subset(self, ids) -> "Dataset":
        pos = {sid: i for i, sid in enumerate(self.ids)}
        idx = np.array([pos[s] for s in ids], dtype=int)
        return Dataset({k: v[idx] for k, v in self.X.items()}, self.y[idx], [self.ids[i] for i in idx])


@dataclass
class RunResult:
    estimator: HAHIClassifier
    metrics: Metrics
    split: dict = field(default_factory=dict)


def default_positive_classes(n_classes: int) -> set:
    """Every non-control class (index 0 is the control group)."""
    return set(range(1, n_classes))


def train(manifest: DatasetManifest, cfg: HAHIConfig, dataset: Dataset | None = None,
          fold: int | None = None) -> RunResult:
    """Fit on the fold's training split, select by validation accuracy, score the test split."""
    fold = cfg.fold if fold is None else fold
    if dataset is None:
        dataset = Dataset(*load_dataset(manifest, cfg))
    tr, va, te = split_dataset(manifest, fold, cfg.n_folds, cfg.seed)
    d_tr, d_va, d_te = (dataset.subset(m.subject_ids) for m in (tr, va, te))
    est = HAHIClassifier(config=cfg)
    est.fit(d_tr.X, d_tr.y, d_va.X, d_va.y)
    metrics = evaluate(est, d_te, default_positive_classes(manifest.n_classes))
    split = {"fold": fold, "train": d_tr.ids, "val": d_va.ids, "test": d_te.ids}
    return RunResult(est, metrics, split)


def evaluate(est: HAHIClassifier, data: Dataset, positive_classes) -> Metrics:
    if len(est.classes_) > 0 and int(np.max(data.y)) > int(np.max(est.classes_)):
        raise ValueError("dataset has more classes than the checkpoint was trained on")
    return classification_metrics(data.y, est.predict(data.X), positive_classes)


def run_cv(manifest: DatasetManifest, cfg: HAHIConfig, n_folds: int | None = None,
           dataset: Dataset | None = None):
    """Train and score every fold; returns ``(per-fold metrics, summary)``."""
    n_folds = cfg.n_folds if n_folds is None else n_folds
    cfg = cfg.with_updates(n_folds=n_folds)
    if dataset is None:
        dataset = Dataset(*load_dataset(manifest, cfg))
    rows = [train(manifest, cfg, dataset, fold=f).metrics for f in range(n_folds)]
    return rows, summarize(rows)


def ablate(manifest: DatasetManifest, cfg: HAHIConfig, disable, free_order: bool = False,
           dataset: Dataset | None = None) -> RunResult:
    chosen = check_disable(disable, free_order)
    cfg = cfg.with_updates(disable=sorted(chosen), free_order=free_order or cfg.free_order)
    return train(manifest, cfg, dataset)


def write_metrics_csv(path, rows: list[tuple[int, Metrics]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for fold, m in rows:
            w.writerow([fold] + [f"{getattr(m, k):.6f}" for k in METRIC_COLUMNS[1:]])


def write_losses_csv(path, est: HAHIClassifier) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for i, loss in enumerate(est.loss_curve_):
            vl = est.val_loss_curve_[i] if i < len(est.val_loss_curve_) else ""
            va = est.val_accuracy_curve_[i] if i < len(est.val_accuracy_curve_) else ""
            w.writerow([i, repr(loss), repr(vl), repr(va)])


def save_run(result: RunResult, out_dir) -> None:
    """Checkpoint, loss trajectory, test metrics and split listing."""
    out_dir = Path(out_dir)
    result.estimator.save(out_dir, extra={"split": result.split})
    write_losses_csv(out_dir / "losses.csv", result.estimator)
    write_metrics_csv(out_dir / "metrics.csv", [(result.split.get("fold", 0), result.metrics)])


def collect_report(runs_dir, out_csv) -> list[dict]:
    """Gather every ``metrics.csv`` under ``runs_dir`` into one table.

    Per run, rows for each fold are followed by ``mean``, ``std`` and
    ``best`` (highest-accuracy fold) rows.
    """
    runs_dir = Path(runs_dir)
    table = []
    for mfile in sorted(runs_dir.rglob("metrics.csv")):
        run = mfile.parent.relative_to(runs_dir).as_posix() or "."
        with mfile.open() as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        for r in rows:
            table.append({"run": run, **r})
        vals = {k: np.array([float(r[k]) for r in rows]) for k in METRIC_COLUMNS[1:]}
        table.append({"run": run, "fold": "mean", **{k: f"{v.mean():.6f}" for k, v in vals.items()}})
        table.append({"run": run, "fold": "std", **{k: f"{v.std():.6f}" for k, v in vals.items()}})
        b = int(np.argmax(vals["accuracy"]))
        table.append({"run": run, "fold": f"best:{rows[b]['fold']}",
                      **{k: f"{v[b]:.6f}" for k, v in vals.items()}})
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["run"] + METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    return table


def load_manifest_and_config(manifest_path, config_path=None) -> tuple[DatasetManifest, HAHIConfig]:
    manifest = read_manifest(manifest_path)
    manifest.check_paths()
    cfg = HAHIConfig.from_json(config_path) if config_path else HAHIConfig()
    return manifest, cfg


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
