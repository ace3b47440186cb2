"""sklearn-compatible classifier wrapping :class:`HAHINet`."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.multiclass import unique_labels

from .config import HAHIConfig
from .data import load_array, save_array
from .network import HAHINet, to_tensors
from .validation import MODALITIES, check_modalities, n_samples, take, zscore_subjects

logger = logging.getLogger(__name__)


class HAHIClassifier(ClassifierMixin, BaseEstimator):
    """Dual-modal classifier over the four modality inputs.

    ``X`` is a dict of batch-first arrays as produced by
    :class:`hahi.features.FeatureExtractor`. Inputs are z-scored per subject
    and modality before entering the network. Training is Adam on the
    summed classification and alignment losses; when validation data is
    given the epoch with the best validation accuracy is kept.
    """

    def __init__(self, config: HAHIConfig | None = None, disable=None, epochs=None,
                 learning_rate=None, batch_size=None, seed=None, dtype="float32",
                 verbose=False):
        self.config = config
        self.disable = disable
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype
        self.verbose = verbose

    def resolved_config(self) -> HAHIConfig:
        cfg = self.config or HAHIConfig()
        overrides = {k: v for k, v in dict(disable=self.disable, epochs=self.epochs,
                                           learning_rate=self.learning_rate,
                                           batch_size=self.batch_size, seed=self.seed).items()
                     if v is not None}
        if "disable" in overrides:
            overrides["disable"] = sorted(overrides["disable"])
        return cfg.with_updates(**overrides) if overrides else cfg

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def _prepare(self, X):
        X = zscore_subjects(X)
        return to_tensors(X, self.torch_dtype)

    def _build(self, shapes, n_classes):
        cfg = self.config_
        torch.manual_seed(cfg.seed)
        net = HAHINet(shapes, n_classes, cfg, disable=cfg.disable).to(self.torch_dtype)
        return net

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_modalities(X)
        y = np.asarray(y)
        if y.shape != (n_samples(X),):
            raise ValueError("y must be a 1-D label vector matching X")
        self.config_ = self.resolved_config()
        cfg = self.config_
        self.classes_ = unique_labels(y)
        self.n_classes_ = len(self.classes_)
        y_idx = np.searchsorted(self.classes_, y)
        self.input_shapes_ = {k: tuple(X[k].shape[1:]) for k in MODALITIES}
        torch.use_deterministic_algorithms(True, warn_only=True)
        self.network_ = self._build(self.input_shapes_, self.n_classes_)
        opt = torch.optim.Adam(self.network_.parameters(), lr=cfg.learning_rate,
                               betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
        Xt = self._prepare(X)
        yt = torch.as_tensor(y_idx, dtype=torch.long)
        has_val = X_val is not None and y_val is not None
        if has_val:
            Xv = check_modalities(X_val, self.input_shapes_)
            yv = np.asarray(y_val)
        rng = np.random.default_rng(cfg.seed)
        n = n_samples(X)
        self.loss_curve_, self.val_loss_curve_, self.val_accuracy_curve_ = [], [], []
        best = (-np.inf, None, -1)
        for epoch in range(cfg.epochs):
            self.network_.train()
            order = rng.permutation(n)
            total, count = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss = self.network_.loss(take(Xt, idx), yt[idx])
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(idx)
                count += len(idx)
            self.loss_curve_.append(total / count)
            if has_val:
                vloss, vacc = self._val_metrics(Xv, yv)
                self.val_loss_curve_.append(vloss)
                self.val_accuracy_curve_.append(vacc)
                # ties go to the later epoch, which has trained longer
                if vacc >= best[0]:
                    best = (vacc, self._state_copy(), epoch)
            if self.verbose:
                logger.info("epoch %d loss %.4f %s", epoch, self.loss_curve_[-1],
                            f"val_acc {self.val_accuracy_curve_[-1]:.3f}" if has_val else "")
        if has_val and best[1] is not None:
            self.network_.load_state_dict(best[1])
            self.best_epoch_ = best[2]
        else:
            self.best_epoch_ = cfg.epochs - 1
        self.network_.eval()
        return self

    def _state_copy(self):
        return {k: v.detach().clone() for k, v in self.network_.state_dict().items()}

    def _val_metrics(self, Xv, yv):
        self.network_.eval()
        with torch.no_grad():
            Xt = self._prepare(Xv)
            y_idx = torch.as_tensor(np.searchsorted(self.classes_, yv), dtype=torch.long)
            losses, correct = [], 0
            n = n_samples(Xv)
            for start in range(0, n, self.config_.batch_size):
                sl = slice(start, start + self.config_.batch_size)
                batch = {k: v[sl] for k, v in Xt.items()}
                total, parts = self.network_.loss(batch, y_idx[sl], return_parts=True)
                losses.append(float(total) * len(y_idx[sl]))
                correct += int((parts["logits"].argmax(1) == y_idx[sl]).sum())
        self.network_.train()
        return sum(losses) / n, correct / n

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("HAHIClassifier is not fitted yet")

    def decision_function(self, X, batch_size: int = 16) -> np.ndarray:
        """Raw class logits, ``(N, C)``."""
        self._check_fitted()
        X = check_modalities(X, self.input_shapes_)
        return self.logits_normalized(self._prepare(X), batch_size).cpu().numpy()

    def logits_normalized(self, Xt: dict, batch_size: int = 16):
        """Logits for already z-scored tensor inputs."""
        self.network_.eval()
        n = Xt["sfc"].shape[0]
        out = []
        with torch.no_grad():
            for start in range(0, n, batch_size):
                out.append(self.network_({k: v[start:start + batch_size] for k, v in Xt.items()}))
        return torch.cat(out)

    def predict_proba(self, X) -> np.ndarray:
        z = torch.as_tensor(self.decision_function(X))
        return torch.softmax(z, dim=1).numpy()

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    # checkpoints --------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        """Write parameters as tensor containers plus config and training state."""
        self._check_fitted()
        path = Path(path)
        (path / "params").mkdir(parents=True, exist_ok=True)
        for name, tensor in self.network_.state_dict().items():
            arr = tensor.detach().cpu().numpy()
            save_array(path / "params" / name, arr.reshape(arr.shape or (1,)), name=name)
        self.config_.save(path / "config.json")
        state = {
            "classes": [int(c) for c in self.classes_],
            "input_shapes": {k: list(v) for k, v in self.input_shapes_.items()},
            "seed": self.config_.seed,
            "dtype": self.dtype,
            "best_epoch": self.best_epoch_,
            "loss_curve": self.loss_curve_,
            "val_loss_curve": self.val_loss_curve_,
            "val_accuracy_curve": self.val_accuracy_curve_,
            "final_train_loss": self.loss_curve_[-1] if self.loss_curve_ else None,
            "final_val_loss": self.val_loss_curve_[-1] if self.val_loss_curve_ else None,
        }
        state.update(extra or {})
        (path / "state.json").write_text(json.dumps(state, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "HAHIClassifier":
        path = Path(path)
        if not (path / "state.json").is_file():
            raise FileNotFoundError(f"no checkpoint at {path}")
        cfg = HAHIConfig.from_json(path / "config.json")
        state = json.loads((path / "state.json").read_text())
        est = cls(config=cfg, dtype=state.get("dtype", "float32"))
        est.config_ = cfg
        est.classes_ = np.array(state["classes"])
        est.n_classes_ = len(est.classes_)
        est.input_shapes_ = {k: tuple(v) for k, v in state["input_shapes"].items()}
        est.network_ = HAHINet(est.input_shapes_, est.n_classes_, cfg, disable=cfg.disable).to(est.torch_dtype)
        sd = est.network_.state_dict()
        loaded = {}
        for name, ref in sd.items():
            arr = load_array(path / "params" / name).reshape(tuple(ref.shape))
            loaded[name] = torch.as_tensor(arr, dtype=ref.dtype)
        est.network_.load_state_dict(loaded)
        est.network_.eval()
        est.loss_curve_ = state.get("loss_curve", [])
        est.val_loss_curve_ = state.get("val_loss_curve", [])
        est.val_accuracy_curve_ = state.get("val_accuracy_curve", [])
        est.best_epoch_ = state.get("best_epoch")
        est.state_ = state
        return est
