"""Run configuration: a single flat JSON object, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

COMPONENTS = ("TSA", "DSA", "FSA", "FI", "GI")
# components are removed from the top of the hierarchy downwards
REMOVAL_ORDER = ("GI", "FI", "FSA", "DSA", "TSA")
FI_PAIRINGS = ("default", "swapped")


@dataclass
class HAHIConfig:
    # features
    delta: int = 1
    levels: int = 4
    base_window: int = 7
    frames: int = 128
    band_low: float = 0.01
    band_high: float = 0.08
    # alignment stack
    n_blocks: int = 4
    filters: list = field(default_factory=lambda: [8, 16, 32, 64])
    emb_dim: int = 64
    temperature: float = 0.5
    symmetrize_contrastive: bool = True
    # interactions
    heads: int = 16
    tokens: int = 4
    token_dim: int = 64
    hidden_dim: int = 64
    lambda_mode: str | float = "dim"
    fi_pairing: str = "default"
    # explanation
    sam_perturbation: str = "hadamard"
    # training
    batch_size: int = 4
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    seed: int = 0
    n_folds: int = 10
    fold: int = 0
    disable: list = field(default_factory=list)
    free_order: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if len(self.filters) != self.n_blocks:
            raise ValueError("filters needs one entry per encoder block")
        if not 1 <= self.levels <= self.n_blocks:
            raise ValueError("levels must lie in 1..n_blocks")
        if self.token_dim % self.heads:
            raise ValueError(f"token_dim {self.token_dim} not divisible by heads {self.heads}")
        if self.fi_pairing not in FI_PAIRINGS:
            raise ValueError(f"fi_pairing must be one of {FI_PAIRINGS}")
        if self.sam_perturbation not in ("add", "hadamard"):
            raise ValueError("sam_perturbation must be 'add' or 'hadamard'")
        if not (self.lambda_mode == "dim" or isinstance(self.lambda_mode, (int, float))):
            raise ValueError("lambda_mode must be 'dim' or a positive number")
        if isinstance(self.lambda_mode, (int, float)) and self.lambda_mode <= 0:
            raise ValueError("lambda_mode must be positive")
        check_disable(self.disable, self.free_order)

    @property
    def fi_lambda(self) -> float:
        return float(self.token_dim if self.lambda_mode == "dim" else self.lambda_mode)

    def feature_params(self) -> dict:
        return dict(delta=self.delta, levels=self.levels, base_window=self.base_window,
                    frames=self.frames, band_low=self.band_low, band_high=self.band_high)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_updates(self, **kw) -> "HAHIConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "HAHIConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "HAHIConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def check_disable(disable, free_order: bool = False) -> frozenset:
    """Validate an ablation set; by default it must be a prefix of REMOVAL_ORDER."""
    names = [str(d).upper() for d in disable]
    bad = [n for n in names if n not in COMPONENTS]
    if bad:
        raise ValueError(f"invalid component name(s) {bad}; choose from {COMPONENTS}")
    chosen = frozenset(names)
    if not free_order and chosen != frozenset(REMOVAL_ORDER[: len(chosen)]):
        raise ValueError(
            f"disable set {sorted(chosen)} breaks the removal order {REMOVAL_ORDER}; "
            "pass free_order to override"
        )
    return chosen


def hierarchical_ablations() -> list[frozenset]:
    """The six nested removal configurations, from full model to everything off."""
    return [frozenset(REMOVAL_ORDER[:k]) for k in range(len(REMOVAL_ORDER) + 1)]


def tiny_config(**overrides) -> HAHIConfig:
    """Small double-checkable configuration (R=8 cohort, 16 frames, 2 levels)."""
    base = dict(n_blocks=2, levels=2, filters=[2, 4], frames=16, base_window=4,
                emb_dim=4, tokens=2, token_dim=4, heads=1, hidden_dim=4)
    base.update(overrides)
    return HAHIConfig(**base)
