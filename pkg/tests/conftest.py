import numpy as np
import pytest
import torch

from hahi.config import tiny_config
from hahi.synthetic import SyntheticConfig


def tiny_cohort_config(**kw) -> SyntheticConfig:
    base = dict(n_subjects_per_class=10, n_rois=8, n_timepoints=64, sampling_interval=2.0,
                planted_rois=[0, 1], grid=[8, 8, 8], atlas_arrangement=[2, 2, 2], seed=3)
    base.update(kw)
    return SyntheticConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config(epochs=2)


@pytest.fixture
def tiny_cohort_cfg():
    return tiny_cohort_config()


@pytest.fixture
def tiny_shapes():
    # R=8, T=16 frames, 2 levels -> 3 DFC scales; 8^3 regional grid
    return {"dfc": (3, 8, 8, 16), "sfc": (8, 8, 1), "alff": (8, 8, 8), "fa": (8, 8, 8)}


def random_batch(shapes, n, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return {k: torch.randn(n, *s, generator=g, dtype=dtype) for k, s in shapes.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance reporting: one line per criterion in the terminal summary
ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
