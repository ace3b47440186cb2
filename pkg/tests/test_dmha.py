import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hahi.dmha import (EncoderPathway, PyramidInjector, contrastive_loss, cosine_sim, dsa_loss, fsa_common,
                       fsa_loss, level_shapes)

DFC_SHAPE = (32, 32, 128)
FILTERS = [8, 16, 32, 64]


def zero_biases(module):
    for m in module.modules():
        if getattr(m, "bias", None) is not None:
            torch.nn.init.zeros_(m.bias)


def test_connectivity_level_shapes():
    enc = EncoderPathway(DFC_SHAPE, "connectivity", FILTERS, 64)
    maps, emb = enc(torch.randn(1, 1, *DFC_SHAPE))
    got = [tuple(m.shape[1:]) for m in maps]
    assert got == [(8, 16, 16, 32), (16, 8, 8, 8), (32, 4, 4, 2), (64, 2, 2, 1)]
    assert emb.shape == (1, 64)


def test_regional_level_shapes():
    enc = EncoderPathway((32, 32, 32), "regional", FILTERS, 64)
    maps, _ = enc(torch.randn(1, 1, 32, 32, 32))
    assert [tuple(m.shape[1:]) for m in maps] == [
        (8, 16, 16, 16), (16, 8, 8, 8), (32, 4, 4, 4), (64, 2, 2, 2)]


@pytest.mark.parametrize("r, t", [(16, 64), (32, 16), (64, 256)])
def test_level_shape_rule(r, t):
    shapes = level_shapes((r, r, t), "connectivity", 4)
    for l, s in enumerate(shapes, start=1):
        assert s == (r // 2**l, r // 2**l, max(1, math.ceil(t / 4**l)))


def test_zero_input_gives_zero_maps():
    enc = EncoderPathway((16, 16, 16), "regional", [2, 4, 4, 8], 5)
    zero_biases(enc)
    maps, emb = enc(torch.zeros(2, 1, 16, 16, 16))
    assert all(torch.count_nonzero(m) == 0 for m in maps)
    assert torch.count_nonzero(emb) == 0


def test_injection_merged_depth_level1():
    base = EncoderPathway(DFC_SHAPE, "connectivity", FILTERS, 64)
    inj = PyramidInjector(DFC_SHAPE, 1, FILTERS)
    maps, _ = base(torch.randn(1, 1, *DFC_SHAPE))
    adjusted = inj.adjust(torch.randn(1, 1, *DFC_SHAPE))
    merged = inj.interleave(adjusted, maps[0])
    assert merged.shape[-1] == 64
    assert inj(torch.randn(1, 1, *DFC_SHAPE), maps[0]).shape == maps[0].shape == (1, 8, 16, 16, 32)


def test_interleave_order():
    a = torch.arange(3.0).view(1, 1, 1, 1, 3)
    b = 10 + torch.arange(3.0).view(1, 1, 1, 1, 3)
    assert PyramidInjector.interleave(a, b).flatten().tolist() == [0, 10, 1, 11, 2, 12]


def test_interleave_shape_mismatch():
    with pytest.raises(ValueError, match="do not match"):
        PyramidInjector.interleave(torch.zeros(1, 2, 4, 4, 2), torch.zeros(1, 2, 4, 4, 4))


def test_identity_injection_recovers_level_map():
    inj = PyramidInjector((16, 16, 32), 2, [3, 4])
    zero_biases(inj)
    with torch.no_grad():
        inj.depthwise.weight.zero_()
        inj.depthwise.weight[:, 0, 1, 1, 1] = 1.0  # centre tap on the level-map slice
        inj.pointwise.weight.copy_(torch.eye(4).view(4, 4, 1, 1, 1))
    level_map = torch.randn(2, 4, 4, 4, 2)
    out = inj(torch.zeros(2, 1, 16, 16, 32), level_map)
    assert torch.equal(out, level_map)


def test_all_levels_injected_keep_shape():
    base = EncoderPathway(DFC_SHAPE, "connectivity", FILTERS, 64)
    injectors = {l: PyramidInjector(DFC_SHAPE, l, FILTERS) for l in range(1, 5)}
    x = torch.randn(1, 1, *DFC_SHAPE)
    plain, _ = base(x)
    injected, _ = base(x, {l: (injectors[l], torch.randn(1, 1, *DFC_SHAPE)) for l in injectors})
    assert [m.shape for m in plain] == [m.shape for m in injected]
    assert injected[-1].shape == (1, 64, 2, 2, 1)
    for l, inj in injectors.items():
        assert inj.out_shape == tuple(plain[l - 1].shape[2:])


def test_cosine_examples():
    assert float(cosine_sim(torch.tensor([1.0, 0]), torch.tensor([0.0, 1]))) == 0.0
    v = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    assert float(cosine_sim(2 * v, 3 * v)) == pytest.approx(1.0, abs=1e-15)
    assert float(cosine_sim(torch.tensor([1.0, 2, 2]), torch.tensor([2.0, 1, 2]))) == pytest.approx(8 / 9)
    with pytest.raises(ValueError, match="zero vector"):
        cosine_sim(torch.zeros(2), torch.ones(2))


def test_single_sample_losses_vanish():
    z = torch.randn(1, 6, dtype=torch.float64)
    w = torch.randn(1, 6, dtype=torch.float64)
    assert float(dsa_loss(z, w)) == 0.0
    assert float(fsa_loss(z, w)) == 0.0


def test_dsa_closed_form_n2():
    zd = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    expected = -math.log(math.e / (math.e + 2))
    assert expected == pytest.approx(0.5514, abs=1e-4)
    assert float(dsa_loss(zd, zd.clone(), temperature=1.0)) == pytest.approx(expected, abs=1e-12)
    assert float(dsa_loss(zd, zd.clone(), 1.0, symmetrize=False)) == pytest.approx(expected, abs=1e-12)


def test_fsa_closed_form_n2():
    v = torch.tensor([[1.0, 2.0, -0.5]], dtype=torch.float64)
    star = torch.cat([v, -v])
    expected = -math.log(math.e / (math.e + 2 * math.exp(-1)))
    assert expected == pytest.approx(0.2395, abs=1e-4)
    assert float(fsa_loss(star, star.clone(), temperature=1.0)) == pytest.approx(expected, abs=1e-12)


def test_fsa_symmetric_in_transform_roles():
    g = torch.Generator().manual_seed(0)
    a, b = torch.randn(5, 4, generator=g), torch.randn(5, 4, generator=g)
    assert float(fsa_loss(a, b)) == pytest.approx(float(fsa_loss(b, a)), abs=1e-6)


def test_fsa_common_examples():
    star, plus = fsa_common(torch.tensor([1.0, 2]), torch.tensor([3.0, 4]))
    assert star.tolist() == [3, 8] and plus.tolist() == [4, 6]
    s = torch.tensor([0.5, -2.0])
    star, plus = fsa_common(torch.zeros(2), s)
    assert star.tolist() == [0, 0] and torch.equal(plus, s)
    star, plus = fsa_common(torch.ones(2), torch.ones(2))
    assert star.tolist() == [1, 1] and plus.tolist() == [2, 2]
    assert float(cosine_sim(star, plus)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fsa_common(torch.ones(2), torch.ones(3))


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        contrastive_loss(torch.ones(2, 2), torch.ones(2, 2), temperature=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000), st.floats(0.05, 2.0), st.booleans())
def test_losses_nonnegative_and_scale_invariant(n, seed, tau, sym):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(n, 5, generator=g, dtype=torch.float64)
    b = torch.randn(n, 5, generator=g, dtype=torch.float64)
    c = torch.rand(n, 1, generator=g, dtype=torch.float64) * 10 + 0.01
    for fn in (dsa_loss, fsa_loss):
        base = float(fn(a, b, tau, sym))
        assert base >= 0
        assert float(fn(c * a, b, tau, sym)) == pytest.approx(base, abs=1e-8)
        assert float(fn(a, 3.7 * b, tau, sym)) == pytest.approx(base, abs=1e-8)


def _rotated_pair_loss(p):
    """Loss with sim(Zd_0, Zs_0) = p and every negative similarity held fixed."""
    q = math.sqrt(1 - p * p)
    zd = torch.tensor([[1.0, 0, 0], [0, 1.0, 0]], dtype=torch.float64)
    zs = torch.tensor([[p, 0, q], [0, 1.0, 0]], dtype=torch.float64)
    return float(dsa_loss(zd, zs, 0.5))


@pytest.mark.parametrize("p", [-0.8, -0.3, 0.0, 0.4, 0.9])
def test_dsa_decreasing_in_positive_similarity(p):
    h = 1e-6
    slope = (_rotated_pair_loss(p + h) - _rotated_pair_loss(p - h)) / (2 * h)
    assert slope < 0


def test_alignment_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(3)
    zd, zs, zf, zr = (torch.randn(4, 6, generator=g, dtype=torch.float64, requires_grad=True) for _ in range(4))

    def f(zd, zs, zf, zr):
        star, plus = fsa_common(zf, zr)
        return dsa_loss(zd, zs) + fsa_loss(star, plus)

    assert torch.autograd.gradcheck(f, (zd, zs, zf, zr), eps=1e-6, atol=1e-8, rtol=1e-4)
    loss = f(zd, zs, zf, zr)
    grads = torch.autograd.grad(loss, (zd, zs, zf, zr))
    for t, grad in zip((zd, zs, zf, zr), grads):
        num = torch.zeros_like(t)
        with torch.no_grad():
            for i in np.ndindex(*t.shape):
                orig = float(t[i])
                t[i] = orig + 1e-6
                up = float(f(zd, zs, zf, zr))
                t[i] = orig - 1e-6
                down = float(f(zd, zs, zf, zr))
                t[i] = orig
                num[i] = (up - down) / 2e-6
        rel = float((grad - num).norm() / grad.norm())
        assert rel < 1e-4
