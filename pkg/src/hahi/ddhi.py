"""Fine-grained and cross-domain attention over latent token sequences.

Token sequences are ``(N, n, d)`` batches (a leading batch axis is optional
for the functional helpers).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def modulated_attention(l_star, l_o, lam: float):
    """Row-softmax of ``l_star @ l_o^T / sqrt(lam)``."""
    if l_star.shape[-1] != l_o.shape[-1]:
        raise ValueError("token dimensions differ")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    return torch.softmax(l_star @ l_o.transpose(-1, -2) / math.sqrt(lam), dim=-1)


def fine_grained_interaction(l_star, l_o, l_plus, lam: float | None = None, return_attention=False):
    """Attend over ``l_plus`` with weights from ``l_star`` against ``l_o``.

    ``lam`` defaults to the token dimension.
    """
    l_star, l_o, l_plus = (torch.as_tensor(t) for t in (l_star, l_o, l_plus))
    if not (l_star.shape == l_o.shape == l_plus.shape):
        raise ValueError(
            f"token sequences must share a shape, got {tuple(l_star.shape)}, "
            f"{tuple(l_o.shape)}, {tuple(l_plus.shape)}"
        )
    lam = float(l_star.shape[-1]) if lam is None else lam
    attn = modulated_attention(l_star, l_o, lam)
    out = attn @ l_plus
    return (out, attn) if return_attention else out


def fi_block(latents: dict, lam: float | None = None, pairing: str = "default"):
    """The four inner-domain interactions.

    Connectivity tokens are modulated by the functional regional latent,
    regional tokens by the static connectivity latent (``pairing="swapped"``
    uses the structural and dynamic latents instead). Returns
    ``(i_C1, i_C2, i_R1, i_R2)``.
    """
    cd, cs, rf, rs = (latents[k] for k in ("CD", "CS", "RF", "RS"))
    if pairing == "default":
        mod_c, mod_r = rf, cs
    elif pairing == "swapped":
        mod_c, mod_r = rs, cd
    else:
        raise ValueError(f"unknown FI pairing {pairing!r}")
    return (
        fine_grained_interaction(mod_c, cd, cs, lam),
        fine_grained_interaction(mod_c, cs, cd, lam),
        fine_grained_interaction(mod_r, rf, rs, lam),
        fine_grained_interaction(mod_r, rs, rf, lam),
    )


class ResidualMixer(nn.Module):
    """Linear map of the concatenated interactions plus the mean of the origins."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(2 * dim, dim)

    def forward(self, i_1, i_2, origin_a, origin_b):
        if not (i_1.shape == i_2.shape == origin_a.shape == origin_b.shape):
            raise ValueError("residual mixer inputs must share a shape")
        return self.proj(torch.cat((i_1, i_2), dim=-1)) + 0.5 * (origin_a + origin_b)


class CrossAttention(nn.Module):
    """Multi-head attention with queries from one domain, keys/values from the other."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"token dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.d_k = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x):
        n, t, _ = x.shape
        return x.view(n, t, self.heads, self.d_k).transpose(1, 2)

    def forward(self, query_src, kv_src, return_attention=False):
        q, k, v = self._split(self.q(query_src)), self._split(self.k(kv_src)), self._split(self.v(kv_src))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_k), dim=-1)
        ctx = (attn @ v).transpose(1, 2).flatten(2)
        out = self.out(ctx)
        return (out, attn) if return_attention else out


class GlobalInteraction(nn.Module):
    """``G_C`` attends connectivity values with regional queries and vice versa."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.to_connectivity = CrossAttention(dim, heads)
        self.to_regional = CrossAttention(dim, heads)

    def forward(self, mix_c, mix_r, return_attention=False):
        g_c, a_c = self.to_connectivity(mix_r, mix_c, return_attention=True)
        g_r, a_r = self.to_regional(mix_c, mix_r, return_attention=True)
        if return_attention:
            return g_c, g_r, {"C": a_c, "R": a_r}
        return g_c, g_r


class ResidualProjector(nn.Module):
    """Token-mean pooling of both domains, a two-layer head and a linear shortcut."""

    def __init__(self, dim: int, hidden: int, n_classes: int):
        super().__init__()
        self.fc1 = nn.Linear(2 * dim, hidden)
        self.fc2 = nn.Linear(hidden, n_classes)
        self.shortcut = nn.Linear(2 * dim, n_classes)

    def forward(self, g_c, g_r):
        h = torch.cat((g_c.mean(dim=-2), g_r.mean(dim=-2)), dim=-1)
        return self.fc2(F.relu(self.fc1(h))) + self.shortcut(h)


def total_loss(logits, labels, dsa=0.0, fsa=0.0):
    """Cross-entropy plus the two alignment terms, unweighted."""
    ce = F.cross_entropy(logits, torch.as_tensor(labels, device=logits.device).long())
    total = ce + dsa + fsa
    if not torch.isfinite(torch.as_tensor(total)).all():
        raise FloatingPointError(f"non-finite loss (ce={float(ce)}, dsa={float(dsa)}, fsa={float(fsa)})")
    return total
