"""Convolutional encoders, pyramid injection of multi-scale DFCs, alignment losses.

Tensors follow the torch Conv3d layout ``(N, C, A, B, D)``. Connectivity
inputs use ``A = B = R`` and ``D`` = frames; regional inputs use the grid axes.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def level_stride(shape, kind: str) -> tuple[int, int, int]:
    """Per-axis reduction applied by one encoder level.

    Connectivity maps halve the two ROI axes and quarter the frame axis;
    regional maps halve every axis. Axes that would drop below 1 are clamped.
    """
    a, b, d = shape
    if kind == "connectivity":
        return min(2, a), min(2, b), min(4, d)
    if kind == "regional":
        return min(2, a), min(2, b), min(2, d)
    raise ValueError(f"unknown pathway kind {kind!r}")


def reduce_shape(shape, stride) -> tuple[int, int, int]:
    return tuple(-(-s // k) for s, k in zip(shape, stride))


def level_shapes(input_shape, kind: str, n_blocks: int) -> list[tuple[int, int, int]]:
    """Spatial/depth extents after each encoder level."""
    shapes, cur = [], tuple(input_shape)
    for _ in range(n_blocks):
        cur = reduce_shape(cur, level_stride(cur, kind))
        shapes.append(cur)
    return shapes


def fan_in_uniform_(module: nn.Module) -> None:
    """Fan-in-scaled uniform initialisation of every conv/linear layer.

    Weights ~ U(+-sqrt(3/fan_in)) (unit-variance preserving), biases ~
    U(+-1/sqrt(fan_in)). The smaller torch default bound stalls training of
    the deep stack for many epochs.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv3d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(3.0 / fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                b = 1.0 / math.sqrt(fan_in)
                nn.init.uniform_(m.bias, -b, b)


class EncoderBlock(nn.Module):
    """conv3 -> ReLU, plus a 1x1 projected shortcut, then downsampling.

    The first block downsamples with a strided convolution; later blocks
    convolve at stride 1 and average-pool.
    """

    def __init__(self, in_ch: int, out_ch: int, stride, strided_conv: bool):
        super().__init__()
        self.stride = tuple(stride)
        self.strided_conv = strided_conv
        conv_stride = self.stride if strided_conv else 1
        self.conv = nn.Conv3d(in_ch, out_ch, 3, stride=conv_stride, padding=1)
        self.skip = nn.Conv3d(in_ch, out_ch, 1, stride=conv_stride)

    def forward(self, x):
        y = F.relu(self.conv(x)) + self.skip(x)
        if not self.strided_conv and self.stride != (1, 1, 1):
            y = F.avg_pool3d(y, self.stride, ceil_mode=True)
        return y


class PyramidInjector(nn.Module):
    """Inject ``DFC(s)`` into the base DFC pathway at encoder level ``level``.

    ``f_s`` is ``level`` strided conv stages taking the ``R x R x T`` scale input
    to the level's extent and channel count. Its output is interleaved with the
    level map along depth (injected slice first), doubling the depth, and
    ``g_s`` (depthwise conv with depth stride 2, then pointwise) restores it.
    """

    def __init__(self, input_shape, level: int, filters):
        super().__init__()
        self.level = level
        stages, cur, ch = [], tuple(input_shape), 1
        for j in range(level):
            stride = level_stride(cur, "connectivity")
            stages.append(nn.Conv3d(ch, filters[j], 3, stride=stride, padding=1))
            ch, cur = filters[j], reduce_shape(cur, stride)
        self.f_s = nn.ModuleList(stages)
        self.out_shape = cur
        self.depthwise = nn.Conv3d(ch, ch, (3, 3, 2), stride=(1, 1, 2), padding=(1, 1, 0), groups=ch)
        self.pointwise = nn.Conv3d(ch, ch, 1)

    def adjust(self, dfc_s):
        x = dfc_s
        for conv in self.f_s:
            x = F.relu(conv(x))
        return x

    @staticmethod
    def interleave(injected, level_map):
        if injected.shape != level_map.shape:
            raise ValueError(
                f"adjusted pyramid features {tuple(injected.shape)} do not match "
                f"level map {tuple(level_map.shape)}"
            )
        merged = torch.stack((injected, level_map), dim=-1)
        return merged.flatten(-2)

    def merge(self, merged):
        return self.pointwise(self.depthwise(merged))

    def forward(self, dfc_s, level_map):
        return self.merge(self.interleave(self.adjust(dfc_s), level_map))


class EncoderPathway(nn.Module):
    """Four (or ``n_blocks``) residual conv blocks plus a pooled embedding head."""

    def __init__(self, input_shape, kind: str, filters, emb_dim: int):
        super().__init__()
        self.kind = kind
        self.input_shape = tuple(input_shape)
        self.shapes = level_shapes(input_shape, kind, len(filters))
        blocks, ch, cur = [], 1, self.input_shape
        for i, f in enumerate(filters):
            stride = level_stride(cur, kind)
            blocks.append(EncoderBlock(ch, f, stride, strided_conv=(i == 0)))
            ch, cur = f, reduce_shape(cur, stride)
        self.blocks = nn.ModuleList(blocks)
        self.channels = ch
        self.embed = nn.Linear(ch, emb_dim)

    def forward(self, x, injections=None):
        """Return ``(per-level maps, pooled embedding)``.

        ``injections`` maps level (1-based) to ``(injector, dfc_s)``; the
        injected map replaces the level output before the next block.
        """
        maps = []
        for l, block in enumerate(self.blocks, start=1):
            x = block(x)
            if injections and l in injections:
                injector, dfc_s = injections[l]
                x = injector(dfc_s, x)
            maps.append(x)
        emb = self.embed(x.mean(dim=(2, 3, 4)))
        return maps, emb


def cosine_sim(a, b, eps: float = 0.0):
    """Cosine similarity along the last axis; zero vectors are rejected."""
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na <= eps).any()) or bool((nb <= eps).any()):
        raise ValueError("cosine similarity undefined for a zero vector")
    return (a * b).sum(-1) / (na * nb)


def contrastive_loss(anchor, positive, temperature: float = 0.5, symmetrize: bool = True):
    """Temperature-scaled contrastive loss over a batch of positive pairs.

    For each anchor the denominator runs over all ``2N`` batch embeddings
    except the anchor itself, so it includes the positive. With
    ``symmetrize`` both members of each pair serve as anchor and the loss is
    averaged over all ``2N`` anchors; otherwise only ``anchor`` rows count.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    anchor, positive = torch.as_tensor(anchor), torch.as_tensor(positive)
    if anchor.shape != positive.shape or anchor.dim() != 2:
        raise ValueError("anchor and positive must both be N x d")
    n = anchor.shape[0]
    z = torch.cat((anchor, positive), dim=0)
    norms = z.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("contrastive loss undefined for a zero embedding")
    u = z / norms[:, None]
    logits = (u @ u.T) / temperature
    eye = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    target = torch.cat((torch.arange(n, 2 * n), torch.arange(0, n))).to(z.device)
    rows = 2 * n if symmetrize else n
    logp = logits[:rows].log_softmax(dim=1)
    return -logp[torch.arange(rows), target[:rows]].mean()


def dsa_loss(z_dynamic, z_static, temperature: float = 0.5, symmetrize: bool = True):
    """Dynamic-static alignment: the DFC and SFC embeddings of a subject are positives."""
    return contrastive_loss(z_dynamic, z_static, temperature, symmetrize)


def fsa_common(z_functional, z_structural):
    """Common-space pair ``(elementwise product, elementwise sum)``."""
    z_functional, z_structural = torch.as_tensor(z_functional), torch.as_tensor(z_structural)
    if z_functional.shape != z_structural.shape:
        raise ValueError("functional and structural embeddings differ in shape")
    return z_functional * z_structural, z_functional + z_structural


def fsa_loss(z_star, z_plus, temperature: float = 0.5, symmetrize: bool = True):
    """Functional-structural alignment between the product and sum transforms."""
    return contrastive_loss(z_star, z_plus, temperature, symmetrize)
