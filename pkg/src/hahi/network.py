"""The full four-branch network: alignment encoders feeding the interaction head."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import HAHIConfig, check_disable
from .ddhi import GlobalInteraction, ResidualMixer, ResidualProjector, fi_block, total_loss
from .dmha import EncoderPathway, PyramidInjector, dsa_loss, fan_in_uniform_, fsa_common, fsa_loss

BRANCHES = {"dfc": "CD", "sfc": "CS", "alff": "RF", "fa": "RS"}


class Tokenizer(nn.Module):
    """Average the level maps' positions into ``n`` groups and project channels."""

    def __init__(self, channels: int, n_tokens: int, dim: int):
        super().__init__()
        self.n_tokens = n_tokens
        self.proj = nn.Linear(channels, dim)

    def forward(self, fmap):
        pooled = F.adaptive_avg_pool1d(fmap.flatten(2), self.n_tokens)
        return self.proj(pooled.transpose(1, 2))


class HAHINet(nn.Module):
    """Dual-modal network over DFC stacks, SFC, ALFF and FA volumes.

    ``input_shapes`` gives per-subject shapes: ``dfc`` ``(levels+1, R, R, T)``,
    ``sfc`` ``(R, R, 1)``, ``alff``/``fa`` ``(X, Y, Z)``.
    """

    def __init__(self, input_shapes: dict, n_classes: int, cfg: HAHIConfig | None = None,
                 disable=()):
        super().__init__()
        cfg = cfg or HAHIConfig()
        self.cfg = cfg
        self.n_classes = n_classes
        self.disable = check_disable(disable, free_order=True)
        n_scales, R1, R2, T = input_shapes["dfc"]
        if n_scales != cfg.levels + 1:
            raise ValueError(f"dfc stack has {n_scales} scales, config expects {cfg.levels + 1}")
        self.input_shapes = {k: tuple(v) for k, v in input_shapes.items()}
        conn = (R1, R2, T)
        self.paths = nn.ModuleDict({
            "dfc": EncoderPathway(conn, "connectivity", cfg.filters, cfg.emb_dim),
            "sfc": EncoderPathway(input_shapes["sfc"], "connectivity", cfg.filters, cfg.emb_dim),
            "alff": EncoderPathway(input_shapes["alff"], "regional", cfg.filters, cfg.emb_dim),
            "fa": EncoderPathway(input_shapes["fa"], "regional", cfg.filters, cfg.emb_dim),
        })
        self.injectors = nn.ModuleDict(
            {str(l): PyramidInjector(conn, l, cfg.filters) for l in range(1, cfg.levels + 1)}
        )
        self.tokenizers = nn.ModuleDict(
            {k: Tokenizer(p.channels, cfg.tokens, cfg.token_dim) for k, p in self.paths.items()}
        )
        self.mixer_c = ResidualMixer(cfg.token_dim)
        self.mixer_r = ResidualMixer(cfg.token_dim)
        self.gi = GlobalInteraction(cfg.token_dim, cfg.heads)
        self.projector = ResidualProjector(cfg.token_dim, cfg.hidden_dim, n_classes)
        fan_in_uniform_(self)

    def encode(self, X: dict) -> dict:
        """Run the four encoder pathways; returns level maps and pooled embeddings."""
        dfc = X["dfc"]
        injections = None
        if "TSA" not in self.disable:
            injections = {l: (self.injectors[str(l)], dfc[:, l:l + 1])
                          for l in range(1, self.cfg.levels + 1)}
        out = {}
        out["dfc"] = self.paths["dfc"](dfc[:, :1], injections)
        out["sfc"] = self.paths["sfc"](X["sfc"].unsqueeze(1))
        out["alff"] = self.paths["alff"](X["alff"].unsqueeze(1))
        out["fa"] = self.paths["fa"](X["fa"].unsqueeze(1))
        return out

    def high_level(self, X: dict) -> dict:
        """Final-level feature maps per modality, ``(N, K, a, b, c)``."""
        return {k: maps[-1] for k, (maps, _) in self.encode(X).items()}

    def forward(self, X: dict, return_details: bool = False):
        enc = self.encode(X)
        lat = {BRANCHES[k]: self.tokenizers[k](maps[-1]) for k, (maps, _) in enc.items()}
        if "FI" in self.disable:
            i_c1, i_c2, i_r1, i_r2 = lat["CD"], lat["CS"], lat["RF"], lat["RS"]
        else:
            i_c1, i_c2, i_r1, i_r2 = fi_block(lat, self.cfg.fi_lambda, self.cfg.fi_pairing)
        mix_c = self.mixer_c(i_c1, i_c2, lat["CD"], lat["CS"])
        mix_r = self.mixer_r(i_r1, i_r2, lat["RF"], lat["RS"])
        if "GI" in self.disable:
            g_c, g_r = mix_c, mix_r
        else:
            g_c, g_r = self.gi(mix_c, mix_r)
        logits = self.projector(g_c, g_r)
        if not return_details:
            return logits
        return {
            "logits": logits,
            "latents": lat,
            "embeddings": {k: emb for k, (_, emb) in enc.items()},
            "maps": {k: maps for k, (maps, _) in enc.items()},
        }

    def alignment_losses(self, embeddings: dict):
        t, sym = self.cfg.temperature, self.cfg.symmetrize_contrastive
        zero = embeddings["dfc"].new_zeros(())
        dsa = zero if "DSA" in self.disable else dsa_loss(embeddings["dfc"], embeddings["sfc"], t, sym)
        if "FSA" in self.disable:
            fsa = zero
        else:
            z_star, z_plus = fsa_common(embeddings["alff"], embeddings["fa"])
            fsa = fsa_loss(z_star, z_plus, t, sym)
        return dsa, fsa

    def loss(self, X: dict, y, return_parts: bool = False):
        det = self.forward(X, return_details=True)
        dsa, fsa = self.alignment_losses(det["embeddings"])
        total = total_loss(det["logits"], y, dsa, fsa)
        if return_parts:
            return total, {"logits": det["logits"], "dsa": dsa, "fsa": fsa}
        return total


def to_tensors(X: dict, dtype=torch.float32, device="cpu") -> dict:
    return {k: torch.as_tensor(v, dtype=dtype, device=device) for k, v in X.items()}
