"""Windowed neural filter: segment embedding, causal backbone, projection.

The forward pass mirrors the windowed estimation pipeline: each observation
window is segmented and z-scored per segment, each flattened segment is
embedded as one token, optional byte-level context tokens are prepended,
a causal sequence model runs over the token sequence, and the outputs at
the observation-token positions are projected block-wise back to state
space. Estimates leave the model in raw state units via stored
training-split statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .sap import VOCAB_SIZE, SaPContext
from .windows import STD_FLOOR, n_segments

BACKBONES = ("transformer", "mlp", "rnn", "identity")


@dataclass
class HyperParams:
    obs_dim: int
    state_dim: int
    window_len: int = 40
    segment_len: int = 20
    d_model: int = 256
    head_hidden: int = 512
    head_depth: int = 2
    n_layers: int = 4
    n_heads: int = 4
    backbone: str = "transformer"
    max_seq_len: int = 640  # context budget plus observation tokens

    def __post_init__(self):
        ns, _ = n_segments(self.window_len, self.segment_len)
        if self.window_len % ns != 0:
            raise ValueError(
                f"window_len {self.window_len} must be divisible by the "
                f"segment count {ns} for block-wise projection"
            )
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")

    @property
    def num_segments(self) -> int:
        return n_segments(self.window_len, self.segment_len)[0]

    @property
    def block_len(self) -> int:
        return self.window_len // self.num_segments


def _mlp(in_dim: int, hidden: int, out_dim: int, depth: int) -> nn.Sequential:
    dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(nn.GELU())
    return nn.Sequential(*layers)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x):
        b, s, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)
        hd = d // self.n_heads
        q = q.view(b, s, self.n_heads, hd).transpose(1, 2)
        k = k.view(b, s, self.n_heads, hd).transpose(1, 2)
        v = v.view(b, s, self.n_heads, hd).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(b, s, d)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class TransformerBackbone(nn.Module):
    """Tiny decoder-only transformer with learned positional embeddings."""

    def __init__(self, hp: HyperParams):
        super().__init__()
        self.pos = nn.Embedding(hp.max_seq_len, hp.d_model)
        self.blocks = nn.ModuleList(
            TransformerBlock(hp.d_model, hp.n_heads) for _ in range(hp.n_layers)
        )
        self.ln_out = nn.LayerNorm(hp.d_model)

    def forward(self, x):
        positions = torch.arange(x.shape[1], device=x.device)
        x = x + self.pos(positions)
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class MLPBackbone(nn.Module):
    """Position-wise MLP; trivially causal (no cross-token interaction)."""

    def __init__(self, hp: HyperParams):
        super().__init__()
        self.net = _mlp(hp.d_model, 4 * hp.d_model, hp.d_model, 3)

    def forward(self, x):
        return self.net(x)


class RNNBackbone(nn.Module):
    """GRU over the token sequence; causal by construction."""

    def __init__(self, hp: HyperParams):
        super().__init__()
        self.rnn = nn.GRU(
            hp.d_model, hp.d_model, num_layers=2, batch_first=True
        )

    def forward(self, x):
        out, _ = self.rnn(x)
        return out


class IdentityBackbone(nn.Module):
    def __init__(self, hp: HyperParams):
        super().__init__()

    def forward(self, x):
        return x


_BACKBONE_CLASSES = {
    "transformer": TransformerBackbone,
    "mlp": MLPBackbone,
    "rnn": RNNBackbone,
    "identity": IdentityBackbone,
}


def _scaled_uniform_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.in_features)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)
        elif isinstance(m, nn.Embedding):
            bound = 1.0 / math.sqrt(m.embedding_dim)
            nn.init.uniform_(m.weight, -bound, bound)


class NeuralFilterModel(nn.Module):
    """Segment-embed / causal-backbone / block-project state estimator."""

    def __init__(self, hp: HyperParams, seed: int = 0):
        super().__init__()
        self.hp = hp
        torch.manual_seed(seed)
        # The embedding sees the z-scored segment plus its per-channel
        # (mean, std); without the statistics the absolute state level is
        # unrecoverable from normalized inputs.
        ln = (hp.segment_len + 2) * hp.obs_dim
        self.embed = _mlp(ln, hp.head_hidden, hp.d_model, hp.head_depth)
        self.context_table = nn.Embedding(VOCAB_SIZE, hp.d_model)
        self.backbone = _BACKBONE_CLASSES[hp.backbone](hp)
        self.project = _mlp(
            hp.d_model, hp.head_hidden, hp.block_len * hp.state_dim, hp.head_depth
        )
        _scaled_uniform_init(self)
        # Training-split state statistics used to de-standardize outputs.
        self.register_buffer("state_mean", torch.zeros(hp.state_dim))
        self.register_buffer("state_std", torch.ones(hp.state_dim))

    def set_state_stats(self, mean, std) -> None:
        self.state_mean.copy_(torch.as_tensor(mean, dtype=self.state_mean.dtype))
        self.state_std.copy_(torch.as_tensor(std, dtype=self.state_std.dtype))

    def segment_tokens(self, windows: torch.Tensor) -> torch.Tensor:
        """(B, T, N) observation windows -> (B, N_s, D) segment tokens."""
        hp = self.hp
        b, t, n = windows.shape
        if t != hp.window_len or n != hp.obs_dim:
            raise ValueError(
                f"window shape {(t, n)} does not match model "
                f"({hp.window_len}, {hp.obs_dim})"
            )
        ns, pad = n_segments(t, hp.segment_len)
        if pad:
            windows = torch.cat(
                [windows, windows.new_zeros(b, pad, n)], dim=1
            )
        segs = windows.view(b, ns, hp.segment_len, n)
        if pad:
            valid = segs.new_ones(ns, hp.segment_len, 1)
            valid[-1, hp.segment_len - pad :] = 0.0
            counts = valid.sum(dim=1, keepdim=True).unsqueeze(0)
            mean = (segs * valid).sum(dim=2, keepdim=True) / counts
            var = ((segs - mean) ** 2 * valid).sum(dim=2, keepdim=True) / counts
            std = var.sqrt().clamp_min(STD_FLOOR)
            segs = ((segs - mean) / std) * valid
        else:
            mean = segs.mean(dim=2, keepdim=True)
            std = segs.std(dim=2, keepdim=True, unbiased=False).clamp_min(STD_FLOOR)
            segs = (segs - mean) / std
        flat = torch.cat(
            [
                segs.reshape(b, ns, hp.segment_len * n),
                mean.squeeze(2),
                std.squeeze(2),
            ],
            dim=-1,
        )
        return self.embed(flat)

    def forward(
        self, windows: torch.Tensor, ctx: SaPContext | None = None
    ) -> torch.Tensor:
        """Estimate (B, T, M) states in raw units from (B, T, N) windows."""
        return (
            self.forward_standardized(windows, ctx) * self.state_std
            + self.state_mean
        )

    def forward_standardized(
        self, windows: torch.Tensor, ctx: SaPContext | None = None
    ) -> torch.Tensor:
        hp = self.hp
        tokens = self.segment_tokens(windows)
        b, ns, _ = tokens.shape
        if ctx is not None and len(ctx) > 0:
            ids = torch.as_tensor(
                ctx.token_ids, dtype=torch.long, device=tokens.device
            )
            ctx_tokens = self.context_table(ids).unsqueeze(0).expand(b, -1, -1)
            tokens = torch.cat([ctx_tokens, tokens], dim=1)
        if tokens.shape[1] > hp.max_seq_len:
            raise ValueError(
                f"sequence length {tokens.shape[1]} exceeds max_seq_len "
                f"{hp.max_seq_len}"
            )
        out = self.backbone(tokens)
        # Outputs at the observation-token positions themselves.
        out = out[:, -ns:, :]
        blocks = self.project(out)  # (B, N_s, block_len * M)
        return blocks.view(b, hp.window_len, hp.state_dim)

    def config_dict(self) -> dict:
        return asdict(self.hp)
