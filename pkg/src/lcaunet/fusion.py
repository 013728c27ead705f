"""Local cross-attention fusion of same-stage edge and body features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .body import attention
from .windows import ConfigurationError, check_divisible, window_partition, window_reverse

__all__ = [
    "LcafConfig", "LocalCrossAttention", "LCAF", "ConcatFusion",
    "window_partition", "window_reverse", "local_cross_attention",
    "global_cross_attention", "multi_head_lca", "lcaf_forward", "attention_cost",
]


@dataclass
class LcafConfig:
    dim: int
    heads: int = 1
    window_h: int = 7
    window_w: int = 7
    ffn_ratio: float = 4.0

    def __post_init__(self):
        if self.heads <= 0 or self.dim % self.heads:
            raise ConfigurationError(f"dim {self.dim} not divisible by {self.heads} heads")


def local_cross_attention(edge_win: Tensor, body_win: Tensor, w_q: Tensor, w_k: Tensor,
                          w_v: Tensor, return_weights: bool = False):
    """Single-head cross-attention inside windows.

    Queries come from ``edge_win``, keys and values from ``body_win``; both are
    (n_windows, tokens, C) and ``w_*`` are (C, d) projection matrices.
    """
    if edge_win.shape != body_win.shape:
        raise ValueError(
            f"edge windows {tuple(edge_win.shape)} and body windows {tuple(body_win.shape)} differ"
        )
    return attention(edge_win @ w_q, body_win @ w_k, body_win @ w_v,
                     return_weights=return_weights)


def global_cross_attention(edge: Tensor, body: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                           chunk: int = 2048) -> Tensor:
    """Dense cross-attention between two (B, C, H, W) maps, every query sees every key.

    Queries are processed in chunks of ``chunk`` rows to bound memory.
    Returns tokens (B, H*W, d).
    """
    q = edge.flatten(2).transpose(1, 2) @ w_q
    kv = body.flatten(2).transpose(1, 2)
    k, v = kv @ w_k, kv @ w_v
    return torch.cat([attention(q[:, i : i + chunk], k, v) for i in range(0, q.shape[1], chunk)], 1)


class LocalCrossAttention(nn.Module):
    """Multi-head windowed cross-attention with output projection and edge residual."""

    def __init__(self, dim: int, heads: int, window: Tuple[int, int]):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def core(self, edge_win: Tensor, body_win: Tensor) -> Tensor:
        """Concatenated head outputs before the output projection."""
        if edge_win.shape != body_win.shape:
            raise ValueError("edge and body windows must have identical shapes")
        n, t, c = edge_win.shape
        hd = c // self.heads

        def split(x: Tensor) -> Tensor:
            return x.view(n, t, self.heads, hd).transpose(1, 2)

        out = attention(split(self.q(edge_win)), split(self.k(body_win)), split(self.v(body_win)))
        return out.transpose(1, 2).reshape(n, t, c)

    def forward(self, edge: Tensor, body: Tensor, residual: bool = True) -> Tensor:
        if edge.shape != body.shape:
            raise ValueError(f"edge {tuple(edge.shape)} and body {tuple(body.shape)} shapes differ")
        _, c, h, w = edge.shape
        wh, ww = self.window
        check_divisible(h, w, wh, ww, "fusion map")
        ew, bw = window_partition(edge, wh, ww), window_partition(body, wh, ww)
        out = self.o(self.core(ew, bw))
        out = window_reverse(out, wh, ww, h, w)
        return edge + out if residual else out


def multi_head_lca(edge: Tensor, body: Tensor, module: LocalCrossAttention) -> Tensor:
    return module(edge, body)


class LCAF(nn.Module):
    """M-LCA followed by a residual GELU feed-forward network.

    Both modalities and the FFN input are layer-normalised over channels
    before projection.
    """

    def __init__(self, cfg: LcafConfig):
        super().__init__()
        self.cfg = cfg
        self.norm_edge = nn.LayerNorm(cfg.dim)
        self.norm_body = nn.LayerNorm(cfg.dim)
        self.mlca = LocalCrossAttention(cfg.dim, cfg.heads, (cfg.window_h, cfg.window_w))
        self.norm_ffn = nn.LayerNorm(cfg.dim)
        hidden = int(cfg.dim * cfg.ffn_ratio)
        self.ffn = nn.Sequential(nn.Linear(cfg.dim, hidden), nn.GELU(), nn.Linear(hidden, cfg.dim))
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)

    @staticmethod
    def _ln(norm: nn.LayerNorm, x: Tensor) -> Tensor:
        return norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

    def forward(self, edge: Tensor, body: Tensor) -> Tensor:
        if edge.shape != body.shape:
            raise ValueError(f"edge {tuple(edge.shape)} and body {tuple(body.shape)} shapes differ")
        e = self._ln(self.norm_edge, edge)
        b = self._ln(self.norm_body, body)
        m = edge + self.mlca(e, b, residual=False)
        t = self._ln(self.norm_ffn, m).permute(0, 2, 3, 1)
        return m + self.ffn(t).permute(0, 3, 1, 2)


def lcaf_forward(edge: Tensor, body: Tensor, module: LCAF) -> Tensor:
    return module(edge, body)


class ConcatFusion(nn.Module):
    """Ablation stand-in for LCAF: channel concatenation and a 1x1 conv."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(2 * dim, dim, 1)

    def forward(self, edge: Tensor, body: Tensor) -> Tensor:
        if edge.shape != body.shape:
            raise ValueError(f"edge {tuple(edge.shape)} and body {tuple(body.shape)} shapes differ")
        return self.proj(torch.cat([edge, body], dim=1))


def attention_cost(h: int, w: int, c: int, window_h: int, window_w: int, mode: str) -> int:
    """Multiply-accumulate count of multi-head cross-attention on an h x w grid.

    ``4hwC^2`` covers the Q/K/V/output projections; the second term covers
    the score and weighted-sum products, over all tokens (``global``) or over
    a ``window_h x window_w`` neighbourhood (``local``).  Softmax, scaling and
    bias additions are not counted.
    """
    if min(h, w, c, window_h, window_w) <= 0:
        raise ValueError("all dimensions must be positive")
    hw = h * w
    proj = 4 * hw * c * c
    if mode == "global":
        return proj + 2 * hw * hw * c
    if mode == "local":
        return proj + 2 * window_h * window_w * hw * c
    raise ValueError(f"mode must be 'global' or 'local', got {mode!r}")
