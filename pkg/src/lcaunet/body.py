"""Body branch: hierarchical shifted-window transformer."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .windows import ConfigurationError, check_divisible, partition_hwc, reverse_hwc, to_feature


@dataclass
class BodyEncoderConfig:
    img_size: int = 224
    patch_size: int = 4
    embed_dim: int = 24
    depths: Sequence[int] = (2, 2, 2, 2)
    heads: Sequence[int] = (1, 2, 4, 8)
    window_size: int = 7
    mlp_ratio: float = 4.0

    def __post_init__(self):
        self.depths, self.heads = tuple(self.depths), tuple(self.heads)
        if len(self.depths) != 4 or len(self.heads) != 4:
            raise ConfigurationError("body encoder has exactly 4 stages")
        if any(d <= 0 or d % 2 for d in self.depths):
            raise ConfigurationError(f"stage depths must be positive and even, got {self.depths}")
        if self.embed_dim <= 0:
            raise ConfigurationError("embed_dim must be positive")
        for s, (dim, h) in enumerate(zip(self.stage_dims, self.heads)):
            if h <= 0 or dim % h:
                raise ConfigurationError(f"stage {s} dim {dim} not divisible by {h} heads")
        for g in self.stage_grids:
            check_divisible(g, g, self.window_size, self.window_size, "stage grid")

    @property
    def stage_dims(self) -> List[int]:
        return [self.embed_dim * 2**s for s in range(4)]

    @property
    def stage_grids(self) -> List[int]:
        if self.img_size % (self.patch_size * 8):
            raise ConfigurationError(
                f"image size {self.img_size} must be divisible by {self.patch_size * 8}"
            )
        g = self.img_size // self.patch_size
        return [g >> s for s in range(4)]


class PatchEmbed(nn.Module):
    """Non-overlapping PxP patches -> linear projection + learned absolute positions."""

    def __init__(self, img_size: int, patch_size: int, dim: int, in_ch: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.grid = img_size // patch_size
        self.proj = nn.Conv2d(in_ch, dim, patch_size, stride=patch_size)
        self.pos = nn.Parameter(torch.zeros(1, self.grid * self.grid, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, image: Tensor) -> Tuple[Tensor, int, int]:
        h, w = image.shape[-2:]
        p = self.patch_size
        if h % p or w % p:
            raise ConfigurationError(f"image {h}x{w} not divisible by patch size {p}")
        if (h // p, w // p) != (self.grid, self.grid):
            raise ConfigurationError(
                f"position table is for a {self.grid}x{self.grid} grid, image gives {h // p}x{w // p}"
            )
        tokens = self.proj(image).flatten(2).transpose(1, 2)
        return tokens + self.pos, h // p, w // p


def patch_embed(image: Tensor, embed: PatchEmbed) -> Tuple[Tensor, int, int]:
    return embed(image)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None,
              return_weights: bool = False):
    """Scaled dot-product attention over the last two dims.

    ``mask`` is additive and broadcasts against the (..., Nq, Nk) scores.
    """
    scores = (q @ k.transpose(-2, -1)) * q.shape[-1] ** -0.5
    if mask is not None:
        scores = scores + mask
    weights = scores.softmax(dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


@functools.lru_cache(maxsize=32)
def shift_mask(h: int, w: int, window: int, shift: int, dtype=torch.float32) -> Tensor:
    """Additive (nW, N, N) mask blocking attention across wrapped regions."""
    region = torch.zeros(1, h, w, 1)
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in cuts:
        for ws in cuts:
            region[:, hs, ws, :] = label
            label += 1
    ids = partition_hwc(region, window, window).squeeze(-1)
    diff = ids.unsqueeze(1) - ids.unsqueeze(2)
    return torch.zeros(diff.shape, dtype=dtype).masked_fill(diff != 0, -1e9)


class WindowAttention(nn.Module):
    """Multi-head self-attention restricted to (optionally shifted) windows."""

    def __init__(self, dim: int, heads: int, window: int):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, z: Tensor, h: int, w: int, shifted: bool = False,
                return_weights: bool = False):
        b, n, c = z.shape
        win = self.window
        check_divisible(h, w, win, win, "token grid")
        # a window spanning the whole grid leaves nothing to shift
        shift = win // 2 if shifted and min(h, w) > win else 0
        x = z.view(b, h, w, c)
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        windows = partition_hwc(x, win, win)
        bw, t, _ = windows.shape
        qkv = self.qkv(windows).view(bw, t, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        mask = None
        if shift:
            m = shift_mask(h, w, win, shift, dtype=z.dtype).to(z.device)
            mask = m.unsqueeze(1).repeat(b, 1, 1, 1)  # (b*nW, 1, t, t)
        out, weights = attention(q, k, v, mask, return_weights=True)
        out = self.proj(out.transpose(1, 2).reshape(bw, t, c))
        x = reverse_hwc(out, win, win, h, w)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = x.reshape(b, n, c)
        return (x, weights) if return_weights else x


def window_msa(z: Tensor, attn: WindowAttention, h: int, w: int, shifted: bool) -> Tensor:
    return attn(z, h, w, shifted)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class SwinBlock(nn.Module):
    """LN -> (S)W-MSA -> residual -> LN -> MLP -> residual."""

    def __init__(self, dim: int, heads: int, window: int, mlp_ratio: float, shifted: bool):
        super().__init__()
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, z: Tensor, h: int, w: int) -> Tensor:
        z = z + self.attn(self.norm1(z), h, w, self.shifted)
        return z + self.mlp(self.norm2(z))


class SwinBlockPair(nn.Module):
    def __init__(self, dim: int, heads: int, window: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.regular = SwinBlock(dim, heads, window, mlp_ratio, shifted=False)
        self.shifted = SwinBlock(dim, heads, window, mlp_ratio, shifted=True)

    def forward(self, z: Tensor, h: int, w: int) -> Tensor:
        return self.shifted(self.regular(z, h, w), h, w)


def swin_block_pair(z: Tensor, pair: SwinBlockPair, h: int, w: int) -> Tensor:
    return pair(z, h, w)


class PatchMerging(nn.Module):
    """Concatenate each 2x2 neighbourhood (4C), LayerNorm, project to 2C."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, z: Tensor, h: int, w: int) -> Tuple[Tensor, int, int]:
        if h % 2 or w % 2:
            raise ConfigurationError(f"patch merging needs an even grid, got {h}x{w}")
        b, n, c = z.shape
        x = z.view(b, h, w, c)
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        x = x.view(b, (h // 2) * (w // 2), 4 * c)
        return self.reduction(self.norm(x)), h // 2, w // 2


def patch_merge(z: Tensor, merge: PatchMerging, h: int, w: int) -> Tuple[Tensor, int, int]:
    return merge(z, h, w)


class BodyStage(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, window: int, mlp_ratio: float,
                 merge_from: int | None):
        super().__init__()
        self.merge = PatchMerging(merge_from) if merge_from else None
        self.pairs = nn.ModuleList(
            SwinBlockPair(dim, heads, window, mlp_ratio) for _ in range(depth // 2)
        )
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, z: Tensor, h: int, w: int) -> Tuple[Tensor, Tensor, int, int]:
        """Returns (stream tokens, normalised stage output tokens, h, w)."""
        if self.merge is not None:
            z, h, w = self.merge(z, h, w)
        for pair in self.pairs:
            z = pair(z, h, w)
        return z, self.out_norm(z), h, w


class BodyEncoder(nn.Module):
    def __init__(self, cfg: BodyEncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or BodyEncoderConfig()
        self.embed = PatchEmbed(cfg.img_size, cfg.patch_size, cfg.embed_dim)
        dims = cfg.stage_dims
        self.stages = nn.ModuleList(
            BodyStage(dims[s], cfg.depths[s], cfg.heads[s], cfg.window_size, cfg.mlp_ratio,
                      dims[s - 1] if s else None)
            for s in range(4)
        )
        self.apply(_init_linear)

    def stage(self, s: int, state):
        """Advance one stage.

        ``state`` is the image for ``s == 0`` and ``(tokens, h, w)`` otherwise.
        Returns ``(feature_map, (tokens, h, w))``.
        """
        if s == 0:
            z, h, w = self.embed(state)
        else:
            z, h, w = state
        z, out, h, w = self.stages[s](z, h, w)
        return to_feature(out, h, w), (z, h, w)

    def forward(self, image: Tensor) -> List[Tensor]:
        hh, ww = image.shape[-2:]
        if hh % 32 or ww % 32:
            raise ConfigurationError(f"image size {hh}x{ww} must be divisible by 32")
        feats, state = [], image
        for s in range(4):
            f, state = self.stage(s, state)
            feats.append(f)
        return feats


def body_encoder_forward(image: Tensor, encoder: BodyEncoder) -> List[Tensor]:
    return encoder(image)


def _init_linear(m: nn.Module) -> None:
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
