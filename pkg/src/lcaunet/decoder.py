"""Residual pre-integration, prior-guided multi-scale fusion and the full network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .body import BodyEncoder, BodyEncoderConfig
from .edge import EdgeEncoder, EdgeEncoderConfig
from .fusion import LCAF, ConcatFusion, LcafConfig
from .windows import ConfigurationError


def _up2(x: Tensor) -> Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class ResidualBlock(nn.Module):
    """``x + IN(conv3(relu(IN(conv3(x)))))``."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(y))


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    return block(x)


class PGMF(nn.Module):
    """SFT-style modulation of a low-level map by its upsampled high-level neighbour.

    ``scale`` and ``shift`` each come from two 3x3 convs on the upsampled
    high-level map.  The modulated map is concatenated with the unmodulated
    low-level map and projected to ``out_ch`` by a 1x1 conv.  Initialised to
    the identity modulation (scale 1, shift 0).
    """

    def __init__(self, low_ch: int, high_ch: int, out_ch: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or low_ch
        self.low_ch = low_ch
        self.scale = nn.Sequential(nn.Conv2d(high_ch, hidden, 3, padding=1), nn.ReLU(),
                                   nn.Conv2d(hidden, low_ch, 3, padding=1))
        self.shift = nn.Sequential(nn.Conv2d(high_ch, hidden, 3, padding=1), nn.ReLU(),
                                   nn.Conv2d(hidden, low_ch, 3, padding=1))
        self.out = nn.Conv2d(2 * low_ch, out_ch, 1)
        nn.init.zeros_(self.scale[2].weight)
        nn.init.ones_(self.scale[2].bias)
        nn.init.zeros_(self.shift[2].weight)
        nn.init.zeros_(self.shift[2].bias)

    def modulate(self, low: Tensor, high: Tensor) -> Tensor:
        if high.shape[-2] * 2 != low.shape[-2] or high.shape[-1] * 2 != low.shape[-1]:
            raise ValueError(
                f"high-level map {tuple(high.shape[-2:])} must be half the size of "
                f"low-level map {tuple(low.shape[-2:])}"
            )
        prior = _up2(high)
        return self.scale(prior) * low + self.shift(prior)

    def forward(self, low: Tensor, high: Tensor) -> Tensor:
        return self.out(torch.cat([self.modulate(low, high), low], dim=1))


def pgmf_fuse(low: Tensor, high: Tensor, module: PGMF) -> Tensor:
    return module(low, high)


def _conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
                         nn.InstanceNorm2d(cout, affine=True), nn.ReLU())


class ShallowFeatures(nn.Module):
    """Two conv blocks on the raw image: full resolution, then stride 2."""

    def __init__(self, full_ch: int = 8, half_ch: int = 16):
        super().__init__()
        self.full_res = _conv_block(3, full_ch)
        self.half_res = _conv_block(full_ch, half_ch, stride=2)

    def forward(self, image: Tensor) -> Tuple[Tensor, Tensor]:
        f = self.full_res(image)
        return f, self.half_res(f)


def shallow_feature_extractor(image: Tensor, module: ShallowFeatures) -> Tuple[Tensor, Tensor]:
    return module(image)


@dataclass
class ModelConfig:
    img_size: int = 224
    edge_channels: int = 24
    body_channels: int = 24
    depths: Tuple[int, ...] = (2, 2, 2, 2)
    heads: Tuple[int, ...] = (1, 2, 4, 8)
    window: int = 7
    fusion_window: int = 7
    shallow_channels: Tuple[int, int] = (8, 16)
    use_lcaf: bool = True
    fuse_into_body: bool = False

    def __post_init__(self):
        if self.edge_channels != self.body_channels:
            raise ConfigurationError("edge and body widths must match for same-stage fusion")
        self.depths, self.heads = tuple(self.depths), tuple(self.heads)
        self.shallow_channels = tuple(self.shallow_channels)
        self.body_config()
        for g in self.body_config().stage_grids:
            if g % self.fusion_window:
                raise ConfigurationError(
                    f"stage grid {g} not divisible by fusion window {self.fusion_window}"
                )

    def body_config(self) -> BodyEncoderConfig:
        return BodyEncoderConfig(img_size=self.img_size, embed_dim=self.body_channels,
                                 depths=self.depths, heads=self.heads, window_size=self.window)

    def edge_config(self) -> EdgeEncoderConfig:
        return EdgeEncoderConfig(base_channels=self.edge_channels)

    @property
    def stage_dims(self) -> List[int]:
        return [self.body_channels * 2**s for s in range(4)]


class SegOutput(NamedTuple):
    logits: Tensor
    edge_maps: List[Tensor]


class LCAUnet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        dims = cfg.stage_dims
        self.edge = EdgeEncoder(cfg.edge_config())
        self.body = BodyEncoder(cfg.body_config())
        if cfg.use_lcaf:
            self.fusions = nn.ModuleList(
                LCAF(LcafConfig(d, h, cfg.fusion_window, cfg.fusion_window))
                for d, h in zip(dims, cfg.heads)
            )
        else:
            self.fusions = nn.ModuleList(ConcatFusion(d) for d in dims)
        self.res_blocks = nn.ModuleList(ResidualBlock(d) for d in dims)
        # deepest first: (low=stage3, high=stage4) -> ... -> (low=stage1, high=stage2)
        self.pgmf = nn.ModuleList(PGMF(dims[s], dims[s + 1], dims[s]) for s in (2, 1, 0))
        full_ch, half_ch = cfg.shallow_channels
        self.shallow = ShallowFeatures(full_ch, half_ch)
        self.up_half = _conv_block(dims[0] + half_ch, half_ch)
        self.up_full = _conv_block(half_ch + full_ch, full_ch)
        self.head = nn.Conv2d(full_ch, 1, 1)
        # zero logits at initialisation
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def encode(self, image: Tensor) -> Tuple[List[Tensor], List[Tensor]]:
        """Both encoders plus fusion. Returns (fused stage maps, side edge maps)."""
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ConfigurationError(f"image size {h}x{w} must be divisible by 32")
        fused, edge_maps = [], []
        e, state = image, image
        for s in range(4):
            e = self.edge.stage(s, e)
            edge_maps.append(self.edge.side_heads[s](e, (h, w)))
            b, state = self.body.stage(s, state)
            f = self.fusions[s](e, b)
            fused.append(f)
            if self.cfg.fuse_into_body and s < 3:
                z, gh, gw = state
                state = (z + f.flatten(2).transpose(1, 2), gh, gw)
        return fused, edge_maps

    def forward(self, image: Tensor) -> SegOutput:
        fused, edge_maps = self.encode(image)
        r = [blk(f) for blk, f in zip(self.res_blocks, fused)]
        x = r[3]
        for module, low in zip(self.pgmf, (r[2], r[1], r[0])):
            x = module(low, x)
        full, half = self.shallow(image)
        x = self.up_half(torch.cat([_up2(x), half], dim=1))
        x = self.up_full(torch.cat([_up2(x), full], dim=1))
        return SegOutput(self.head(x), edge_maps)


def lcaunet_forward(image: Tensor, model: LCAUnet) -> SegOutput:
    return model(image)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
