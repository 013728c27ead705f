"""Edge branch: pixel-difference convolutions with per-stage edge supervision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .windows import ConfigurationError

PDC_VARIANTS = ("central",)


def _pad(x: Tensor, padding: int, padding_mode: str) -> Tensor:
    if padding == 0:
        return x
    mode = "constant" if padding_mode == "zeros" else padding_mode
    return F.pad(x, (padding,) * 4, mode=mode)


def _check_shapes(x: Tensor, weight: Tensor, groups: int) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"expected 4-d input and weight, got {tuple(x.shape)}, {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1] * groups:
        raise ValueError(
            f"input has {x.shape[1]} channels but kernel expects "
            f"{weight.shape[1]} x {groups} groups"
        )
    if weight.shape[0] % groups:
        raise ValueError(f"{weight.shape[0]} output channels not divisible by {groups} groups")


def vanilla_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    padding_mode: str = "zeros",
) -> Tensor:
    """Plain cross-correlation, ``y = sum_i w_i * x_i`` over each window."""
    _check_shapes(x, weight, groups)
    return F.conv2d(_pad(x, padding, padding_mode), weight, bias, stride=stride, groups=groups)


def pdc_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    padding_mode: str = "replicate",
    variant: str = "central",
) -> Tensor:
    """Central pixel-difference convolution.

    Every tap weights the difference between its pixel and the window centre,
    ``y = sum_i w_i * (x_i - x_c)``; differences are formed explicitly so a
    spatially constant input gives exactly zero.

    Replicate padding is the default so the border behaves like the interior.
    """
    if variant not in PDC_VARIANTS:
        raise ValueError(f"unknown PDC variant {variant!r}; expected one of {PDC_VARIANTS}")
    _check_shapes(x, weight, groups)
    k = weight.shape[-1]
    if weight.shape[-2] != k or k % 2 == 0:
        raise ValueError(f"PDC kernels must be square with odd size, got {tuple(weight.shape[-2:])}")
    xp = _pad(x, padding, padding_mode)
    hp, wp = xp.shape[-2:]
    if hp < k or wp < k:
        raise ValueError(f"input {(hp, wp)} smaller than kernel {k}x{k}")
    b, c = xp.shape[:2]
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    patches = F.unfold(xp, k, stride=stride).view(b, c, k * k, oh * ow)
    diff = patches - patches[:, :, k * k // 2 : k * k // 2 + 1]
    o = weight.shape[0]
    diff = diff.view(b, groups, (c // groups) * k * k, oh * ow)
    w = weight.reshape(groups, o // groups, -1)
    y = torch.einsum("gok,bgkl->bgol", w, diff).reshape(b, o, oh, ow)
    if bias is not None:
        y = y + bias.view(1, -1, 1, 1)
    return y


def pdc_to_vanilla_weight(weight: Tensor) -> Tensor:
    """Kernel ``w'`` with ``vanilla_conv2d(x, w') == pdc_conv2d(x, w)``."""
    k = weight.shape[-1]
    out = weight.clone()
    out[..., k // 2, k // 2] -= weight.sum(dim=(2, 3))
    return out


class PDCConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1,
                 groups: int = 1, bias: bool = False, variant: str = "central"):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if variant not in PDC_VARIANTS:
            raise ValueError(f"unknown PDC variant {variant!r}")
        self.stride, self.groups, self.variant = stride, groups, variant
        self.padding = kernel_size // 2
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch // groups, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        nn.init.kaiming_normal_(self.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x: Tensor) -> Tensor:
        return pdc_conv2d(x, self.weight, self.bias, self.stride, self.padding,
                          self.groups, variant=self.variant)


class PDCBlock(nn.Module):
    """``x + conv1x1(relu(depthwise_pdc(x)))``."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        self.channels = channels
        self.dw = PDCConv2d(channels, channels, kernel_size, groups=channels)
        self.pw = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.pw.bias)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"PDC block built for {self.channels} channels, got {x.shape[1]}")
        return x + self.pw(F.relu(self.dw(x)))


class SideEdgeHead(nn.Module):
    """1x1 conv to one channel, bilinear upsampling, sigmoid."""

    def __init__(self, channels: int):
        super().__init__()
        self.proj = nn.Conv2d(channels, 1, 1)

    def forward(self, x: Tensor, target_hw: Tuple[int, int]) -> Tensor:
        logit = F.interpolate(self.proj(x), size=target_hw, mode="bilinear", align_corners=False)
        return torch.sigmoid(logit)


def side_edge_map(features: Tensor, head: SideEdgeHead, target_hw: Tuple[int, int]) -> Tensor:
    return head(features, target_hw)


@dataclass
class EdgeEncoderConfig:
    base_channels: int = 24
    stages: int = 4
    blocks_per_stage: int = 4
    init_downsample: int = 4

    def __post_init__(self):
        if self.base_channels <= 0 or self.base_channels % 2:
            raise ConfigurationError("edge base_channels must be a positive even integer")
        if self.stages != 4 or self.blocks_per_stage != 4 or self.init_downsample != 4:
            raise ConfigurationError("edge encoder is fixed at 4 stages x 4 PDC blocks, 1/4 stem")

    @property
    def stage_channels(self) -> List[int]:
        return [self.base_channels * 2**s for s in range(self.stages)]


class EdgeStageOutput(NamedTuple):
    features: Tensor
    side_edge_map: Tensor


class EdgeEncoder(nn.Module):
    """Four PDC stages; stage ``s`` has ``C * 2**s`` channels at ``H / 2**(s+2)``."""

    def __init__(self, cfg: EdgeEncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or EdgeEncoderConfig()
        c = cfg.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c // 2, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(c // 2, c, 3, stride=2, padding=1),
        )
        chans = cfg.stage_channels
        self.transitions = nn.ModuleList(
            [nn.Identity()] + [nn.Conv2d(chans[s - 1], chans[s], 1) for s in range(1, cfg.stages)]
        )
        self.stages = nn.ModuleList(
            nn.Sequential(*[PDCBlock(ch) for _ in range(cfg.blocks_per_stage)]) for ch in chans
        )
        self.side_heads = nn.ModuleList(SideEdgeHead(ch) for ch in chans)

    def stage(self, s: int, x: Tensor) -> Tensor:
        """Run stage ``s`` on the previous stage output (or the image for ``s == 0``)."""
        if s == 0:
            x = self.stem(x)
        else:
            x = self.transitions[s](F.max_pool2d(x, 2))
        return self.stages[s](x)

    def forward(self, image: Tensor) -> List[EdgeStageOutput]:
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ConfigurationError(f"image size {h}x{w} must be divisible by 32")
        outs = []
        x = image
        for s in range(self.cfg.stages):
            x = self.stage(s, x)
            outs.append(EdgeStageOutput(x, self.side_heads[s](x, (h, w))))
        return outs


def edge_encoder_forward(image: Tensor, encoder: EdgeEncoder) -> List[EdgeStageOutput]:
    return encoder(image)
