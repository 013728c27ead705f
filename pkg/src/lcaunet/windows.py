"""Layout helpers shared by the windowed attention blocks.

Feature maps are channel-first ``(B, C, H, W)``; token grids are
``(B, H*W, C)`` with row-major token order.
"""

from __future__ import annotations

from torch import Tensor


class ConfigurationError(ValueError):
    """Raised when sizes, windows or strides are mutually incompatible."""


def check_divisible(h: int, w: int, wh: int, ww: int, what: str = "grid") -> None:
    if h % wh or w % ww:
        raise ConfigurationError(
            f"{what} of size {h}x{w} is not divisible by window {wh}x{ww}"
        )


def to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C)."""
    return x.flatten(2).transpose(1, 2)


def to_feature(tokens: Tensor, h: int, w: int) -> Tensor:
    """(B, H*W, C) -> (B, C, H, W)."""
    b, n, c = tokens.shape
    if n != h * w:
        raise ConfigurationError(f"{n} tokens cannot be laid out as {h}x{w}")
    return tokens.transpose(1, 2).reshape(b, c, h, w)


def partition_hwc(x: Tensor, wh: int, ww: int) -> Tensor:
    """(B, H, W, C) -> (B * nW, wh*ww, C), windows in row-major order."""
    b, h, w, c = x.shape
    check_divisible(h, w, wh, ww)
    x = x.view(b, h // wh, wh, w // ww, ww, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, wh * ww, c)


def reverse_hwc(windows: Tensor, wh: int, ww: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`partition_hwc`."""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // wh) * (w // ww))
    x = windows.view(b, h // wh, w // ww, wh, ww, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)


def window_partition(x: Tensor, wh: int, ww: int) -> Tensor:
    """Split a feature map (B, C, H, W) into windows of shape (B * nW, wh*ww, C)."""
    if x.ndim != 4:
        raise ConfigurationError(f"expected a (B, C, H, W) map, got shape {tuple(x.shape)}")
    return partition_hwc(x.permute(0, 2, 3, 1), wh, ww)


def window_reverse(windows: Tensor, wh: int, ww: int, h: int, w: int) -> Tensor:
    """Reassemble windows produced by :func:`window_partition` into (B, C, H, W)."""
    check_divisible(h, w, wh, ww)
    return reverse_hwc(windows, wh, ww, h, w).permute(0, 3, 1, 2).contiguous()
