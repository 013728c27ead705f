"""Edge, BCE and Dice losses and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

EPS = 1e-7


class DomainError(ValueError):
    """Inputs outside the values a loss or metric is defined for."""


def _check_prob(p: Tensor, name: str = "prediction") -> None:
    if not torch.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise DomainError(f"{name} must contain probabilities in [0, 1]")


@dataclass
class EdgeLossParams:
    eta: float = 0.3
    lam: float = 1.1
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


@dataclass
class BodyLossWeights:
    lambda1: float = 0.6
    lambda2: float = 0.4
    gamma: float = 0.2

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


def negative_fraction(edge_gt: Tensor) -> float:
    return int((edge_gt == 0).sum()) / edge_gt.numel()


def edge_pixel_loss(pred: Tensor, gt: Tensor, eta: float, alpha: float, beta: float) -> Tensor:
    """Per-pixel annotator-robust loss (nonnegative form).

    ``gt == 0`` -> ``-alpha * log(1 - y)``; ``0 < gt < eta`` -> 0;
    otherwise ``-beta * log(y)``.
    """
    y = pred.clamp(EPS, 1 - EPS)
    neg = gt == 0
    ignored = (gt > 0) & (gt < eta)
    pos = ~(neg | ignored)
    zero = torch.zeros_like(y)
    return (torch.where(neg, -alpha * torch.log1p(-y), zero)
            + torch.where(pos, -beta * torch.log(y), zero))


def edge_loss(pred_maps: Sequence[Tensor], edge_gt: Tensor,
              params: EdgeLossParams | None = None, beta: float | None = None) -> Tensor:
    """Edge supervision summed over the side maps.

    Each map contributes its per-pixel mean (or sum, with ``reduction="sum"``).
    ``beta`` defaults to the fraction of negative pixels in ``edge_gt``.
    """
    params = params or EdgeLossParams()
    _check_prob(edge_gt, "edge ground truth")
    if beta is None:
        beta = negative_fraction(edge_gt)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    alpha = params.lam * (1.0 - beta)
    total = edge_gt.new_zeros(())
    for p in pred_maps:
        _check_prob(p)
        per_pixel = edge_pixel_loss(p, edge_gt, params.eta, alpha, beta)
        total = total + (per_pixel.mean() if params.reduction == "mean" else per_pixel.sum())
    return total


def bce_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean of ``-[(1 - g) ln(1 - y) + g ln y]`` with ``y`` clamped to [eps, 1 - eps]."""
    _check_prob(pred)
    y = pred.clamp(EPS, 1 - EPS)
    return -((1 - gt) * torch.log1p(-y) + gt * torch.log(y)).mean()


def bce_with_logits(logits: Tensor, gt: Tensor) -> Tensor:
    """Same quantity as :func:`bce_loss` on ``sigmoid(logits)`` without saturating."""
    return -(gt * F.logsigmoid(logits) + (1 - gt) * F.logsigmoid(-logits)).mean()


def dice_loss(pred: Tensor, gt: Tensor, smooth: float = 1.0) -> Tensor:
    """Soft Dice loss ``1 - (2 sum(y g) + s) / (sum(y) + sum(g) + s)``.

    Arrays with three or more dims are treated as a batch along dim 0 and the
    per-image losses are averaged.
    """
    _check_prob(pred)
    if pred.ndim >= 3:
        y, g = pred.flatten(1), gt.flatten(1)
    else:
        y, g = pred.reshape(1, -1), gt.reshape(1, -1)
    inter = (y * g).sum(1)
    denom = y.sum(1) + g.sum(1)
    return (1 - (2 * inter + smooth) / (denom + smooth)).mean()


@dataclass
class LossReport:
    total: Tensor
    bce: Tensor
    dice: Tensor
    edge: Tensor
    edge_per_stage: List[Tensor]

    def as_floats(self) -> dict:
        return {
            "total": self.total.item(), "bce": self.bce.item(), "dice": self.dice.item(),
            "edge": self.edge.item(), "edge_per_stage": [e.item() for e in self.edge_per_stage],
        }


def total_loss(seg_logits: Tensor, edge_maps: Sequence[Tensor], mask_gt: Tensor, edge_gt: Tensor,
               weights: BodyLossWeights | None = None,
               edge_params: EdgeLossParams | None = None) -> LossReport:
    """``lambda1 * BCE + lambda2 * Dice + gamma * edge``."""
    weights = weights or BodyLossWeights()
    edge_params = edge_params or EdgeLossParams()
    if seg_logits.shape != mask_gt.shape:
        raise ValueError(f"logits {tuple(seg_logits.shape)} vs mask {tuple(mask_gt.shape)}")
    bce = bce_with_logits(seg_logits, mask_gt)
    dice = dice_loss(torch.sigmoid(seg_logits), mask_gt)
    beta = negative_fraction(edge_gt)
    per_stage = [edge_loss([m], edge_gt, edge_params, beta=beta) for m in edge_maps]
    edge = torch.stack(per_stage).sum() if per_stage else seg_logits.new_zeros(())
    total = weights.lambda1 * bce + weights.lambda2 * dice + weights.gamma * edge
    return LossReport(total, bce, dice, edge, per_stage)
