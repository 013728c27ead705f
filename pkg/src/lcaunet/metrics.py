"""Confusion counts, the five overlap/accuracy metrics, and report writers."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .losses import DomainError

METRIC_NAMES = ("acc", "dice", "iou", "se", "sp")
THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def binarize(prob, threshold: float = THRESHOLD) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def confusion(pred_mask, gt_mask) -> ConfusionCounts:
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    for name, a in (("prediction", pred), ("ground truth", gt)):
        if not np.isin(a, (0, 1)).all():
            raise DomainError(f"{name} mask must be binary")
    p, g = pred.astype(bool), gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, tn=int(p.size) - tp - fp - fn, fp=fp, fn=fn)


def _ratio(num: int, den: int, errors: int) -> float:
    # empty denominator: perfect if nothing was mislabelled, else worst case
    if den == 0:
        return 1.0 if errors == 0 else 0.0
    return num / den


def metrics(c: ConfusionCounts) -> Dict[str, float]:
    return {
        "acc": _ratio(c.tp + c.tn, c.total, c.fp + c.fn),
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c.fp + c.fn),
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn, c.fp + c.fn),
        "se": _ratio(c.tp, c.tp + c.fn, c.fn),
        "sp": _ratio(c.tn, c.tn + c.fp, c.fp),
    }


def evaluate_masks(preds: Sequence, gts: Sequence, ids: Sequence[str]) -> List[Dict]:
    """Per-image metric rows ``{"image_id", acc, dice, iou, se, sp}``."""
    rows = []
    for image_id, p, g in zip(ids, preds, gts):
        row = {"image_id": image_id}
        row.update(metrics(confusion(p, g)))
        rows.append(row)
    return rows


def aggregate(rows: Iterable[Dict]) -> Dict:
    rows = list(rows)
    agg = {"image_id": "aggregate"}
    for k in METRIC_NAMES:
        agg[k] = float(np.mean([r[k] for r in rows])) if rows else float("nan")
    return agg


def write_reports(rows: List[Dict], out_dir: Path, stem: str = "metrics") -> Dict:
    """Write ``<stem>.csv`` and ``<stem>.jsonl`` (per-image rows plus the aggregate)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(rows)
    with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("image_id",) + METRIC_NAMES)
        writer.writeheader()
        writer.writerows(rows + [agg])
    with open(out_dir / f"{stem}.jsonl", "w") as fh:
        for r in rows + [agg]:
            fh.write(json.dumps(r) + "\n")
    return agg


def counts_dict(c: ConfusionCounts) -> Dict[str, int]:
    return asdict(c)
