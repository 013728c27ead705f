"""Training, evaluation, prediction and checkpointing."""

from __future__ import annotations

import json
import logging
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .config import TrainConfig, merge
from .data import (Sample, apply_augment, derive_edge_gt, draw_augment, gray_world_normalize,
                   load_isic_dir, read_image, synth_dataset)
from .decoder import LCAUnet
from .losses import DomainError, total_loss
from .metrics import aggregate, binarize, evaluate_masks, write_reports

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lcaunet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Unrecoverable failure during optimisation (non-finite loss, I/O)."""


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)


def build_model(cfg: TrainConfig) -> LCAUnet:
    torch.manual_seed(cfg.seed)
    return LCAUnet(cfg.model_config())


def to_batch(samples: Sequence[Sample]):
    image = torch.from_numpy(np.stack([s.image for s in samples]))
    mask = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))[:, None]
    edge = torch.from_numpy(np.stack([s.edge_gt for s in samples]))[:, None]
    return image, mask, edge


def load_splits(cfg: TrainConfig) -> Dict[str, List[Sample]]:
    if cfg.dataset == "directory":
        return load_isic_dir(cfg.data_dir, seed=cfg.seed, size=cfg.img_size,
                             gray_world=cfg.gray_world).splits
    s0 = cfg.synth_seed
    return {
        "train": synth_dataset(cfg.n_train, s0, cfg.img_size, cfg.gray_world),
        "val": synth_dataset(cfg.n_val, s0 + cfg.n_train, cfg.img_size, cfg.gray_world),
        "test": synth_dataset(cfg.n_test, s0 + cfg.n_train + cfg.n_val, cfg.img_size,
                              cfg.gray_world),
    }


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="max", factor=cfg.plateau_factor, patience=cfg.plateau_patience)
    return opt, sched


def batch_dice(logits: torch.Tensor, mask: torch.Tensor) -> float:
    pred = binarize(torch.sigmoid(logits).detach().numpy())
    rows = evaluate_masks(list(pred[:, 0]), list(mask.numpy().astype(np.uint8)[:, 0]),
                          [str(i) for i in range(len(pred))])
    return aggregate(rows)["dice"]


def train_step(model, opt, cfg: TrainConfig, batch):
    """One optimiser step; returns the loss report and the (pre-step) logits.

    A non-finite loss skips the update and is left for the caller to handle.
    """
    image, mask, edge = batch
    out = model(image)
    report = total_loss(out.logits, out.edge_maps, mask, edge, cfg.loss_weights(), cfg.edge_params())
    opt.zero_grad()
    if torch.isfinite(report.total):
        report.total.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
    return report, out.logits.detach()


@torch.no_grad()
def predict_probs(model: LCAUnet, images: Sequence[np.ndarray], batch_size: int = 8,
                  with_edges: bool = False):
    model.eval()
    probs, edges = [], []
    for i in range(0, len(images), batch_size):
        x = torch.from_numpy(np.stack(images[i : i + batch_size]))
        out = model(x)
        probs.append(torch.sigmoid(out.logits)[:, 0].numpy())
        if with_edges:
            edges.append(torch.stack(out.edge_maps, 1)[:, :, 0].numpy())
    model.train()
    p = np.concatenate(probs) if probs else np.zeros((0,))
    return (p, np.concatenate(edges)) if with_edges else p


def evaluate_samples(model: LCAUnet, samples: Sequence[Sample], batch_size: int = 8) -> List[Dict]:
    probs = predict_probs(model, [s.image for s in samples], batch_size)
    return evaluate_masks(list(binarize(probs)), [s.mask for s in samples], [s.id for s in samples])


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model, cfg: TrainConfig, opt=None, sched=None, epoch: int = 0,
                    best_val_dice: float = float("nan")) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(), "model": model.state_dict(),
        "optimizer": opt.state_dict() if opt is not None else None,
        "scheduler": sched.state_dict() if sched is not None else None,
        "epoch": epoch, "best_val_dice": best_val_dice,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
    except OSError as exc:
        raise TrainingError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    """Returns ``(model, config, payload)``."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (pickle.UnpicklingError, EOFError, RuntimeError) as exc:
        raise ValueError(f"{path} is not a readable checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an LCAUnet checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload.get('version')} unsupported "
                         f"(expected {CHECKPOINT_VERSION})")
    cfg = merge(TrainConfig(), payload["config"]).validate()
    model = LCAUnet(cfg.model_config())
    model.load_state_dict(payload["model"])
    return model, cfg, payload


# -- training --------------------------------------------------------------


@dataclass
class TrainResult:
    model: LCAUnet
    history: List[Dict] = field(default_factory=list)
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None
    best_val_dice: float = float("nan")


def _dump_bad_batch(out_dir: Path, tag: str, batch) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / f"nan_batch_{tag}.npz"
    np.savez(p, image=batch[0].numpy(), mask=batch[1].numpy(), edge=batch[2].numpy())
    return p


def train(cfg: TrainConfig, splits: Dict[str, List[Sample]] | None = None) -> TrainResult:
    """Train with AdamW and a plateau schedule on validation Dice.

    One JSON object per epoch goes to ``<out_dir>/log.jsonl``.  The best
    (by validation Dice) and last checkpoints are kept when
    ``save_checkpoints`` is set.
    """
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed)
    splits = splits if splits is not None else load_splits(cfg)
    train_set, val_set = splits["train"], splits.get("val", [])
    if not train_set:
        raise TrainingError("training split is empty")
    model = build_model(cfg)
    opt, sched = make_optimizer(model, cfg)
    result = TrainResult(model)
    best = -math.inf
    log_path = out_dir / "log.jsonl"
    log_path.write_text("")

    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_set))
        sums = {"total": 0.0, "bce": 0.0, "dice": 0.0, "edge": 0.0}
        dices, steps = [], 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            samples = [train_set[i] for i in idx]
            if cfg.augment:
                samples = [apply_augment(s, draw_augment(rng)) for s in samples]
            batch = to_batch(samples)
            try:
                report, logits = train_step(model, opt, cfg, batch)
                finite = bool(torch.isfinite(report.total))
            except DomainError:
                # NaN side maps are caught by the loss's range check
                finite = False
            if not finite:
                tag = f"e{epoch}_b{b0 // cfg.batch_size}"
                dump = _dump_bad_batch(out_dir, tag, batch)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {tag} "
                                    f"(ids {[s.id for s in samples]}); batch dumped to {dump}")
            for k in sums:
                sums[k] += getattr(report, k).item()
            dices.append(batch_dice(logits, batch[1]))
            steps += 1
        record = {"epoch": epoch, "lr": opt.param_groups[0]["lr"]}
        record["train"] = {k: v / steps for k, v in sums.items()}
        record["train"]["seg_dice"] = float(np.mean(dices))
        if val_set:
            val = aggregate(evaluate_samples(model, val_set, cfg.batch_size))
            val.pop("image_id")
            record["val"] = val
            monitor = val["dice"]
        else:
            monitor = record["train"]["seg_dice"]
        sched.step(monitor)
        with open(log_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        logger.info("epoch %d: %s", epoch, json.dumps(record))
        result.history.append(record)
        if monitor > best:
            best = monitor
            result.best_val_dice = best
            if cfg.save_checkpoints:
                result.best_checkpoint = save_checkpoint(out_dir / "best.pt", model, cfg, opt, sched,
                                                         epoch, best)
    if cfg.save_checkpoints:
        result.last_checkpoint = save_checkpoint(out_dir / "last.pt", model, cfg, opt, sched,
                                                 cfg.epochs, result.best_val_dice)
    return result


def overfit(cfg: TrainConfig, samples: Sequence[Sample], steps: int = 200,
            target_dice: float | None = None) -> Dict:
    """Fit a single fixed batch; returns per-step loss and Dice."""
    seed_everything(cfg.seed)
    model = build_model(cfg)
    opt, _ = make_optimizer(model, cfg)
    batch = to_batch(samples)
    losses, dices = [], []
    for step in range(steps):
        report, logits = train_step(model, opt, cfg, batch)
        if not torch.isfinite(report.total):
            raise TrainingError(f"non-finite loss at overfit step {step}")
        losses.append(report.total.item())
        dices.append(batch_dice(logits, batch[1]))
        if target_dice is not None and dices[-1] >= target_dice:
            break
    final = aggregate(evaluate_samples(model, samples, len(samples)))["dice"]
    return {"model": model, "loss": losses, "dice": dices, "final_dice": final}


# -- evaluation and prediction ---------------------------------------------


def evaluate(checkpoint, samples: Sequence[Sample] | None = None, split: str = "test",
             out_dir=None) -> Dict:
    model, cfg, _ = load_checkpoint(checkpoint)
    if samples is None:
        samples = load_splits(cfg)[split]
    for s in samples:
        if s.image.shape[1:] != (cfg.img_size, cfg.img_size):
            raise ValueError(f"sample {s.id} has size {s.image.shape[1:]}, model expects "
                             f"{cfg.img_size}x{cfg.img_size}")
    rows = evaluate_samples(model, samples, cfg.batch_size)
    agg = write_reports(rows, out_dir) if out_dir is not None else aggregate(rows)
    return {"rows": rows, "aggregate": agg}


def _contour(mask: np.ndarray) -> np.ndarray:
    return derive_edge_gt(mask).astype(bool)


def predict(checkpoint, image_paths: Sequence, out_dir, save_edges: bool = False,
            overlay: bool = False, gt_dir=None) -> Dict[str, str]:
    """Write ``<stem>_mask.png`` (0/255) at each input's own resolution.

    Returns ``{path: "ok" | error message}``; unreadable files do not stop the batch.
    """
    model, cfg, _ = load_checkpoint(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = {}
    for path in map(Path, image_paths):
        try:
            with Image.open(path) as im:
                orig = im.convert("RGB")
            w, h = orig.size
            x = read_image(path, cfg.img_size)
            if cfg.gray_world:
                x = gray_world_normalize(x)
            prob, edges = predict_probs(model, [x], with_edges=True)
        except (OSError, ValueError) as exc:
            status[str(path)] = f"error: {exc}"
            logger.error("predict failed for %s: %s", path, exc)
            continue
        small = Image.fromarray(binarize(prob[0]) * 255)
        mask_img = small.resize((w, h), Image.NEAREST)
        mask_img.save(out_dir / f"{path.stem}_mask.png")
        if save_edges:
            for s, e in enumerate(edges[0]):
                Image.fromarray(np.round(e * 255).astype(np.uint8)).resize((w, h), Image.BILINEAR) \
                    .save(out_dir / f"{path.stem}_edge{s + 1}.png")
        if overlay:
            rgb = np.asarray(orig).copy()
            pred = (np.asarray(mask_img) >= 128).astype(np.uint8)
            gt_path = Path(gt_dir or path.parent) / f"{path.stem}_segmentation.png"
            if gt_path.exists():
                with Image.open(gt_path) as g:
                    gt = np.asarray(g.convert("L").resize((w, h), Image.NEAREST)) >= 128
                rgb[_contour(gt)] = (0, 255, 0)
            rgb[_contour(pred)] = (255, 0, 0)
            Image.fromarray(np.concatenate([np.asarray(orig), rgb], axis=1)) \
                .save(out_dir / f"{path.stem}_overlay.png")
        status[str(path)] = "ok"
    return status
