"""Global vs local cross-attention: analytic cost, counted MACs and wall-clock."""

from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import torch
from torch.utils.flop_counter import FlopCounterMode

from .body import attention
from .fusion import LocalCrossAttention, attention_cost

COLUMNS = ("h", "w", "tokens", "C", "window", "omega_global", "omega_local", "analytic_ratio",
           "counted_global", "counted_local", "time_global_s", "time_local_s")


def global_attention_forward(module: LocalCrossAttention, edge: torch.Tensor, body: torch.Tensor,
                             chunk: int = 2048) -> torch.Tensor:
    """M-GCA with the module's projections: every query attends to every key.

    Queries are processed in chunks so the full score matrix is never held.
    """
    b, c, h, w = edge.shape
    e = edge.flatten(2).transpose(1, 2)
    kv = body.flatten(2).transpose(1, 2)
    hd = c // module.heads

    def split(x):
        return x.view(b, -1, module.heads, hd).transpose(1, 2)

    q, k, v = split(module.q(e)), split(module.k(kv)), split(module.v(kv))
    parts = [attention(q[:, :, i : i + chunk], k, v) for i in range(0, h * w, chunk)]
    out = torch.cat(parts, dim=2).transpose(1, 2).reshape(b, h * w, c)
    out = module.o(out)
    return out.transpose(1, 2).reshape(b, c, h, w)


def local_attention_forward(module: LocalCrossAttention, edge, body) -> torch.Tensor:
    return module(edge, body, residual=False)


def counted_macs(fn, *args) -> int:
    """Matmul multiply-accumulates executed by ``fn`` (FLOP counter / 2)."""
    with FlopCounterMode(display=False) as counter:
        fn(*args)
    return counter.get_total_flops() // 2


def _best_time(fn, reps: int) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


@torch.no_grad()
def bench_attention(grids: Sequence[int] = (14, 28, 56, 112), dim: int = 32, window: int = 7,
                    heads: int = 1, reps: int = 3, seed: int = 0, measure: bool = True) -> List[Dict]:
    torch.manual_seed(seed)
    module = LocalCrossAttention(dim, heads, (window, window)).eval()
    rows = []
    for g in grids:
        edge = torch.randn(1, dim, g, g)
        body = torch.randn(1, dim, g, g)
        og = attention_cost(g, g, dim, window, window, "global")
        ol = attention_cost(g, g, dim, window, window, "local")
        row = {
            "h": g, "w": g, "tokens": g * g, "C": dim, "window": window,
            "omega_global": og, "omega_local": ol, "analytic_ratio": og / ol,
            "counted_global": counted_macs(global_attention_forward, module, edge, body),
            "counted_local": counted_macs(local_attention_forward, module, edge, body),
            "time_global_s": float("nan"), "time_local_s": float("nan"),
        }
        if measure:
            global_attention_forward(module, edge, body)  # warm-up
            local_attention_forward(module, edge, body)
            row["time_global_s"] = _best_time(lambda: global_attention_forward(module, edge, body), reps)
            row["time_local_s"] = _best_time(lambda: local_attention_forward(module, edge, body), reps)
        rows.append(row)
    return rows


def growth_exponent(tokens: Sequence[float], times: Sequence[float]) -> float:
    """Slope of the least-squares line through (log tokens, log time)."""
    slope, _ = np.polyfit(np.log(np.asarray(tokens, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def write_csv(rows: List[Dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return path
