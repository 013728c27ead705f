"""Independent reference implementations used only by the tests.

Everything here is plain numpy / Python loops and shares no code with the
package under test.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def conv2d_loops(x, w, stride=1, padding=0, groups=1, pad_mode="zeros"):
    """Nested-loop cross-correlation on (B, C, H, W) arrays."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if padding:
        mode = "constant" if pad_mode == "zeros" else "edge"
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), mode=mode)
    b, c, h, wd = x.shape
    o, cg, k, _ = w.shape
    oh, ow = (h - k) // stride + 1, (wd - k) // stride + 1
    out = np.zeros((b, o, oh, ow))
    opg = o // groups
    for n in range(b):
        for oc in range(o):
            g = oc // opg
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(cg):
                        for u in range(k):
                            for v in range(k):
                                acc += w[oc, ic, u, v] * x[n, g * cg + ic, i * stride + u, j * stride + v]
                    out[n, oc, i, j] = acc
    return out


def pdc_loops(x, w, padding=0, groups=1):
    """Central pixel-difference convolution by direct summation, replicate padding."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), mode="edge")
    b, c, h, wd = x.shape
    o, cg, k, _ = w.shape
    r = k // 2
    out = np.zeros((b, o, h - k + 1, wd - k + 1))
    opg = o // groups
    for n in range(b):
        for oc in range(o):
            g = oc // opg
            for i in range(h - k + 1):
                for j in range(wd - k + 1):
                    acc = 0.0
                    for ic in range(cg):
                        centre = x[n, g * cg + ic, i + r, j + r]
                        for u in range(k):
                            for v in range(k):
                                acc += w[oc, ic, u, v] * (x[n, g * cg + ic, i + u, j + v] - centre)
                    out[n, oc, i, j] = acc
    return out


def softmax_rows(a):
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def dense_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v for 2-d arrays."""
    q, k, v = (np.asarray(t, dtype=np.float64) for t in (q, k, v))
    return softmax_rows(q @ k.T / math.sqrt(q.shape[-1])) @ v


def multihead_dense(xq, xkv, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Dense multi-head attention on token matrices (N, C) with nn.Linear-style weights."""
    q = xq @ wq.T + bq
    k = xkv @ wk.T + bk
    v = xkv @ wv.T + bv
    c = q.shape[1]
    hd = c // heads
    outs = [dense_attention(q[:, i * hd:(i + 1) * hd], k[:, i * hd:(i + 1) * hd], v[:, i * hd:(i + 1) * hd])
            for i in range(heads)]
    return np.concatenate(outs, axis=1) @ wo.T + bo


def bce_scalar(pred, gt, eps=1e-7):
    total, n = 0.0, 0
    for y, g in zip(np.ravel(pred), np.ravel(gt)):
        y = min(max(float(y), eps), 1 - eps)
        total += -((1 - g) * math.log(1 - y) + g * math.log(y))
        n += 1
    return total / n


def dice_scalar(pred, gt, smooth=1.0):
    inter = s = 0.0
    for y, g in zip(np.ravel(pred), np.ravel(gt)):
        inter += y * g
        s += y + g
    return 1 - (2 * inter + smooth) / (s + smooth)


def edge_loss_scalar(maps, gt, eta, lam, beta=None, eps=1e-7):
    gt = np.ravel(gt)
    if beta is None:
        beta = sum(1 for g in gt if g == 0) / len(gt)
    alpha = lam * (1 - beta)
    total = 0.0
    for m in maps:
        acc = 0.0
        for y, g in zip(np.ravel(m), gt):
            y = min(max(float(y), eps), 1 - eps)
            if g == 0:
                acc += -alpha * math.log(1 - y)
            elif g < eta:
                pass
            else:
                acc += -beta * math.log(y)
        total += acc / len(gt)
    return total


def confusion_scalar(pred, gt):
    tp = tn = fp = fn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def boundary_scan(mask):
    """Edge iff the in-image 3x3 neighbourhood contains both labels."""
    mask = np.asarray(mask)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            nb = mask[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
            out[i, j] = float(nb.min() != nb.max())
    return out


def _grad(t):
    # tensors the output does not depend on get no .grad at all
    return torch.zeros_like(t) if t.grad is None else t.grad


def fd_check(fn, tensors, eps=1e-6, seed=0):
    """Compare autograd to central differences for ``fn`` over all ``tensors``.

    ``fn`` maps the tensors to an arbitrary-shape output; it is contracted with
    a fixed random weighting to a scalar.  Returns the relative error
    ``||g_auto - g_fd|| / ||g_fd||`` over the concatenated gradient.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        out0 = fn()
    weight = torch.randn(out0.shape, generator=gen, dtype=out0.dtype)

    def scalar():
        return (fn() * weight).sum()

    for t in tensors:
        t.grad = None
    scalar().backward()
    auto = torch.cat([_grad(t).reshape(-1) for t in tensors])
    fd = []
    with torch.no_grad():
        for t in tensors:
            flat = t.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = scalar().item()
                flat[i] = orig - eps
                down = scalar().item()
                flat[i] = orig
                fd.append((up - down) / (2 * eps))
    fd = torch.tensor(fd, dtype=auto.dtype)
    return float((auto - fd).norm() / fd.norm().clamp_min(1e-30))


def directional_check(fn, tensors, n_dirs=4, eps=1e-6, seed=0):
    """Worst relative error of directional derivatives along random directions."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        out0 = fn()
    weight = torch.randn(out0.shape, generator=gen, dtype=out0.dtype)

    def scalar():
        return (fn() * weight).sum()

    for t in tensors:
        t.grad = None
    scalar().backward()
    grads = [_grad(t).clone() for t in tensors]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        auto = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        with torch.no_grad():
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
            up = scalar().item()
            for t, d in zip(tensors, dirs):
                t.sub_(2 * eps * d)
            down = scalar().item()
            for t, d in zip(tensors, dirs):
                t.add_(eps * d)
        fd = (up - down) / (2 * eps)
        worst = max(worst, abs(auto - fd) / max(abs(fd), abs(auto), 1e-12))
    return worst
