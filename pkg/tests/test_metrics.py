import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lcaunet.losses import DomainError
from lcaunet.metrics import (ConfusionCounts, aggregate, binarize, confusion, evaluate_masks, metrics,
                             write_reports)

from oracles import confusion_scalar


def _metric_oracle(tp, tn, fp, fn):
    def r(n, d, err):
        return (1.0 if err == 0 else 0.0) if d == 0 else n / d

    return {"acc": r(tp + tn, tp + tn + fp + fn, fp + fn), "dice": r(2 * tp, 2 * tp + fp + fn, fp + fn),
            "iou": r(tp, tp + fp + fn, fp + fn), "se": r(tp, tp + fn, fn), "sp": r(tn, tn + fp, fp)}


def test_worked_example():
    c = confusion(np.array([[1, 0], [1, 1]]), np.array([[1, 1], [0, 1]]))
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 0)
    m = metrics(c)
    assert m == {"acc": 0.5, "dice": 2 / 3, "iou": 0.5, "se": 2 / 3, "sp": 0.0}


def test_trivial_cases():
    z = np.zeros((3, 4), np.uint8)
    c = confusion(z, z)
    assert c.tn == 12 and c.fp == c.fn == 0
    assert all(v == 1.0 for v in metrics(c).values())
    g = np.eye(4, dtype=np.uint8)
    assert all(v == 1.0 for v in metrics(confusion(g, g)).values())
    # empty GT with a false alarm: Dice/IoU/SE have nothing to find, errors were made
    m = metrics(confusion(g, np.zeros_like(g)))
    assert m["dice"] == 0.0 and m["iou"] == 0.0 and m["se"] == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_random_masks_match_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(4, 17, 2)
    p, g = rng.integers(0, 2, (h, w)), rng.integers(0, 2, (h, w))
    c = confusion(p, g)
    assert (c.tp, c.tn, c.fp, c.fn) == confusion_scalar(p, g)
    ours, ref = metrics(c), _metric_oracle(*confusion_scalar(p, g))
    assert all(abs(ours[k] - ref[k]) < 1e-12 for k in ref)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metric_identities(tp, tn, fp, fn):
    if tp + tn + fp + fn == 0:
        return
    c = ConfusionCounts(tp, tn, fp, fn)
    m = metrics(c)
    assert all(0.0 <= v <= 1.0 for v in m.values())
    if tp + fn and tn + fp:
        assert abs(m["acc"] * c.total - (m["se"] * (tp + fn) + m["sp"] * (tn + fp))) < 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (6, 5), elements=st.integers(0, 1)),
       arrays(np.uint8, (6, 5), elements=st.integers(0, 1)))
def test_counts_sum_to_pixels(p, g):
    assert confusion(p, g).total == p.size


def test_domain_and_shape_errors():
    with pytest.raises(DomainError):
        confusion(np.array([0.4, 1.0]), np.array([0, 1]))
    with pytest.raises(ValueError):
        confusion(np.zeros(3), np.zeros(4))


def test_binarize_threshold():
    assert binarize(np.array([0.49, 0.5, 0.9])).tolist() == [0, 1, 1]


def test_reports(tmp_path):
    rng = np.random.default_rng(0)
    preds = [rng.integers(0, 2, (4, 4)) for _ in range(3)]
    gts = [rng.integers(0, 2, (4, 4)) for _ in range(3)]
    rows = evaluate_masks(preds, gts, ["a", "b", "c"])
    agg = write_reports(rows, tmp_path)
    assert agg["dice"] == pytest.approx(np.mean([r["dice"] for r in rows]), abs=1e-15)
    with open(tmp_path / "metrics.csv") as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["image_id", "acc", "dice", "iou", "se", "sp"]
    assert [r["image_id"] for r in table] == ["a", "b", "c", "aggregate"]
    lines = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert lines[-1] == agg and len(lines) == 4
    assert aggregate(evaluate_masks(gts, gts, ["a", "b", "c"]))["iou"] == 1.0
