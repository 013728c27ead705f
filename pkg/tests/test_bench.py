import csv

import numpy as np

from lcaunet.bench import COLUMNS, bench_attention, growth_exponent, write_csv
from lcaunet.fusion import attention_cost


def test_growth_exponent_recovers_power_law():
    n = np.array([10.0, 20, 40, 80])
    assert abs(growth_exponent(n, 3 * n**1.5) - 1.5) < 1e-12


def test_bench_rows_match_analytic_and_counts(tmp_path):
    rows = bench_attention(grids=(7, 14), dim=8, window=7, reps=1, measure=False)
    for r in rows:
        g = r["h"]
        assert r["omega_global"] == attention_cost(g, g, 8, 7, 7, "global")
        assert r["omega_local"] == attention_cost(g, g, 8, 7, 7, "local")
        assert r["counted_global"] == r["omega_global"]
        assert r["counted_local"] == r["omega_local"]
    path = write_csv(rows, tmp_path / "b.csv")
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == COLUMNS
