from __future__ import annotations

import json

import pytest

from odstega.bench import (
    CSV_COLUMNS,
    SweepRow,
    SweepSpec,
    dominance_violations,
    kl_monotone_in_C,
    rows_to_csv,
    run_sweep,
)
from odstega.errors import InvalidPolicy

SMALL = SweepSpec(C=(0.0, 0.05), epsilon=(0.01,), baseline_epsilons=(0.0, 0.03), runs_per_point=8, token_budget=10)


def _row(C, eps, kl, bpt):
    return SweepRow(C, 0.0, eps, bpt * 25 / 8, kl, bpt, 100, 0.1)


class TestSpec:
    def test_rejects_bad_grid(self):
        with pytest.raises(InvalidPolicy):
            SweepSpec(C=(0.3,))
        with pytest.raises(ValueError):
            SweepSpec(C=())
        with pytest.raises(ValueError):
            SweepSpec(runs_per_point=0)

    def test_from_file(self, tmp_path):
        p = tmp_path / "spec.json"
        p.write_text(json.dumps({"C": [0, 0.01], "runs_per_point": 3}))
        spec = SweepSpec.from_file(p)
        assert spec.C == (0.0, 0.01) and spec.runs_per_point == 3


class TestSweep:
    def test_rows_and_baseline(self):
        rows = run_sweep(SMALL)
        keys = [(r.C, r.epsilon) for r in rows]
        assert keys == [(0.0, 0.01), (0.05, 0.01), (0.0, 0.0), (0.0, 0.03)]
        assert all(r.run_count == 8 and r.errors == 0 for r in rows)
        plain = rows[2]
        assert plain.mean_kl_bits == 0.0

    def test_csv_deterministic(self):
        a, b = rows_to_csv(run_sweep(SMALL)), rows_to_csv(run_sweep(SMALL))
        assert a == b
        assert a.splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_seed_changes_inputs(self):
        other = SweepSpec(**{**SMALL.__dict__, "seed": 1})
        assert rows_to_csv(run_sweep(SMALL)) != rows_to_csv(run_sweep(other))

    def test_subword_sweep_runs(self):
        spec = SweepSpec(C=(0.0,), baseline_epsilons=(), runs_per_point=3, token_budget=6, tokenizer="subword")
        assert run_sweep(spec)[0].run_count == 3


class TestChecks:
    def test_monotone(self):
        rows = [_row(0.0, 0.01, 0.01, 2.0), _row(0.05, 0.01, 0.05, 2.1), _row(0.075, 0.01, 0.04, 2.2)]
        bad = kl_monotone_in_C(rows)
        assert [(a.C, b.C) for a, b in bad] == [(0.05, 0.075)]

    def test_dominance(self):
        rows = [_row(0.01, 0.01, 0.020, 2.30), _row(0.0, 0.04, 0.021, 2.25), _row(0.0, 0.05, 0.030, 2.40)]
        assert dominance_violations(rows) == []
        rows.append(_row(0.0, 0.03, 0.019, 2.35))
        assert len(dominance_violations(rows)) == 1
