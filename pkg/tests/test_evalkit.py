import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualunc.errors import ArgumentError
from oracles import pair_auc
from dualunc.evalkit import (
    UndefinedMetricError, auc, confusion_matrix, epoch_metrics, export_plot_data, macro_prf, summarize_run,
    write_metrics_log,
)


class TestAuc:
    def test_perfect(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_six_sample_hand(self):
        s, y = [0.1, 0.4, 0.35, 0.8, 0.4, 0.7], [0, 0, 1, 1, 1, 0]
        assert auc(s, y) == 11 / 18
        assert auc(s, y) == pair_auc(s, y)

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])

    def test_non_binary(self):
        with pytest.raises(ArgumentError):
            auc([0.1, 0.2, 0.3], [0, 1, 2])

    @given(st.integers(0, 2**31))
    def test_matches_pair_oracle_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 8, 30) / 8
        y = rng.integers(0, 2, 30)
        y[:2] = [0, 1]
        assert auc(s, y) == pytest.approx(pair_auc(s.tolist(), y.tolist()), abs=1e-12)

    @given(st.integers(0, 2**31))
    def test_monotone_transform_invariant(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 10, 25).astype(float)
        y = rng.integers(0, 2, 25)
        y[:2] = [0, 1]
        assert auc(np.exp(s / 3) + 4, y) == auc(s, y)


class TestMacro:
    def test_perfect(self):
        assert macro_prf([0, 1, 2, 1], [0, 1, 2, 1], 3) == (1.0, 1.0, 1.0)

    def test_hand_three_class(self):
        labels = [0, 0, 0, 1, 1, 2, 2, 2, 2]
        preds = [0, 0, 1, 1, 1, 2, 2, 0, 0]
        assert confusion_matrix(preds, labels, 3).tolist() == [[2, 1, 0], [0, 2, 0], [2, 0, 2]]
        r, p, f = macro_prf(preds, labels, 3)
        assert r == pytest.approx(13 / 18, abs=1e-15)
        assert p == pytest.approx(13 / 18, abs=1e-15)
        assert f == pytest.approx(214 / 315, abs=1e-15)

    def test_absent_class_counts_zero(self):
        r, p, f = macro_prf([0, 1], [0, 1], 3)
        assert (r, p, f) == pytest.approx((2 / 3, 2 / 3, 2 / 3))

    def test_empty(self):
        with pytest.raises(ArgumentError):
            macro_prf([], [], 2)

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40),
           st.permutations(range(4)))
    def test_relabel_invariant_and_range(self, pairs, perm):
        preds, labels = zip(*pairs)
        base = macro_prf(preds, labels, 4)
        moved = macro_prf([perm[x] for x in preds], [perm[x] for x in labels], 4)
        assert moved == pytest.approx(base, abs=1e-12)
        assert all(0 <= v <= 1 for v in base)

    def test_epoch_metrics_binary_auc(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        m = epoch_metrics(probs, [0, 1, 1, 1])
        assert m["auc"] == 1.0
        assert m["accuracy"] == 0.75
        assert "auc" not in epoch_metrics(np.full((3, 3), 1 / 3), [0, 1, 2])


class TestSummary:
    def hist(self, vals):
        return [{"epoch": i, "macro_f1": v, "accuracy": v / 2} for i, v in enumerate(vals)]

    def test_worked(self):
        r = summarize_run(self.hist([70, 80, 75, 74, 73]))
        assert r.best["macro_f1"] == 80 and r.best_epoch == 1
        assert r.last["macro_f1"] == 74
        assert not r.short_history

    def test_constant(self):
        r = summarize_run(self.hist([0.5] * 4))
        assert r.best == r.last

    def test_short(self):
        r = summarize_run(self.hist([0.6, 0.4]))
        assert r.short_history and r.last["macro_f1"] == 0.4

    def test_empty(self):
        with pytest.raises(ArgumentError):
            summarize_run([])

    def test_prefix(self):
        h = [{"golden_macro_f1": v, "val_macro_f1": 0.0} for v in (0.1, 0.3, 0.2)]
        assert summarize_run(h, prefix="golden_").best["macro_f1"] == 0.3

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_best_at_least_last(self, vals):
        r = summarize_run(self.hist(vals))
        assert r.best["macro_f1"] >= r.last["macro_f1"] - 1e-12
        assert r.best["macro_f1"] == max(vals)

    def test_logs(self, tmp_path):
        h = self.hist([0.2, 0.5, 0.4])
        write_metrics_log(tmp_path / "m.jsonl", h, summarize_run(h))
        rows = [json.loads(x) for x in (tmp_path / "m.jsonl").read_text().splitlines()]
        assert [r["type"] for r in rows] == ["epoch"] * 3 + ["summary", "summary"]
        assert [r["row"] for r in rows[3:]] == ["B", "L"]
        export_plot_data(tmp_path / "p.csv", h)
        table = list(csv.reader((tmp_path / "p.csv").open()))
        assert table[0] == ["epoch", "accuracy", "macro_f1"]
        assert len(table) == 4
