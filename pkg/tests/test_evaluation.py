import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdblt.data import LabeledDataset
from cdblt.errors import AggregationError
from cdblt.evaluation import (HardInstanceTracker, ShotGroups, average_hard_counts, hard_instance_counts,
                              metrics_from_probs, report_tables, top_k_hits, write_report)
from cdblt.model import init_model


def _onehot(pred, n):
    return np.eye(n)[pred]


class TestMetrics:
    def test_perfect_predictor(self):
        labels = np.array([0, 1, 2, 2, 1])
        m = metrics_from_probs(_onehot(labels, 3), labels)
        assert m.top1 == m.macro_precision == m.macro_recall == 1.0
        assert m.error == 0.0

    def test_confusion(self):
        labels = np.array([0, 0, 0, 1, 1, 2])
        pred = np.array([0, 0, 0, 1, 0, 2])
        m = metrics_from_probs(_onehot(pred, 3), labels)
        assert m.macro_recall == pytest.approx(2.5 / 3)
        assert m.macro_precision == pytest.approx((0.75 + 1 + 1) / 3)
        assert m.top1 == pytest.approx(5 / 6)
        assert m.per_class_accuracy == pytest.approx([1.0, 0.5, 1.0])

    def test_never_predicted_class_has_zero_precision(self):
        labels = np.array([0, 1])
        m = metrics_from_probs(_onehot(np.array([0, 0]), 2), labels)
        assert m.per_class_precision == [0.5, 0.0]

    def test_top5_trivial_for_few_classes(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=30)
        assert metrics_from_probs(probs, rng.integers(0, 4, 30)).top5 == 1.0

    def test_top_k_ties_favour_low_index(self):
        probs = np.full((1, 6), 1 / 6)
        assert top_k_hits(probs, np.array([4]), 5)[0]
        assert not top_k_hits(probs, np.array([5]), 5)[0]

    @given(st.integers(2, 8), st.integers(1, 20), st.integers(0, 1000))
    def test_balanced_micro_equals_macro_recall(self, n, per_class, seed):
        rng = np.random.default_rng(seed)
        labels = np.repeat(np.arange(n), per_class)
        probs = rng.dirichlet(np.ones(n), size=len(labels))
        m = metrics_from_probs(probs, labels)
        assert m.top1 == pytest.approx(m.macro_recall, abs=1e-12)

    @given(st.integers(0, 1000))
    def test_class_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 5, 40)
        # distinct values avoid argmax ties, which would break the symmetry
        probs = rng.permuted(np.tile(np.arange(1, 6) / 15.0, (40, 1)), axis=1)
        perm = rng.permutation(5)
        a = metrics_from_probs(probs, labels)
        b = metrics_from_probs(probs[:, np.argsort(perm)], perm[labels])
        assert a.top1 == b.top1
        assert a.macro_recall == pytest.approx(b.macro_recall)
        assert a.macro_precision == pytest.approx(b.macro_precision)

    def test_shot_and_head_tail(self):
        counts = [500, 150, 50, 10]
        labels = np.array([0, 1, 2, 3, 3])
        pred = np.array([0, 1, 1, 3, 0])
        m = metrics_from_probs(_onehot(pred, 4), labels, train_counts=counts, head_k=2)
        assert m.shot_accuracies == {"many": 1.0, "medium": 0.0, "few": 0.5}
        assert m.head_tail["head_classes"] == [0, 1]
        assert m.head_tail["tail_recall"] == pytest.approx(0.25)


class TestShotGroups:
    def test_boundaries(self):
        g = ShotGroups.from_counts([101, 100, 21, 20, 1])
        assert g.many == (0,) and g.medium == (1, 2) and g.few == (3, 4)

    @given(st.lists(st.integers(1, 1000), min_size=1, max_size=40))
    def test_partition(self, counts):
        g = ShotGroups.from_counts(counts)
        members = sorted(g.many + g.medium + g.few)
        assert members == list(range(len(counts)))
        assert np.all(g.group_of(len(counts)) >= 0)


class TestHardInstances:
    def setup_method(self):
        self.groups = ShotGroups((0,), (), (1,))

    def test_threshold(self):
        counts = hard_instance_counts([0.9, 0.5, 0.81], [0, 0, 1], self.groups, 0.8)
        assert counts == {"many": 1, "medium": 0, "few": 1}
        assert sum(counts.values()) == 2

    def test_threshold_zero_counts_everything(self):
        counts = hard_instance_counts([0.0, 0.5, 0.0], [0, 0, 1], self.groups, 0.0)
        assert counts == {"many": 2, "medium": 0, "few": 1}

    def test_average_per_class(self):
        groups = ShotGroups((0, 1), (), (2,))
        avg = average_hard_counts({"many": 6, "medium": 0, "few": 1}, groups)
        assert avg == {"many": 3.0, "medium": None, "few": 1.0}

    def test_tracker_rows(self):
        labels = np.array([0] * 5 + [1] * 2)
        ds = LabeledDataset(np.random.default_rng(0).normal(size=(7, 3)), labels, 2)
        tracker = HardInstanceTracker(ds, gamma=1.0, threshold=0.0, groups=self.groups)
        row = tracker(init_model(3, 2, 4, 0), {"epoch": 2, "weights": [0.0, 1.0]})
        assert row["event"] == "hard" and row["epoch"] == 2
        assert row["class"] == {"many": 5.0, "medium": None, "few": 2.0}
        assert tracker.rows == [row]


def _run(label, top1, params=None, seed=0, n=3):
    metrics = {"top1": top1, "top5": 1.0, "macro_precision": top1, "macro_recall": top1,
               "shot_accuracies": {"many": 1.0, "medium": None, "few": 0.5}}
    return {"label": label, "params": params or {}, "seed": seed, "num_classes": n, "metrics": metrics}


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestReport:
    def test_single_run(self):
        tables, summary = report_tables([_run("ce", 0.9)])
        rows = _rows(tables["methods"])
        assert len(rows) == 1 and rows[0]["method"] == "ce"
        assert float(rows[0]["error_mean"]) == pytest.approx(10.0)
        assert rows[0]["medium_acc"] == ""
        assert summary["num_runs"] == 1 and summary["tables"] == ["methods"]

    def test_replicates_aggregate(self):
        tables, _ = report_tables([_run("ce", 0.9, seed=0), _run("ce", 0.8, seed=1)])
        row = _rows(tables["methods"])[0]
        assert row["runs"] == "2"
        assert float(row["error_mean"]) == pytest.approx(15.0)
        assert float(row["error_std"]) == pytest.approx(np.std([10.0, 20.0], ddof=1), abs=1e-6)

    def test_tau_table_has_one_row_per_setting(self):
        taus = ["fixed:0", "fixed:0.5", "fixed:1", "fixed:1.5", "fixed:2", "linear", "polynomial", "logarithmic",
                "sigmoidal"]
        runs = []
        for t in reversed(taus):
            for kind, sampler in (("cdb_w_ce", "uniform"), ("ce", "cdb_s")):
                params = {"tau.schedule": t, "loss.kind": kind, "sampler.kind": sampler}
                runs.append(_run(f"{kind}-{sampler}-{t}", 0.7, params))
        tables, _ = report_tables(runs)
        rows = _rows(tables["tau_sweep"])
        assert [r["tau"] for r in rows] == taus
        assert set(rows[0]) == {"tau", "cdb_w_ce_error_mean", "cdb_w_ce_error_std", "cdb_s_error_mean",
                                "cdb_s_error_std"}

    def test_decoupled_table(self):
        runs = []
        for method in ("crt", "lws"):
            for s1 in ("ce", "cdb_w_ce"):
                params = {"stage2.method": method, "stage2.loss": "ce", "stage2.sampler": "class_aware",
                          "loss.kind": s1, "sampler.kind": "uniform"}
                runs.append(_run(f"{method}-{s1}", 0.6, params))
        rows = _rows(report_tables(runs)[0]["decoupled"])
        assert [(r["stage2_method"], r["stage2_balancing"]) for r in rows] == [("crt", "class_aware"),
                                                                                 ("lws", "class_aware")]
        assert float(rows[0]["cdb_w_ce"]) == pytest.approx(40.0)

    def test_empty(self):
        with pytest.raises(AggregationError):
            report_tables([])

    def test_mismatched_classes(self):
        with pytest.raises(AggregationError):
            report_tables([_run("a", 0.5, n=2), _run("b", 0.5, n=3)])

    def test_write(self, tmp_path):
        tables, summary = report_tables([_run("ce", 0.9)])
        write_report(tables, summary, tmp_path / "out")
        assert (tmp_path / "out" / "methods.csv").read_text() == tables["methods"]
        assert json.loads((tmp_path / "out" / "summary.json").read_text())["schema"] == "cdblt.report/1"
