import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdblt.errors import ConfigError
from cdblt.losses import BatchProbs, LossSpec, inv_freq_weights, loss_backward, loss_forward
from cdblt.model import softmax

import oracles


def _batch(rng, n, classes):
    logits = rng.normal(scale=2.0, size=(n, classes))
    labels = rng.integers(0, classes, size=n)
    return logits, labels


class TestForward:
    def test_uniform_two_class_is_ln2(self):
        batch = BatchProbs(np.full((3, 2), 0.5), [0, 1, 0])
        _, mean = loss_forward(LossSpec("ce"), batch)
        assert mean == pytest.approx(math.log(2), abs=1e-12)

    def test_weighted_value(self):
        batch = BatchProbs([[0.8, 0.2]], [0])
        per, _ = loss_forward(LossSpec("cdb_w_ce", class_weights=[0.1, 1.0]), batch)
        assert per[0] == pytest.approx(0.1 * -math.log(0.8), abs=1e-12)
        assert per[0] == pytest.approx(0.022314355131420976, abs=1e-12)

    def test_focal_value(self):
        batch = BatchProbs([[0.8, 0.2]], [0])
        per, _ = loss_forward(LossSpec("focal", gamma=2.0), batch)
        assert per[0] == pytest.approx(0.04 * -math.log(0.8), abs=1e-12)

    @pytest.mark.parametrize("kind", ["ce", "focal", "cdb_w_ce", "cdb_w_fl"])
    def test_against_oracle(self, kind):
        rng = np.random.default_rng(0)
        logits, labels = _batch(rng, 40, 5)
        probs = softmax(logits)
        w = rng.uniform(0, 1, 5)
        spec = LossSpec(kind, gamma=1.5, class_weights=w if kind.startswith("cdb") else None)
        per, mean = loss_forward(spec, BatchProbs(probs, labels))
        expected = [oracles.sample_loss(kind, probs[i, y], 1.5, w[y]) for i, y in enumerate(labels)]
        np.testing.assert_allclose(per, expected, rtol=1e-12)
        assert mean == pytest.approx(math.fsum(expected) / 40, rel=1e-12)

    def test_clipping_keeps_loss_finite(self):
        per, _ = loss_forward(LossSpec("ce"), BatchProbs([[1.0, 0.0]], [1]))
        assert per[0] == pytest.approx(-math.log(1e-12))
        per, _ = loss_forward(LossSpec("focal"), BatchProbs([[1.0, 0.0]], [0]))
        assert np.isfinite(per[0]) and per[0] >= 0

    def test_errors(self):
        with pytest.raises(ConfigError):
            LossSpec("hinge")
        with pytest.raises(ConfigError):
            LossSpec("focal", gamma=-1.0)
        with pytest.raises(ConfigError):
            loss_forward(LossSpec("cdb_w_ce"), BatchProbs([[0.5, 0.5]], [0]))
        with pytest.raises(ConfigError):
            loss_forward(LossSpec("cdb_w_ce", class_weights=[1.0]), BatchProbs([[0.5, 0.5]], [0]))


class TestReductions:
    """Special parameter values collapse onto plain cross-entropy exactly."""

    def setup_method(self):
        rng = np.random.default_rng(1)
        logits, labels = _batch(rng, 64, 4)
        self.batch = BatchProbs(softmax(logits), labels)
        self.ce = LossSpec("ce")

    def _same(self, spec):
        a_per, a = loss_forward(self.ce, self.batch)
        b_per, b = loss_forward(spec, self.batch)
        assert a_per.tobytes() == b_per.tobytes() and a == b
        assert loss_backward(self.ce, self.batch).tobytes() == loss_backward(spec, self.batch).tobytes()

    def test_unit_weights(self):
        self._same(LossSpec("cdb_w_ce", class_weights=np.ones(4)))

    def test_focal_gamma_zero(self):
        self._same(LossSpec("focal", gamma=0.0))

    def test_weighted_focal_both(self):
        self._same(LossSpec("cdb_w_fl", gamma=0.0, class_weights=np.ones(4)))

    def test_ce_ignores_gamma(self):
        self._same(LossSpec("ce", gamma=3.0))


class TestGradient:
    @pytest.mark.parametrize("classes", [2, 5, 10])
    @pytest.mark.parametrize("kind", ["ce", "focal", "cdb_w_ce", "cdb_w_fl"])
    def test_finite_differences(self, classes, kind):
        rng = np.random.default_rng(classes)
        worst = 0.0
        for _ in range(50):
            logits, labels = _batch(rng, 8, classes)
            w = rng.uniform(0.1, 1.0, classes) if kind.startswith("cdb") else None
            spec = LossSpec(kind, gamma=rng.uniform(0.5, 3.0), class_weights=w)

            def f(z):
                return loss_forward(spec, BatchProbs(softmax(z), labels))[1]

            analytic = loss_backward(spec, BatchProbs(softmax(logits), labels))
            worst = max(worst, oracles.rel_error(analytic, oracles.central_difference(f, logits)))
        assert worst < 1e-6

    @given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_linear_in_weights(self, scale, seed):
        rng = np.random.default_rng(seed)
        logits, labels = _batch(rng, 16, 3)
        batch = BatchProbs(softmax(logits), labels)
        w = rng.uniform(0.1, 1, 3)
        base = LossSpec("cdb_w_fl", gamma=1.0, class_weights=w)
        scaled = base.with_weights(w * scale)
        assert loss_forward(scaled, batch)[1] == pytest.approx(scale * loss_forward(base, batch)[1], rel=1e-10)
        np.testing.assert_allclose(loss_backward(scaled, batch), scale * loss_backward(base, batch),
                                   rtol=1e-10, atol=1e-15)

    def test_rows_sum_to_zero(self):
        rng = np.random.default_rng(3)
        logits, labels = _batch(rng, 20, 6)
        g = loss_backward(LossSpec("focal", gamma=2.0), BatchProbs(softmax(logits), labels))
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)


class TestInverseFrequency:
    def test_two_class(self):
        np.testing.assert_allclose(inv_freq_weights([900, 100]), [0.2, 1.8], rtol=1e-12)

    def test_balanced_counts_give_ones(self):
        np.testing.assert_allclose(inv_freq_weights([7, 7, 7]), 1.0)

    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=50))
    def test_mean_one(self, counts):
        assert inv_freq_weights(counts).mean() == pytest.approx(1.0, rel=1e-12)

    def test_zero_count(self):
        with pytest.raises(ConfigError):
            inv_freq_weights([10, 0])
