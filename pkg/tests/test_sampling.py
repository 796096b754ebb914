import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdblt.data import LabeledDataset
from cdblt.difficulty import ClassState
from cdblt.errors import ConfigError
from cdblt.sampling import (DegenerateDistributionError, DrawEngine, SamplerSpec, cdb_distribution, class_distribution,
                            draw_epoch, per_sample_probabilities)

import oracles


def _state(difficulties, total=100):
    d = np.asarray(difficulties)
    return ClassState(np.round((1 - d) * total).astype(int), np.full(len(d), total))


def _dataset(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    return LabeledDataset(np.zeros((len(labels), 1)), labels, len(counts))


class TestDistributions:
    def test_cdb_two_class(self):
        np.testing.assert_allclose(cdb_distribution([0.9, 0.1], 1.0), [0.9, 0.1], atol=1e-15)

    def test_cdb_tau_zero_uniform(self):
        np.testing.assert_array_equal(cdb_distribution([0.9, 0.3, 0.1, 0.0], 0.0), np.full(4, 0.25))

    def test_cdb_single_difficult_class(self):
        d = np.zeros(5)
        d[3] = 0.4
        np.testing.assert_array_equal(cdb_distribution(d, 2.0), np.eye(5)[3])

    def test_cdb_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            cdb_distribution(np.zeros(3), 1.0)

    @given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=20).filter(lambda d: max(d) > 1e-3),
           st.floats(0.0, 5.0))
    def test_cdb_matches_oracle(self, d, t):
        np.testing.assert_allclose(cdb_distribution(d, t), oracles.cdb_probs(d, t), rtol=1e-9, atol=1e-300)

    def test_uniform_follows_counts(self):
        dist = class_distribution(SamplerSpec("uniform"), None, 0.0, [90, 10])
        np.testing.assert_allclose(dist, [0.9, 0.1])

    @pytest.mark.parametrize("kind", ["class_frequency", "class_aware"])
    def test_balanced_samplers(self, kind):
        np.testing.assert_allclose(class_distribution(SamplerSpec(kind), None, 0.0, [500, 20, 5]), np.full(3, 1 / 3))

    def test_floor_applied(self):
        spec = SamplerSpec("cdb_s", floor=0.01)
        dist = class_distribution(spec, _state([0.0, 0.0, 0.5]), 1.0, [10, 10, 10])
        assert dist.min() == pytest.approx(0.01)
        assert dist.sum() == pytest.approx(1.0, abs=1e-15)

    def test_default_floor_keeps_every_class(self):
        dist = class_distribution(SamplerSpec("cdb_s"), _state([0.0, 0.0, 0.5, 0.0]), 3.0, [1, 1, 1, 1])
        assert np.all(dist > 0)
        assert dist[0] == pytest.approx(1e-4 / 4)

    def test_all_zero_difficulty_with_floor_is_uniform(self):
        dist = class_distribution(SamplerSpec("cdb_s"), _state([0.0, 0.0]), 1.0, [3, 3])
        np.testing.assert_array_equal(dist, [0.5, 0.5])

    def test_tau_zero_is_exactly_uniform(self):
        dist = class_distribution(SamplerSpec("cdb_s"), _state([0.7, 0.2, 0.0]), 0.0, [5, 5, 5])
        assert dist.tobytes() == np.full(3, 1 / 3).tobytes()

    def test_floor_too_large(self):
        with pytest.raises(ConfigError):
            class_distribution(SamplerSpec("cdb_s", floor=0.5), _state([0.5, 0.5]), 1.0, [1, 1])

    def test_needs_state(self):
        with pytest.raises(ConfigError):
            class_distribution(SamplerSpec("cdb_s"), None, 1.0, [1, 1])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            SamplerSpec("reservoir")


class TestDraws:
    def test_frequencies_match_distribution(self):
        ds = _dataset([50, 30, 20])
        dist = np.array([0.2, 0.5, 0.3])
        idx = draw_epoch(dist, ds, 100_000, seed=0)
        freq = np.bincount(ds.labels[idx], minlength=3) / len(idx)
        np.testing.assert_allclose(freq, dist, atol=0.01)

    def test_uniform_within_class(self):
        ds = _dataset([4, 1])
        idx = draw_epoch([1.0, 0.0], ds, 40_000, seed=1)
        assert set(idx) <= {0, 1, 2, 3}
        np.testing.assert_allclose(np.bincount(idx, minlength=4) / 40_000, 0.25, atol=0.01)

    def test_zero_mass_class_never_drawn(self):
        ds = _dataset([5, 5, 5])
        idx = draw_epoch([0.5, 0.0, 0.5], ds, 10_000, seed=2)
        assert not np.any(ds.labels[idx] == 1)

    def test_deterministic(self):
        ds = _dataset([5, 7, 9])
        a = draw_epoch([0.2, 0.3, 0.5], ds, 1000, seed=[3, 1, 4])
        b = draw_epoch([0.2, 0.3, 0.5], ds, 1000, seed=[3, 1, 4])
        c = draw_epoch([0.2, 0.3, 0.5], ds, 1000, seed=[3, 1, 5])
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_bad_distribution(self):
        engine = DrawEngine([0, 1], 2)
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            engine.draw([0.5, 0.6], 10, rng)
        with pytest.raises(ConfigError):
            engine.draw([1.0], 10, rng)

    def test_per_sample_probabilities(self):
        labels = np.array([0, 0, 0, 1])
        dist = np.array([0.6, 0.4])
        probs = per_sample_probabilities(dist, labels, 2)
        np.testing.assert_allclose(probs, [0.2, 0.2, 0.2, 0.4])
        assert probs.sum() == pytest.approx(1.0)

    @given(st.lists(st.integers(1, 30), min_size=2, max_size=8), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_per_sample_matches_oracle(self, counts, seed):
        rng = np.random.default_rng(seed)
        dist = rng.dirichlet(np.ones(len(counts)))
        labels = np.repeat(np.arange(len(counts)), counts)
        got = per_sample_probabilities(dist, labels, len(counts))
        for i, y in enumerate(labels):
            assert abs(got[i] - dist[y] / counts[y]) <= 1e-12
