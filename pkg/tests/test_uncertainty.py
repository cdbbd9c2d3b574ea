import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cluelab.errors import DomainError
from cluelab.nn import MLPConfig, init_params, make_rng
from cluelab.uncertainty import (Categorical, Gaussian, MCSampleSet, aggregate, confidence, gaussian_entropy,
                                 mc_dropout_predict, normalized_entropy)

simplex_rows = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                      elements=st.floats(0.0, 1.0)).filter(lambda a: np.all(a.sum(axis=1) > 1e-3)) \
    .map(lambda a: a / a.sum(axis=1, keepdims=True))


class TestMCDropout:
    def test_no_dropout_passes_identical(self):
        cfg = MLPConfig((3, 8, 4), dropout_rate=0.0)
        s = mc_dropout_predict(init_params(cfg, 0), cfg, np.ones((2, 3)), 6, make_rng(1))
        assert all(np.array_equal(p.probs, s.passes[0].probs) for p in s.passes)

    def test_seeded_reruns_identical(self):
        cfg = MLPConfig((3, 8, 4))
        p = init_params(cfg, 0)
        x = make_rng(2).normal(size=(5, 3))
        a = mc_dropout_predict(p, cfg, x, 5, make_rng(3))
        b = mc_dropout_predict(p, cfg, x, 5, make_rng(3))
        assert all(np.array_equal(u.probs, v.probs) for u, v in zip(a.passes, b.passes))

    def test_passes_differ_and_stay_on_simplex(self):
        cfg = MLPConfig((3, 16, 4), dropout_rate=0.3)
        s = mc_dropout_predict(init_params(cfg, 4), cfg, make_rng(5).normal(size=(7, 3)), 5, make_rng(6))
        assert s.K == 5
        assert not np.array_equal(s.passes[0].probs, s.passes[1].probs)
        for p in s.passes:
            np.testing.assert_allclose(p.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_mixed_pass_types_rejected(self):
        with pytest.raises(TypeError):
            MCSampleSet((Categorical([[0.5, 0.5]]), Gaussian([0.0], [1.0])))

    def test_k_one_equals_k_twenty_without_dropout(self):
        cfg = MLPConfig((3, 8, 4), dropout_rate=0.0)
        p = init_params(cfg, 0)
        x = make_rng(8).normal(size=(4, 3))
        u1 = normalized_entropy(aggregate(mc_dropout_predict(p, cfg, x, 1, make_rng(0))))
        u20 = normalized_entropy(aggregate(mc_dropout_predict(p, cfg, x, 20, make_rng(0))))
        np.testing.assert_allclose(u1, u20, rtol=0, atol=1e-15)


class TestAggregate:
    def test_identical_passes_unchanged(self):
        d = Categorical([[0.2, 0.3, 0.5]])
        np.testing.assert_allclose(aggregate([d, d, d]).probs, d.probs, atol=1e-15)

    def test_two_one_hots(self):
        np.testing.assert_allclose(aggregate([Categorical([[1.0, 0.0]]), Categorical([[0.0, 1.0]])]).probs,
                                   [[0.5, 0.5]])

    def test_total_variance(self):
        out = aggregate([Gaussian([0.0], [1.0]), Gaussian([2.0], [1.0])])
        assert out.mean[0] == 1.0 and out.var[0] == 2.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(arrays(np.float64, 3, elements=st.floats(-5, 5)), min_size=1, max_size=6),
           st.lists(arrays(np.float64, 3, elements=st.floats(0.01, 5)), min_size=6, max_size=6),
           st.randoms())
    def test_gaussian_properties(self, means, variances, rnd):
        passes = [Gaussian(m, v) for m, v in zip(means, variances)]
        out = aggregate(passes)
        assert np.all(out.var >= np.mean([p.var for p in passes], axis=0) - 1e-12)
        shuffled = list(passes)
        rnd.shuffle(shuffled)
        np.testing.assert_allclose(aggregate(shuffled).var, out.var, rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(simplex_rows, min_size=1, max_size=5), st.randoms())
    def test_categorical_properties(self, rows, rnd):
        shape = rows[0].shape
        passes = [Categorical(r) for r in rows if r.shape == shape]
        out = aggregate(passes)
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)
        rnd.shuffle(passes)
        np.testing.assert_allclose(aggregate(passes).probs, out.probs, atol=1e-15)


class TestSummaries:
    def test_normalized_entropy_examples(self):
        assert normalized_entropy(Categorical(np.full((1, 10), 0.1)))[0] == pytest.approx(1.0, abs=1e-12)
        assert normalized_entropy(Categorical([[0.0, 1.0, 0.0]]))[0] == 0.0
        expected = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25)) / math.log(2)
        assert normalized_entropy(Categorical([[0.75, 0.25]]))[0] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.8113, abs=5e-5)

    @settings(max_examples=60, deadline=None)
    @given(simplex_rows)
    def test_normalized_entropy_range(self, p):
        u = normalized_entropy(Categorical(p))
        assert np.all((u >= 0) & (u <= 1))
        uniform = np.all(np.abs(p - 1 / p.shape[1]) < 1e-9, axis=1)
        one_hot = np.sum(p > 0, axis=1) == 1
        assert np.all(np.isclose(u[uniform], 1.0))
        assert np.all(u[one_hot] == 0.0)
        assert np.all(u[~uniform] < 1.0)

    def test_confidence_examples(self):
        assert confidence(Categorical([[0.0, 1.0]]))[0] == 0.0
        assert confidence(Categorical(np.full((1, 4), 0.25)))[0] == pytest.approx(0.75)
        assert confidence(Categorical([[0.6, 0.3, 0.1]]))[0] == pytest.approx(0.4, abs=1e-15)

    def test_gaussian_entropy_examples(self):
        h = gaussian_entropy(Gaussian([0.0, 0.0, 0.0], [1 / (2 * math.pi * math.e), 1.0, 2.0]))
        assert h[0] == pytest.approx(0.0, abs=1e-15)
        assert h[1] == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-12)
        assert h[1] == pytest.approx(1.4189, abs=5e-5)
        assert h[2] > h[1]

    def test_invalid_distributions(self):
        with pytest.raises(DomainError):
            Categorical([[0.5, 0.6]])
        with pytest.raises(DomainError):
            Gaussian([0.0], [0.0])
