import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentopt.core import Observation, ScoreMatrix
from agentopt.surrogates import (
    InsufficientObservations,
    LowRankFactor,
    ShapeMismatch,
    als_fit,
    ensemble_stats,
    expected_improvement,
    expected_improvement_from,
    fit_ensemble,
    hamming_kernel,
    surrogate_fit,
)

PHI_0 = 1 / math.sqrt(2 * math.pi)  # 0.3989422804014327


class TestAls:
    def test_full_rank1_within_50_sweeps(self):
        rng = np.random.default_rng(0)
        truth = np.outer(rng.uniform(0.2, 1, 12), rng.uniform(0.2, 1, 30))
        fit = als_fit(truth, r=1, iters=50)
        assert fit.sweeps <= 50
        assert np.max(np.abs(fit.predict() - truth)) < 1e-6

    def test_constant_matrix(self):
        rng = np.random.default_rng(1)
        mask = rng.random((8, 20)) < 0.3
        mask[0, :] = True
        mask[:, 0] = True
        fit = als_fit(np.full((8, 20), 0.37), mask=mask)
        assert np.max(np.abs(fit.predict() - 0.37)) < 1e-6

    def test_no_observations(self):
        with pytest.raises(InsufficientObservations):
            als_fit(np.full((3, 3), np.nan))

    def test_accepts_score_matrix(self):
        m = ScoreMatrix(2, 3)
        for c in range(2):
            for d in range(3):
                if (c, d) != (1, 2):
                    m.record(c, d, Observation(0.5))
        assert abs(als_fit(m).predict()[1, 2] - 0.5) < 1e-6

    def test_rank2(self):
        rng = np.random.default_rng(2)
        truth = rng.uniform(0, 1, (10, 2)) @ rng.uniform(0, 1, (2, 25))
        fit = als_fit(truth, r=2)
        assert fit.U.shape == (10, 2) and np.max(np.abs(fit.predict() - truth)) < 1e-4

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(2, 12), st.integers(1, 3), st.floats(0, 0.5), st.integers(0, 10**6))
    def test_objective_non_increasing(self, n_rows, n_cols, r, dropout, seed):
        rng = np.random.default_rng(seed)
        X = rng.random((n_rows, n_cols))
        X[rng.random(X.shape) < 0.4] = np.nan
        X[0, 0] = 0.5
        fit = als_fit(X, r=r, dropout_p=dropout, seed=seed)
        trace = np.array(fit.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * np.maximum(trace[:-1], 1e-12))
        assert np.all(np.isfinite(fit.predict()))

    def test_seeded(self):
        X = np.random.default_rng(3).random((5, 6))
        a = als_fit(X, dropout_p=0.3, seed=9)
        b = als_fit(X, dropout_p=0.3, seed=9)
        assert np.array_equal(a.predict(), b.predict())


class TestEnsemble:
    def member(self, value, shape=(2, 3)):
        return LowRankFactor(np.full((shape[0], 1), value), np.ones((shape[1], 1)), 1, ())

    def test_examples(self):
        s = ensemble_stats([self.member(0.0), self.member(1.0)])
        assert np.allclose(s.mu_hat, 0.5) and np.allclose(s.sigma_hat, 0.5)
        same = ensemble_stats([self.member(0.3)] * 4)
        assert np.all(same.sigma_hat == 0)
        one = ensemble_stats([self.member(0.7)])
        assert np.allclose(one.mu_hat, 0.7) and np.all(one.sigma_hat == 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ensemble_stats([self.member(0.1), self.member(0.1, (3, 3))])

    def test_dropout_creates_spread(self):
        X = np.random.default_rng(4).random((6, 20))
        members = fit_ensemble(X, 1, 8, dropout_p=0.3, seed=1)
        stats = ensemble_stats(members)
        assert len(members) == 8 and np.all(stats.sigma_hat >= 0) and stats.sigma_hat.max() > 0


class TestSurrogate:
    def test_interpolates_single_point(self):
        model = surrogate_fit([((0, 1), 0.6)], gamma=1.0, noise=1e-9)
        mean, var = model.predict([(0, 1)])
        assert abs(mean[0] - 0.6) < 1e-6 and var[0] < 1e-6

    def test_far_query_reverts_to_prior(self):
        model = surrogate_fit([((0, 0), 0.9)], gamma=50.0)
        mean, var = model.predict([(1, 1)])
        assert abs(mean[0]) < 1e-12 and abs(var[0] - 1.0) < 1e-12

    def test_matches_dense_solve(self):
        hist = [((0, 0), 0.2), ((0, 1), 0.5), ((1, 2), 0.9)]
        gamma, noise = 0.7, 1e-4
        model = surrogate_fit(hist, gamma, noise)
        X = np.array([h[0] for h in hist], float)
        y = np.array([h[1] for h in hist])
        Q = np.array([(a, b) for a in range(2) for b in range(3)], float)

        def k(A, B):
            return np.exp(-gamma * np.array([[np.sum(a != b) for b in B] for a in A]))

        Kinv = np.linalg.inv(k(X, X) + noise * np.eye(3))
        want_mean = k(Q, X) @ Kinv @ y
        want_var = 1 - np.einsum("ij,jk,ik->i", k(Q, X), Kinv, k(Q, X))
        mean, var = model.predict(Q.astype(int))
        assert np.max(np.abs(mean - want_mean)) < 1e-8
        assert np.max(np.abs(var - want_var)) < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 1)), min_size=1, max_size=10))
    def test_variance_at_training_points(self, pts):
        uniq = {(a, b): y for a, b, y in pts}
        model = surrogate_fit([((a, b), y) for (a, b), y in uniq.items()], 1.0, 1e-4)
        _, var = model.predict(list(uniq))
        assert np.all(var <= 1e-4 + 1e-6)

    def test_kernel_symmetric_psd(self):
        A = np.array([(a, b, c) for a in range(2) for b in range(3) for c in range(2)])
        K = hamming_kernel(A, A, 1.0)
        assert np.allclose(K, K.T) and np.linalg.eigvalsh(K).min() > -1e-10


class TestExpectedImprovement:
    def test_examples(self):
        assert expected_improvement_from([0.5], [0.0], 0.5)[0] == 0.0
        assert expected_improvement_from([0.5], [1.0], 0.5)[0] == pytest.approx(PHI_0, abs=1e-12)
        assert expected_improvement_from([1.5], [1e-12], 0.5)[0] == pytest.approx(1.0, abs=1e-9)

    def test_model_wrapper(self):
        model = surrogate_fit([((0,), 0.2), ((1,), 0.4)], noise=1e-4)
        assert expected_improvement(model, (2,), 0.4) > 0

    @given(st.floats(-3, 3), st.floats(0, 0.5), st.floats(0, 2), st.floats(-1, 1))
    def test_non_negative_and_monotone(self, mu, step, sigma, best):
        lo, hi = expected_improvement_from([mu, mu + step], [sigma, sigma], best)
        assert lo >= 0 and hi >= lo - 1e-12
