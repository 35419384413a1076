from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mi2sl.errors import DimensionMismatchError, InvalidParameterError
from mi2sl.lasso import (
    LAMBDA_MAX_MARGIN,
    LassoProblem,
    fit_partial_lasso,
    lambda_max,
    post_lasso,
    tuning_from_z,
)


def kkt_violation(problem: LassoProblem, fit) -> float:
    """Largest violation of the stationarity conditions of the unscaled objective."""
    r = problem.response - problem.unpenalized @ fit.unpenalized_coefs - problem.penalized @ fit.penalized_coefs
    g = 2.0 * problem.penalized.T @ r
    lam = problem.lam
    worst = float(np.abs(problem.unpenalized.T @ r).max(initial=0.0))
    for j, gj in enumerate(fit.penalized_coefs):
        if gj != 0:
            worst = max(worst, abs(g[j] - lam * np.sign(gj)))
        else:
            worst = max(worst, abs(g[j]) - lam)
    return worst


def random_problem(rng: np.random.Generator) -> LassoProblem:
    n = int(rng.integers(8, 61))
    p = int(rng.integers(1, 81))
    d = int(rng.integers(0, min(4, n - 2)))
    D = np.column_stack([np.ones(n), rng.normal(size=(n, d - 1))]) if d else np.zeros((n, 0))
    E = rng.normal(size=(n, p))
    E /= np.linalg.norm(E, axis=0)
    beta = np.zeros(p)
    beta[rng.choice(p, size=min(p, 3), replace=False)] = rng.normal(scale=3, size=min(p, 3))
    y = E @ beta + rng.normal(size=n) + (D.sum(axis=1) if d else 0)
    lmax = lambda_max(y, D, E)
    lam = float(lmax * rng.uniform(0.02, 1.2)) if lmax > 0 else 1.0
    return LassoProblem(y, D, E, lam)


class TestTuning:
    def test_values(self):
        assert tuning_from_z(2.0) == 0.25
        assert tuning_from_z(-3.1623) == pytest.approx(0.1, rel=1e-4)

    def test_floor_needs_data(self):
        with pytest.raises(InvalidParameterError):
            tuning_from_z(1e-9)

    def test_floor_gives_empty_selection(self):
        rng = np.random.default_rng(1)
        D = np.ones((30, 1))
        E = np.linalg.qr(rng.normal(size=(30, 10)))[0]
        y = rng.normal(size=30)
        lam = tuning_from_z(1e-9, y, D, E)
        assert lam == pytest.approx(LAMBDA_MAX_MARGIN * lambda_max(y, D, E))
        fit = fit_partial_lasso(LassoProblem(y, D, E, lam))
        assert fit.active_set == []


class TestProblemValidation:
    def test_nonpositive_lambda(self):
        with pytest.raises(InvalidParameterError):
            LassoProblem(np.ones(3), np.ones((3, 1)), np.eye(3), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            LassoProblem(np.ones(3), np.ones((4, 1)), np.eye(3), 1.0)


class TestSolver:
    def test_full_shrinkage(self):
        rng = np.random.default_rng(3)
        D = np.column_stack([np.ones(25), rng.normal(size=25)])
        E = rng.normal(size=(25, 12))
        y = rng.normal(size=25)
        fit = fit_partial_lasso(LassoProblem(y, D, E, 1.0001 * lambda_max(y, D, E)))
        assert np.all(fit.penalized_coefs == 0)
        assert np.allclose(fit.unpenalized_coefs, np.linalg.lstsq(D, y, rcond=None)[0], atol=1e-12)

    def test_orthonormal_closed_form(self):
        rng = np.random.default_rng(4)
        E = np.linalg.qr(rng.normal(size=(40, 15)))[0]
        y = 3 * rng.normal(size=40)
        for lam in (0.1, 1.0, 4.0):
            fit = fit_partial_lasso(LassoProblem(y, np.zeros((40, 0)), E, lam))
            c = E.T @ y
            expected = np.sign(c) * np.maximum(np.abs(c) - lam / 2, 0)
            assert np.abs(fit.penalized_coefs - expected).max() < 1e-8

    def test_grid_oracle(self):
        rng = np.random.default_rng(6)
        grid = np.linspace(-2, 2, 41)
        for _ in range(5):
            D = rng.normal(size=(6, 1))
            E = rng.normal(size=(6, 2))
            y = D[:, 0] * rng.uniform(-1, 1) + E @ rng.uniform(-1.5, 1.5, 2) + 0.3 * rng.normal(size=6)
            prob = LassoProblem(y, D, E, float(rng.uniform(0.1, 2.0)))
            fit = fit_partial_lasso(prob)
            best = min(prob.objective(np.array([b]), np.array([g1, g2])) for b, g1, g2 in itertools.product(grid, grid, grid))
            assert fit.objective_value <= best + 1e-10

    def test_kkt_suite(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            prob = random_problem(rng)
            fit = fit_partial_lasso(prob)
            assert fit.converged
            assert kkt_violation(prob, fit) < 1e-6
            assert fit.active_set == [j for j in range(prob.penalized.shape[1]) if fit.penalized_coefs[j] != 0]
            assert np.allclose(
                fit.fitted, prob.unpenalized @ fit.unpenalized_coefs + prob.penalized @ fit.penalized_coefs, atol=1e-12
            )

    def test_lambda_path(self):
        rng = np.random.default_rng(8)
        D = np.ones((50, 1))
        E = np.linalg.qr(rng.normal(size=(50, 20)))[0] + 0.05 * rng.normal(size=(50, 20))
        y = E[:, :6] @ rng.normal(scale=2, size=6) + rng.normal(size=50)
        lams = [0.01, 0.1, 1, 10, lambda_max(y, D, E)]
        sizes = [len(fit_partial_lasso(LassoProblem(y, D, E, lam)).active_set) for lam in lams]
        assert sizes == sorted(sizes, reverse=True)
        assert sizes[-1] == 0

    def test_debug_monotone(self):
        rng = np.random.default_rng(9)
        prob = random_problem(rng)
        fit = fit_partial_lasso(prob, debug=True)
        assert fit.converged

    def test_nonconvergence_reported(self):
        rng = np.random.default_rng(10)
        E = rng.normal(size=(30, 30))
        E[:, 1] = E[:, 0] + 1e-3 * rng.normal(size=30)
        y = rng.normal(size=30)
        fit = fit_partial_lasso(LassoProblem(y, np.ones((30, 1)), E, 0.01), max_iter=2)
        assert not fit.converged
        assert fit.iterations == 2

    def test_standardize_flag(self):
        rng = np.random.default_rng(12)
        prob = random_problem(rng)
        fit = fit_partial_lasso(prob, standardize=True)
        assert fit.converged
        assert len(fit.penalized_coefs) == prob.penalized.shape[1]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_post_lasso_rss(self, seed):
        prob = random_problem(np.random.default_rng(seed))
        fit = fit_partial_lasso(prob)
        n = prob.n
        if len(fit.active_set) + prob.unpenalized.shape[1] > n:
            return
        refit = post_lasso(prob, fit.active_set)
        assert refit.rss <= fit.rss + 1e-9


class TestPostLasso:
    def setup_method(self):
        rng = np.random.default_rng(13)
        self.D = np.column_stack([np.ones(30), rng.normal(size=30)])
        self.E = rng.normal(size=(30, 6))
        self.y = rng.normal(size=30)
        self.prob = LassoProblem(self.y, self.D, self.E, 1.0)

    def test_empty(self):
        fit = post_lasso(self.prob, [])
        assert np.allclose(fit.unpenalized_coefs, np.linalg.lstsq(self.D, self.y, rcond=None)[0], atol=1e-12)
        assert np.all(fit.penalized_coefs == 0)
        assert fit.converged and fit.lam == 1.0

    def test_all_columns(self):
        fit = post_lasso(self.prob, range(6))
        X = np.hstack([self.D, self.E])
        coef = np.linalg.lstsq(X, self.y, rcond=None)[0]
        assert np.allclose(np.concatenate([fit.unpenalized_coefs, fit.penalized_coefs]), coef, atol=1e-10)

    def test_normal_equations(self):
        fit = post_lasso(self.prob, [1, 4])
        X = np.hstack([self.D, self.E[:, [1, 4]]])
        coef = np.linalg.solve(X.T @ X, X.T @ self.y)
        assert np.abs(fit.unpenalized_coefs - coef[:2]).max() < 1e-10
        assert np.abs(fit.penalized_coefs[[1, 4]] - coef[2:]).max() < 1e-10
        assert fit.active_set == [1, 4]

    def test_drop_collinear(self):
        E = self.E.copy()
        E[:, 3] = E[:, 1] + 2 * self.D[:, 1]
        fit = post_lasso(LassoProblem(self.y, self.D, E, 1.0), [1, 3, 5])
        assert fit.dropped == [3]
        assert fit.active_set == [1, 5]
        assert fit.penalized_coefs[3] == 0
