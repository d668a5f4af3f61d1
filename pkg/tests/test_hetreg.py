import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import optimize, stats

from hetsem.errors import ConvergenceError, DimensionError
from hetsem.hetreg import fit_joint, loglik_hetnormal


def make_data(seed=42, n=80, beta=(2.0, -1.0), alpha=(0.5, 0.8)):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    z1 = rng.uniform(size=n)
    X = np.column_stack([np.ones(n), x1])
    Z = np.column_stack([np.ones(n), z1])
    sigma = np.sqrt(np.exp(Z @ np.asarray(alpha)))
    y = X @ np.asarray(beta) + sigma * rng.normal(size=n)
    return y, X, Z


def nelder_mead_oracle(y, X, Z):
    """Independent maximizer: Nelder-Mead from several cold starts."""
    k, p = X.shape[1], Z.shape[1]

    def neg(theta):
        return -loglik_hetnormal(y, X, Z, theta[:k], theta[k:])

    starts = [np.zeros(k + p)]
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    starts.append(np.concatenate([ols, np.zeros(p)]))
    starts.append(np.concatenate([ols, np.full(p, 0.3)]))
    best = None
    for s in starts:
        res = optimize.minimize(
            neg, s, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 20000},
        )
        if best is None or res.fun < best.fun:
            best = res
    return -best.fun, best.x[:k], best.x[k:]


class TestLoglikHetnormal:
    def test_hand_computed_value(self):
        # n=3, beta=0, alpha=0: ll = -(3/2) ln(2 pi) - (1+4+9)/2
        y = np.array([1.0, 2.0, 3.0])
        X = np.ones((3, 1))
        Z = np.ones((3, 1))
        expected = -1.5 * np.log(2 * np.pi) - 7.0
        assert_allclose(loglik_hetnormal(y, X, Z, [0.0], [0.0]), expected, rtol=1e-12)

    def test_matches_normal_logpdf(self):
        y, X, Z = make_data(seed=3, n=25)
        beta = np.array([1.5, -0.5])
        alpha = np.array([0.2, -0.4])
        mu = X @ beta
        sd = np.sqrt(np.exp(Z @ alpha))
        expected = stats.norm.logpdf(y, loc=mu, scale=sd).sum()
        assert_allclose(loglik_hetnormal(y, X, Z, beta, alpha), expected, rtol=1e-12)

    def test_overflowing_alpha_gives_minus_inf(self):
        y, X, Z = make_data(seed=4, n=20)
        assert loglik_hetnormal(y, X, Z, [0.0, 0.0], [800.0, 800.0]) == -np.inf

    def test_shape_checks(self):
        y, X, Z = make_data(seed=5, n=20)
        with pytest.raises(DimensionError):
            loglik_hetnormal(y, X, Z, [0.0], [0.0, 0.0])
        with pytest.raises(DimensionError):
            loglik_hetnormal(y[:-1], X, Z, [0.0, 0.0], [0.0, 0.0])


class TestFitJoint:
    def test_matches_nelder_mead_oracle(self):
        y, X, Z = make_data()
        ll_nm, beta_nm, alpha_nm = nelder_mead_oracle(y, X, Z)
        fit = fit_joint(y, X, Z)
        assert fit.converged
        assert fit.loglik >= ll_nm - 1e-6
        assert_allclose(fit.beta, beta_nm, atol=2e-4)
        assert_allclose(fit.alpha, alpha_nm, atol=2e-4)

    def test_score_equations_hold(self):
        y, X, Z = make_data(seed=11, n=150)
        fit = fit_joint(y, X, Z)
        e = y - X @ fit.beta
        mean_score = X.T @ (e / fit.sigma2)
        var_score = Z.T @ (e * e / fit.sigma2 - 1.0)
        assert np.abs(mean_score).max() < 1e-8
        assert np.abs(var_score).max() < 1e-6

    def test_sigma2_is_exp_of_linear_predictor(self):
        y, X, Z = make_data(seed=12)
        fit = fit_joint(y, X, Z)
        assert np.array_equal(fit.sigma2, np.exp(Z @ fit.alpha))

    def test_loglik_at_least_pooled_start(self):
        y, X, Z = make_data(seed=13, n=60)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        e = y - X @ ols
        pooled = np.array([np.log(np.mean(e * e)), 0.0])
        start = loglik_hetnormal(y, X, Z, ols, pooled)
        fit = fit_joint(y, X, Z)
        assert fit.loglik >= start - 1e-10

    def test_parameter_recovery_large_sample(self):
        y, X, Z = make_data(seed=21, n=4000, beta=(1.0, -1.0), alpha=(0.3, 1.2))
        fit = fit_joint(y, X, Z)
        assert fit.converged
        assert_allclose(fit.beta, [1.0, -1.0], atol=0.15)
        assert_allclose(fit.alpha, [0.3, 1.2], atol=0.25)

    def test_homoskedastic_reduction_matches_ols(self):
        y, X, _ = make_data(seed=31, n=50)
        Z = np.ones((50, 1))
        fit = fit_joint(y, X, Z)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        e = y - X @ ols
        assert_allclose(fit.beta, ols, atol=1e-8)
        assert_allclose(fit.sigma2, np.mean(e * e), rtol=1e-8)

    @given(st.floats(0.05, 20.0))
    @settings(max_examples=20, deadline=None)
    def test_response_scaling_shifts_alpha_intercept(self, c):
        y, X0, Z = make_data(seed=41, n=60)
        X = X0[:, :1]  # intercept-only mean so scaling y is a pure rescale
        base = fit_joint(y, X, Z)
        scaled = fit_joint(c * y, X, Z)
        assert_allclose(scaled.beta, c * base.beta, rtol=1e-5, atol=1e-7)
        expected = base.alpha + np.array([2.0 * np.log(c), 0.0])
        assert_allclose(scaled.alpha, expected, rtol=1e-5, atol=1e-6)

    def test_shape_mismatch(self):
        y, X, Z = make_data(seed=51, n=30)
        with pytest.raises(DimensionError, match="row counts"):
            fit_joint(y[:-2], X, Z)

    def test_rank_deficient_design(self):
        y, X, Z = make_data(seed=52, n=30)
        Xd = np.column_stack([X, X[:, 1]])
        with pytest.raises(ValueError, match="rank deficient"):
            fit_joint(y, Xd, Z)

    def test_non_finite_input(self):
        y, X, Z = make_data(seed=53, n=30)
        y = y.copy()
        y[0] = np.nan
        with pytest.raises(ConvergenceError, match="rescale"):
            fit_joint(y, X, Z)

    def test_warm_start_cannot_hurt(self):
        y, X, Z = make_data(seed=61, n=70)
        cold = fit_joint(y, X, Z)
        warm = fit_joint(y, X, Z, alpha0=cold.alpha)
        assert warm.loglik >= cold.loglik - 1e-9
