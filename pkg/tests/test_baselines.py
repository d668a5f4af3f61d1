import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from hetsem.baselines import (
    fit_ols,
    fit_sar,
    fit_sem_homoscedastic,
    sar_covariance,
)
from hetsem.errors import DimensionError
from hetsem.model import log_det_B
from hetsem.weights import build_rook_grid, row_standardize

from test_model import sem_data


def homo_sem_sample(seed=0, rows=7, cols=7, beta=(1.0, -1.0, 0.5), lam=0.5,
                    sigma=1.0):
    rng = np.random.default_rng(seed)
    n = rows * cols
    w = row_standardize(build_rook_grid(rows, cols))
    X = np.column_stack([np.ones(n), rng.normal(size=n),
                         rng.normal(loc=2.0, size=n)])
    eps = sigma * rng.normal(size=n)
    u = np.linalg.solve(np.eye(n) - lam * w.toarray(), eps)
    return X @ np.asarray(beta) + u, X, w


class TestFitOls:
    def test_exact_fit_gives_zero_residuals(self):
        rng = np.random.default_rng(1)
        X = np.column_stack([np.ones(20), rng.normal(size=20)])
        beta = np.array([2.0, -3.0])
        res = fit_ols(X @ beta, X)
        assert_allclose(res.beta, beta, atol=1e-10)
        assert_allclose(res.residuals, 0.0, atol=1e-10)

    def test_orthogonal_columns_decouple(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        y = np.array([1.0, 3.0, 5.0, 9.0])
        res = fit_ols(y, X)
        expected = np.array([X[:, 0] @ y / (X[:, 0] @ X[:, 0]),
                             X[:, 1] @ y / (X[:, 1] @ X[:, 1])])
        assert_allclose(res.beta, expected, rtol=1e-12)

    def test_matches_normal_equation_oracle(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
        y = rng.normal(size=40)
        res = fit_ols(y, X)
        expected = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.abs(res.beta - expected).max() <= 1e-10
        e = y - X @ expected
        assert_allclose(res.sigma2_pooled, e @ e / 40, rtol=1e-12)

    def test_loglik_is_normal_logpdf_at_ml_variance(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(30), rng.normal(size=30)])
        y = rng.normal(size=30)
        res = fit_ols(y, X)
        expected = stats.norm.logpdf(res.residuals, scale=np.sqrt(res.sigma2_pooled)).sum()
        assert_allclose(res.loglik, expected, rtol=1e-12)

    def test_rank_deficiency(self):
        X = np.ones((10, 2))
        with pytest.raises(ValueError, match="rank deficient"):
            fit_ols(np.arange(10.0), X)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            fit_ols(np.arange(5.0), np.ones((4, 1)))


class TestFitSemHomoscedastic:
    def test_fixed_zero_lambda_reduces_to_ols(self):
        y, X, w = homo_sem_sample(seed=11)
        res = fit_sem_homoscedastic(y, X, w, spatial_fixed=0.0)
        ols = fit_ols(y, X)
        assert_allclose(res.beta, ols.beta, atol=1e-12)
        assert_allclose(res.sigma2_pooled, ols.sigma2_pooled, rtol=1e-12)

    def test_profile_matches_fine_grid_oracle(self):
        y, X, w = homo_sem_sample(seed=12, lam=0.6)
        res = fit_sem_homoscedastic(y, X, w)
        grid = np.linspace(-0.995, 0.995, 1991)

        def profile(lam):
            By = y - lam * w.lag(y)
            BX = X - lam * w.lag(X)
            b = np.linalg.lstsq(BX, By, rcond=None)[0]
            e = By - BX @ b
            n = y.size
            return (-0.5 * n * (np.log(2 * np.pi) + 1.0)
                    - 0.5 * n * np.log(e @ e / n) + log_det_B(w, lam))

        vals = [profile(g) for g in grid]
        best = grid[int(np.argmax(vals))]
        assert abs(res.spatial_param - best) <= grid[1] - grid[0]
        assert res.loglik >= max(vals) - 1e-9

    def test_loglik_equals_profile_formula_at_optimum(self):
        y, X, w = homo_sem_sample(seed=13, lam=-0.4)
        res = fit_sem_homoscedastic(y, X, w)
        n = y.size
        expected = (-0.5 * n * (np.log(2 * np.pi) + 1.0)
                    - 0.5 * n * np.log(res.sigma2_pooled)
                    + log_det_B(w, res.spatial_param))
        assert_allclose(res.loglik, expected, rtol=1e-10)

    def test_recovers_lambda_roughly(self):
        y, X, w = homo_sem_sample(seed=14, rows=12, cols=12, lam=0.5)
        res = fit_sem_homoscedastic(y, X, w)
        assert abs(res.spatial_param - 0.5) < 0.25
        assert abs(res.spatial_param) < 1.0
        assert res.sigma2_pooled > 0

    def test_requires_standardized_weights(self):
        y, X, _ = homo_sem_sample(seed=15, rows=3, cols=3)
        with pytest.raises(ValueError, match="row-standardize"):
            fit_sem_homoscedastic(y, X, build_rook_grid(3, 3))


class TestFitSar:
    def sar_sample(self, seed=0, rows=9, cols=9, beta=(1.0, -1.0, 0.5), rho=0.4):
        rng = np.random.default_rng(seed)
        n = rows * cols
        w = row_standardize(build_rook_grid(rows, cols))
        X = np.column_stack([np.ones(n), rng.normal(size=n),
                             rng.normal(loc=2.0, size=n)])
        eps = rng.normal(size=n)
        y = np.linalg.solve(np.eye(n) - rho * w.toarray(),
                            X @ np.asarray(beta) + eps)
        return y, X, w

    def test_loglik_matches_multivariate_normal_oracle(self):
        y, X, w = self.sar_sample(seed=21, rows=5, cols=5)
        res = fit_sar(y, X, w)
        n = y.size
        Ainv = np.linalg.inv(np.eye(n) - res.spatial_param * w.toarray())
        cov = res.sigma2_pooled * (Ainv @ Ainv.T)
        expected = stats.multivariate_normal.logpdf(y, mean=Ainv @ (X @ res.beta),
                                                    cov=cov)
        assert_allclose(res.loglik, expected, rtol=1e-8)

    def test_profile_matches_fine_grid_oracle(self):
        y, X, w = self.sar_sample(seed=22, rho=-0.3)
        res = fit_sar(y, X, w)
        n = y.size
        grid = np.linspace(-0.995, 0.995, 1991)

        def profile(rho):
            Ay = y - rho * w.lag(y)
            b = np.linalg.lstsq(X, Ay, rcond=None)[0]
            e = Ay - X @ b
            return (-0.5 * n * (np.log(2 * np.pi) + 1.0)
                    - 0.5 * n * np.log(e @ e / n) + log_det_B(w, rho))

        vals = [profile(g) for g in grid]
        best = grid[int(np.argmax(vals))]
        assert abs(res.spatial_param - best) <= grid[1] - grid[0]

    def test_null_dgp_gives_small_rho(self):
        rng = np.random.default_rng(23)
        n = 144
        w = row_standardize(build_rook_grid(12, 12))
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = X @ np.array([1.0, 2.0]) + rng.normal(size=n)
        res = fit_sar(y, X, w)
        assert abs(res.spatial_param) < 0.2

    def test_sem_error_dgp_pulls_rho_positive(self):
        data = sem_data(seed=24, rows=12, cols=12, lam=0.5)
        res = fit_sar(data.y, data.X, data.w)
        assert res.spatial_param > 0.1


class TestSarCovariance:
    def test_shape_and_symmetry(self):
        y, X, w = TestFitSar().sar_sample(seed=31)
        res = fit_sar(y, X, w)
        cov = sar_covariance(y, X, w, res)
        assert cov.shape == (X.shape[1] + 1, X.shape[1] + 1)
        assert_allclose(cov, cov.T, atol=1e-12)
        assert np.all(np.diag(cov) > 0)

    def test_calibrated_against_monte_carlo(self):
        rng_master = np.random.default_rng(987)
        rows = cols = 7
        n = rows * cols
        w = row_standardize(build_rook_grid(rows, cols))
        X = np.column_stack([np.ones(n), rng_master.normal(size=n)])
        beta = np.array([1.0, -1.0])
        rho = 0.4
        Ainv = np.linalg.inv(np.eye(n) - rho * w.toarray())
        mu = Ainv @ (X @ beta)
        rhos = []
        ses = []
        children = np.random.SeedSequence(32).spawn(300)
        for r in range(300):
            rng = np.random.default_rng(children[r])
            y = mu + Ainv @ rng.normal(size=n)
            res = fit_sar(y, X, w)
            rhos.append(res.spatial_param)
            ses.append(np.sqrt(sar_covariance(y, X, w, res)[-1, -1]))
        ratio = np.mean(ses) / np.std(rhos)
        assert 0.7 < ratio < 1.4

    def test_rejects_non_sar_fit(self):
        y, X, w = homo_sem_sample(seed=33, rows=3, cols=3)
        res = fit_ols(y, X)
        with pytest.raises(ValueError, match="SAR"):
            sar_covariance(y, X, w, res)
