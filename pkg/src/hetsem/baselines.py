"""Reference estimators: homoskedastic SEM, SAR, and OLS.

Each baseline is fitted by maximum likelihood with the variance profiled
out (sigma^2 = e'e / n), leaving a one-dimensional search over the
spatial parameter.  OLS has a closed form.  All three report the same
BaselineFit shape so Monte Carlo code can treat estimators uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .model import LAMBDA_BOUND, _maximize_scalar, log_det_B
from .weights import WeightMatrix

_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = ["BaselineFit", "fit_sem_homoscedastic", "fit_sar", "fit_ols",
           "sar_covariance"]


@dataclass
class BaselineFit:
    """Estimates from one of the reference models.

    ``spatial_param`` holds lam for the SEM, rho for the SAR, and None
    for OLS.  ``residuals`` are the model's innovation estimates:
    B(y - X b) for the SEM, (I - rho W)y - X b for the SAR, y - X b for
    OLS.  ``sigma2_pooled`` is the profiled ML variance e'e / n.
    """

    kind: str
    beta: np.ndarray
    spatial_param: float | None
    sigma2_pooled: float
    loglik: float
    residuals: np.ndarray
    converged: bool = True


def _check_xy(y, X):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be two-dimensional")
    if X.shape[0] != y.size:
        raise DimensionError(
            f"row counts disagree: y has {y.size}, X has {X.shape[0]}"
        )
    if y.size <= X.shape[1]:
        raise DimensionError("need more observations than parameters")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise ValueError("inputs contain non-finite values")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("design X is rank deficient")
    return y, X


def _check_w(w, n):
    if not isinstance(w, WeightMatrix):
        raise TypeError("w must be a WeightMatrix")
    if w.n != n:
        raise DimensionError(f"weights are {w.n} x {w.n} but n = {n}")
    if not w.row_standardized:
        raise ValueError("weights must be row-standardized; see row_standardize()")


def fit_ols(y, X) -> BaselineFit:
    """Ordinary least squares with the ML variance e'e / n."""
    y, X = _check_xy(y, X)
    n = y.size
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    e = y - X @ beta
    sigma2 = float(e @ e) / n
    ll = -0.5 * n * (_LOG_2PI + 1.0) - 0.5 * n * np.log(sigma2)
    return BaselineFit(kind="ols", beta=beta, spatial_param=None,
                       sigma2_pooled=sigma2, loglik=float(ll), residuals=e)


def fit_sem_homoscedastic(y, X, w: WeightMatrix, *, bound: float = LAMBDA_BOUND,
                          grid_points: int = 17, xatol: float = 1e-8,
                          spatial_fixed: float | None = None) -> BaselineFit:
    """SEM with a single error variance, fitted by profile ML.

    For fixed lam, beta is OLS of By on BX and sigma^2 = e'e / n, giving
    the profile ll(lam) = -(n/2)(ln 2 pi + 1) - (n/2) ln sigma^2(lam)
    + ln|B|, maximized over lam in (-bound, bound).  ``spatial_fixed``
    pins lam instead of searching (useful for reductions and tests).
    """
    y, X = _check_xy(y, X)
    n = y.size
    _check_w(w, n)
    Wy = w.lag(y)
    WX = w.lag(X)

    def profile(lam: float) -> float:
        By = y - lam * Wy
        BX = X - lam * WX
        coef, _, _, _ = np.linalg.lstsq(BX, By, rcond=None)
        e = By - BX @ coef
        s2 = float(e @ e) / n
        return (-0.5 * n * (_LOG_2PI + 1.0) - 0.5 * n * np.log(s2)
                + log_det_B(w, lam))

    if spatial_fixed is not None:
        lam = float(spatial_fixed)
        ll = profile(lam)
    else:
        lam, ll = _maximize_scalar(profile, -bound, bound, grid_points, xatol)
    By = y - lam * Wy
    BX = X - lam * WX
    beta, _, _, _ = np.linalg.lstsq(BX, By, rcond=None)
    e = By - BX @ beta
    return BaselineFit(kind="ho-sem", beta=beta, spatial_param=float(lam),
                       sigma2_pooled=float(e @ e) / n, loglik=float(ll),
                       residuals=e)


def fit_sar(y, X, w: WeightMatrix, *, bound: float = LAMBDA_BOUND,
            grid_points: int = 17, xatol: float = 1e-8) -> BaselineFit:
    """Spatial autoregressive model y = rho W y + X beta + eps, profile ML.

    For fixed rho, beta is OLS of (I - rho W)y on the untransformed X.
    """
    y, X = _check_xy(y, X)
    n = y.size
    _check_w(w, n)
    Wy = w.lag(y)

    def profile(rho: float) -> float:
        Ay = y - rho * Wy
        coef, _, _, _ = np.linalg.lstsq(X, Ay, rcond=None)
        e = Ay - X @ coef
        s2 = float(e @ e) / n
        return (-0.5 * n * (_LOG_2PI + 1.0) - 0.5 * n * np.log(s2)
                + log_det_B(w, rho))

    rho, ll = _maximize_scalar(profile, -bound, bound, grid_points, xatol)
    Ay = y - rho * Wy
    beta, _, _, _ = np.linalg.lstsq(X, Ay, rcond=None)
    e = Ay - X @ beta
    return BaselineFit(kind="sar", beta=beta, spatial_param=float(rho),
                       sigma2_pooled=float(e @ e) / n, loglik=float(ll),
                       residuals=e)


def sar_covariance(y, X, w: WeightMatrix, fit: BaselineFit) -> np.ndarray:
    """Asymptotic covariance of (beta, rho) for a SAR fit.

    Built from the expected information with parameter order
    (beta, rho, sigma^2); the sigma^2 row is marginalized out of the
    returned matrix.
    """
    if fit.kind != "sar":
        raise ValueError("covariance formula applies to SAR fits only")
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    rho = fit.spatial_param
    s2 = fit.sigma2_pooled
    Wd = w.toarray()
    Ad = np.eye(n) - rho * Wd
    G = np.linalg.solve(Ad.T, Wd.T).T  # W A^{-1}
    Gmu = G @ (X @ fit.beta)
    info = np.zeros((k + 2, k + 2))
    info[:k, :k] = X.T @ X / s2
    info[:k, k] = X.T @ Gmu / s2
    info[k, :k] = info[:k, k]
    info[k, k] = np.trace(G @ G) + np.trace(G.T @ G) + float(Gmu @ Gmu) / s2
    info[k, k + 1] = np.trace(G) / s2
    info[k + 1, k] = info[k, k + 1]
    info[k + 1, k + 1] = n / (2.0 * s2 * s2)
    return np.linalg.inv(info)[: k + 1, : k + 1]
