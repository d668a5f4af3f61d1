"""Spatial error model with regression-driven heteroskedasticity.

Model: y = X beta + u with u = lam W u + eps, eps_i ~ N(0, sigma_i^2)
and ln sigma_i^2 = z_i' alpha.  Writing B = I - lam W and
Omega = diag(sigma_i^2), the log-likelihood is

    ll = -(n/2) ln(2 pi) - (1/2) ln|Omega| + ln|B|
         - (1/2) (y - X beta)' B' Omega^{-1} B (y - X beta).

For fixed lam and Omega the maximizer over beta is generalized least
squares on the filtered data (By, BX), which gives a concentrated
likelihood in lam alone.  The full fit alternates a joint mean-variance
regression on the filtered data with a one-dimensional search over lam
until lam stabilizes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, DimensionError
from .hetreg import JointFit, fit_joint
from .weights import DENSE_EIGEN_LIMIT, WeightMatrix

_LOG_2PI = float(np.log(2.0 * np.pi))

# lam is searched on (-LAMBDA_BOUND, LAMBDA_BOUND); the model itself
# requires |lam| < 1 for I - lam W to stay invertible.
LAMBDA_BOUND = 0.9999

__all__ = [
    "ModelData",
    "FitResult",
    "LAMBDA_BOUND",
    "log_det_B",
    "log_det_omega",
    "loglik_hetsem",
    "beta_gls",
    "concentrated_loglik",
    "maximize_lambda",
    "scores",
    "fit",
]


@dataclass
class ModelData:
    """Response, designs, and weights for one spatial sample.

    y is (n,), X is the (n, k) mean design, Z the (n, p) log-variance
    design, and w a row-standardized WeightMatrix over the same units.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    w: WeightMatrix

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.X.ndim != 2 or self.Z.ndim != 2:
            raise DimensionError("X and Z must be two-dimensional")
        n = self.y.size
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise DimensionError(
                f"row counts disagree: y has {n}, X has {self.X.shape[0]}, "
                f"Z has {self.Z.shape[0]}"
            )
        if not isinstance(self.w, WeightMatrix):
            raise TypeError("w must be a WeightMatrix")
        if self.w.n != n:
            raise DimensionError(f"weights are {self.w.n} x {self.w.n} but n = {n}")
        if not self.w.row_standardized:
            raise ValueError("weights must be row-standardized; see row_standardize()")
        for name, arr in (("y", self.y), ("X", self.X), ("Z", self.Z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if n <= self.X.shape[1] + self.Z.shape[1] + 1:
            raise DimensionError("need more observations than parameters")
        if np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise ValueError("mean design X is rank deficient")
        if np.linalg.matrix_rank(self.Z) < self.Z.shape[1]:
            raise ValueError("variance design Z is rank deficient")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass
class FitResult:
    """Maximum-likelihood estimates for the heteroskedastic SEM."""

    beta: np.ndarray
    alpha: np.ndarray
    lam: float
    sigma2: np.ndarray
    loglik: float
    outer_iterations: int
    converged: bool
    lambda_trace: list[float] = field(default_factory=list)
    loglik_trace: list[float] = field(default_factory=list)


def log_det_omega(sigma2) -> float:
    """ln|Omega| = sum_i ln sigma_i^2 for diagonal Omega."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.size == 0 or not np.all(np.isfinite(sigma2)) or sigma2.min() <= 0:
        raise ValueError("sigma2 must be finite and strictly positive")
    return float(np.sum(np.log(sigma2)))


def log_det_B(w: WeightMatrix, lam: float, method: str = "auto",
              max_dense: int = DENSE_EIGEN_LIMIT) -> float:
    """ln|I - lam W| for a row-standardized weight matrix.

    ``method`` is "eigen" (sum of ln(1 - lam * omega_i) over the cached
    spectrum), "lu" (sparse LU factorization), or "auto", which picks
    the eigenvalue device up to ``max_dense`` units and LU beyond.
    """
    lam = float(lam)
    if not np.isfinite(lam) or abs(lam) >= 1.0:
        raise ValueError(f"lam must satisfy |lam| < 1, got {lam!r}")
    if not w.row_standardized:
        raise ValueError("log_det_B requires a row-standardized weight matrix")
    if method == "auto":
        method = "eigen" if w.n <= max_dense else "lu"
    if method == "eigen":
        vals = 1.0 - lam * w.eigenvalues(max_dense=max_dense)
        if vals.min() <= 0.0:
            raise ConvergenceError(f"I - lam W is singular at lam = {lam}")
        return float(np.sum(np.log(vals)))
    if method == "lu":
        B = (sp.identity(w.n, format="csr") - lam * w.matrix).tocsc()
        lu = splu(B)
        diag = lu.U.diagonal()
        if np.abs(diag).min() <= 0.0:
            raise ConvergenceError(f"I - lam W is singular at lam = {lam}")
        return float(np.sum(np.log(np.abs(diag))))
    raise ValueError(f"unknown method {method!r}; use 'auto', 'eigen', or 'lu'")


def loglik_hetsem(data: ModelData, beta, alpha, lam: float) -> float:
    """Full log-likelihood at (beta, alpha, lam)."""
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if beta.shape != (data.k,):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({data.k},)")
    if alpha.shape != (data.p,):
        raise DimensionError(f"alpha has shape {alpha.shape}, expected ({data.p},)")
    log_s2 = data.Z @ alpha
    with np.errstate(over="ignore"):
        sigma2 = np.exp(log_s2)
    if not np.all(np.isfinite(sigma2)):
        return -np.inf
    u = data.y - data.X @ beta
    Bu = u - lam * data.w.lag(u)
    val = (
        -0.5 * data.n * _LOG_2PI
        - 0.5 * log_s2.sum()
        + log_det_B(data.w, lam)
        - 0.5 * np.sum(Bu * Bu / sigma2)
    )
    return float(val) if np.isfinite(val) else -np.inf


def beta_gls(data: ModelData, lam: float, sigma2) -> np.ndarray:
    """GLS coefficient (X'B'Omega^{-1}BX)^{-1} X'B'Omega^{-1}By."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.shape != (data.n,):
        raise DimensionError(f"sigma2 has shape {sigma2.shape}, expected ({data.n},)")
    if sigma2.min() <= 0 or not np.all(np.isfinite(sigma2)):
        raise ValueError("sigma2 must be finite and strictly positive")
    root = np.sqrt(sigma2)
    By = (data.y - lam * data.w.lag(data.y)) / root
    BX = (data.X - lam * data.w.lag(data.X)) / root[:, None]
    coef, _, rank, _ = np.linalg.lstsq(BX, By, rcond=None)
    if rank < data.k:
        raise ValueError("filtered design B X is rank deficient")
    return coef


class _LambdaProfile:
    """Concentrated likelihood in lam with Omega held fixed.

    Precomputes the spatial lags of y and X once so each evaluation
    costs one small least-squares solve plus an O(n) determinant.
    """

    def __init__(self, data: ModelData, sigma2):
        sigma2 = np.asarray(sigma2, dtype=float)
        if sigma2.shape != (data.n,):
            raise DimensionError(
                f"sigma2 has shape {sigma2.shape}, expected ({data.n},)"
            )
        if sigma2.min() <= 0 or not np.all(np.isfinite(sigma2)):
            raise ValueError("sigma2 must be finite and strictly positive")
        self.data = data
        root = np.sqrt(sigma2)
        self.yw = data.y / root
        self.Xw = data.X / root[:, None]
        self.Wyw = data.w.lag(data.y) / root
        self.WXw = data.w.lag(data.X) / root[:, None]
        self.const = -0.5 * data.n * _LOG_2PI - 0.5 * log_det_omega(sigma2)
        self._use_eigen = data.w.n <= DENSE_EIGEN_LIMIT
        if self._use_eigen:
            self._ev = data.w.eigenvalues()

    def beta(self, lam: float) -> np.ndarray:
        By = self.yw - lam * self.Wyw
        BX = self.Xw - lam * self.WXw
        coef, _, rank, _ = np.linalg.lstsq(BX, By, rcond=None)
        if rank < self.data.k:
            raise ValueError("filtered design B X is rank deficient")
        return coef

    def value(self, lam: float) -> float:
        By = self.yw - lam * self.Wyw
        BX = self.Xw - lam * self.WXw
        coef, _, _, _ = np.linalg.lstsq(BX, By, rcond=None)
        resid = By - BX @ coef
        if self._use_eigen:
            vals = 1.0 - lam * self._ev
            if vals.min() <= 0.0:
                return -np.inf
            ld = float(np.sum(np.log(vals)))
        else:
            ld = log_det_B(self.data.w, lam, method="lu")
        return self.const + ld - 0.5 * float(resid @ resid)


def concentrated_loglik(data: ModelData, lam: float, sigma2) -> float:
    """Likelihood at (beta_gls(lam), lam) with Omega = diag(sigma2) fixed."""
    lam = float(lam)
    if abs(lam) >= 1.0:
        raise ValueError(f"lam must satisfy |lam| < 1, got {lam!r}")
    return _LambdaProfile(data, sigma2).value(lam)


def _maximize_scalar(fn, lo: float, hi: float, grid_points: int, xatol: float,
                     extra=()):
    """Grid scan then bounded refinement; returns the best point seen."""
    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([fn(g) for g in grid])
    i = int(np.argmax(vals))
    candidates = [(vals[i], float(grid[i]))]
    res = minimize_scalar(
        lambda t: -fn(t),
        bounds=(grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]),
        method="bounded",
        options={"xatol": xatol},
    )
    if res.success:
        candidates.append((float(-res.fun), float(res.x)))
    else:
        warnings.warn(
            "scalar optimizer failed; falling back to the grid-scan best",
            RuntimeWarning,
        )
    for x in extra:
        candidates.append((fn(x), float(x)))
    best_val, best_x = max(candidates, key=lambda t: t[0])
    return best_x, best_val


def maximize_lambda(data: ModelData, sigma2, *, bound: float = LAMBDA_BOUND,
                    grid_points: int = 17, xatol: float = 1e-8,
                    current: float | None = None) -> float:
    """Maximize the concentrated likelihood over lam in (-bound, bound).

    A coarse grid scan brackets the optimum and Brent refines it.  When
    ``current`` is given the returned value is never worse than it, so
    repeated calls inside the outer loop cannot decrease the likelihood.
    """
    profile = _LambdaProfile(data, sigma2)
    extra = () if current is None else (float(current),)
    lam, _ = _maximize_scalar(profile.value, -bound, bound, grid_points, xatol, extra)
    return lam


def _trace_Binv_W(w: WeightMatrix, lam: float) -> float:
    """tr(B^{-1} W) via the spectrum: sum omega_i / (1 - lam omega_i)."""
    ev = w.eigenvalues()
    return float(np.sum(ev / (1.0 - lam * ev)))


def scores(data: ModelData, beta, alpha, lam: float):
    """Analytic score vector, split as (beta part, lam part, alpha part)."""
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    sigma2 = np.exp(data.Z @ alpha)
    u = data.y - data.X @ beta
    Wu = data.w.lag(u)
    Bu = u - lam * Wu
    BX = data.X - lam * data.w.lag(data.X)
    g_beta = BX.T @ (Bu / sigma2)
    g_lam = float((Wu / sigma2) @ Bu) - _trace_Binv_W(data.w, lam)
    d = Bu * Bu / sigma2
    g_alpha = 0.5 * (data.Z.T @ (d - 1.0))
    return g_beta, g_lam, g_alpha


def _filtered(data: ModelData, lam: float):
    By = data.y - lam * data.w.lag(data.y)
    BX = data.X - lam * data.w.lag(data.X)
    return By, BX


def fit(data: ModelData, tol_lambda: float = 1e-6, max_outer: int = 50, *,
        lambda_fixed: float | None = None, inner_tol: float = 1e-8,
        inner_max_iter: int = 100) -> FitResult:
    """Maximum-likelihood fit of the heteroskedastic SEM.

    The algorithm: (1) joint mean-variance fit on the raw data gives a
    first Omega; (2) maximize the concentrated likelihood over lam;
    (3) refit the joint model on the filtered data (By, BX); (4) repeat
    the lam search and the refit until lam moves less than
    ``tol_lambda``; (5) one final joint fit at the settled lam.

    ``lambda_fixed`` pins lam instead of estimating it; with
    ``lambda_fixed=0`` the result coincides with the plain joint fit.
    """
    inner = fit_joint(data.y, data.X, data.Z, tol=inner_tol, max_iter=inner_max_iter)

    if lambda_fixed is not None:
        lam = float(lambda_fixed)
        if abs(lam) >= 1.0:
            raise ValueError(f"lambda_fixed must satisfy |lam| < 1, got {lam!r}")
        if lam != 0.0:
            By, BX = _filtered(data, lam)
            inner = fit_joint(By, BX, data.Z, tol=inner_tol,
                              max_iter=inner_max_iter, alpha0=inner.alpha)
        ll = inner.loglik + log_det_B(data.w, lam)
        return FitResult(
            beta=inner.beta, alpha=inner.alpha, lam=lam, sigma2=inner.sigma2,
            loglik=ll, outer_iterations=0, converged=inner.converged,
            lambda_trace=[lam], loglik_trace=[ll],
        )

    lam = maximize_lambda(data, inner.sigma2)
    trace = [lam]
    ll_trace: list[float] = []
    alpha_prev = inner.alpha
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        By, BX = _filtered(data, lam)
        inner = fit_joint(By, BX, data.Z, tol=inner_tol,
                          max_iter=inner_max_iter, alpha0=alpha_prev)
        alpha_prev = inner.alpha
        ll_trace.append(inner.loglik + log_det_B(data.w, lam))
        lam_new = maximize_lambda(data, inner.sigma2, current=lam)
        trace.append(lam_new)
        if abs(lam_new - lam) < tol_lambda:
            lam = lam_new
            converged = True
            break
        lam = lam_new

    By, BX = _filtered(data, lam)
    final = fit_joint(By, BX, data.Z, tol=inner_tol,
                      max_iter=inner_max_iter, alpha0=alpha_prev)
    ll = final.loglik + log_det_B(data.w, lam)
    ll_trace.append(ll)
    return FitResult(
        beta=final.beta, alpha=final.alpha, lam=lam, sigma2=final.sigma2,
        loglik=ll, outer_iterations=outer, converged=converged and final.converged,
        lambda_trace=trace, loglik_trace=ll_trace,
    )
