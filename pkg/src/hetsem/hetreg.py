"""Joint mean-variance regression for independent normal data.

Model: y_i ~ N(x_i' beta, sigma_i^2) with ln sigma_i^2 = z_i' alpha.  The
mean and the log-variance are fitted jointly by maximum likelihood,
alternating weighted least squares for beta with a Fisher scoring step
for alpha.  Because the expected information for alpha is Z'Z / 2, the
scoring step reduces to an ordinary regression of the working response
z_i' alpha + (e_i^2 / sigma_i^2 - 1) on Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError

_LOG_2PI = float(np.log(2.0 * np.pi))

__all__ = ["JointFit", "fit_joint", "loglik_hetnormal"]


@dataclass
class JointFit:
    """Result of a joint mean-variance fit."""

    beta: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    loglik: float
    iterations: int
    converged: bool


def loglik_hetnormal(y, X, Z, beta, alpha) -> float:
    """Log-likelihood of independent heteroskedastic normal data."""
    y, X, Z = _check_arrays(y, X, Z)
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if beta.shape != (X.shape[1],):
        raise DimensionError(f"beta has shape {beta.shape}, expected ({X.shape[1]},)")
    if alpha.shape != (Z.shape[1],):
        raise DimensionError(f"alpha has shape {alpha.shape}, expected ({Z.shape[1]},)")
    return _loglik(y, X, Z, beta, alpha)


def _loglik(y, X, Z, beta, alpha) -> float:
    log_s2 = Z @ alpha
    with np.errstate(over="ignore"):
        sigma2 = np.exp(log_s2)
    if not np.all(np.isfinite(sigma2)) or sigma2.min() <= 0.0:
        return -np.inf
    e = y - X @ beta
    n = y.size
    val = -0.5 * n * _LOG_2PI - 0.5 * log_s2.sum() - 0.5 * np.sum(e * e / sigma2)
    return float(val) if np.isfinite(val) else -np.inf


def fit_joint(y, X, Z, tol: float = 1e-8, max_iter: int = 100, *, alpha0=None) -> JointFit:
    """Maximize the heteroskedastic normal likelihood over (beta, alpha).

    Parameters
    ----------
    y, X, Z : response (n,), mean design (n, k), log-variance design (n, p).
        Both designs must have full column rank.
    tol : relative log-likelihood change at which iteration stops.
    max_iter : cap on scoring iterations.
    alpha0 : optional extra starting value for alpha; the best of the
        default starts and this one is used.

    Beta starts at OLS and alpha at a log-squared-residual regression.
    Each iteration updates beta by weighted least squares and alpha by
    one Fisher scoring step, halving the step (at most 10 times) if it
    would decrease the likelihood.  Iteration stops once the relative
    likelihood change drops below ``tol`` and the alpha score is
    numerically zero; a final weighted least squares pass then zeroes
    the beta score.
    """
    y, X, Z = _check_arrays(y, X, Z)
    n, k = X.shape
    if np.linalg.matrix_rank(X) < k:
        raise ValueError("mean design X is rank deficient")
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise ValueError("variance design Z is rank deficient")

    beta = _lstsq(X, y)
    e = y - X @ beta
    var_y = float(np.var(y))
    floor = 1e-10 * var_y if var_y > 0 else 1e-10
    candidates = [_lstsq(Z, np.log(np.maximum(e * e, floor)))]
    pooled = _pooled_alpha(Z, float(np.mean(e * e)))
    if pooled is not None:
        candidates.append(pooled)
    if alpha0 is not None:
        candidates.append(np.asarray(alpha0, dtype=float))
    scored = [(_loglik(y, X, Z, beta, a), a) for a in candidates]
    ll, alpha = max(scored, key=lambda t: t[0])
    if not np.isfinite(ll):
        raise ConvergenceError(
            "could not evaluate the likelihood at any starting value; "
            "rescale y, X, or Z"
        )

    best_ll, best_beta, best_alpha = ll, beta, alpha
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sigma2 = np.exp(Z @ alpha)
        beta = _wls(y, X, sigma2)
        e = y - X @ beta
        ll_ref = _loglik(y, X, Z, beta, alpha)

        d = e * e / sigma2
        target = Z @ alpha + (d - 1.0)
        proposal = _lstsq(Z, target)
        step = proposal - alpha
        scale = 1.0
        alpha_new, ll_new = alpha, ll_ref
        for _ in range(11):
            trial = alpha + scale * step
            ll_trial = _loglik(y, X, Z, beta, trial)
            if ll_trial >= ll_ref - 1e-12 * (abs(ll_ref) + 1.0):
                alpha_new, ll_new = trial, ll_trial
                break
            scale *= 0.5
        alpha = alpha_new

        if ll_new > best_ll:
            best_ll, best_beta, best_alpha = ll_new, beta, alpha
        rel_change = abs(ll_new - ll) / (abs(ll) + 1.0)
        d_new = e * e / np.exp(Z @ alpha)
        score_alpha = 0.5 * np.abs(Z.T @ (d_new - 1.0)).max()
        ll = ll_new
        if rel_change < tol and score_alpha < 1e-7:
            converged = True
            break

    # Final pass: beta solves weighted least squares at the returned
    # alpha exactly, so the mean score vanishes to machine precision.
    alpha = best_alpha
    sigma2 = np.exp(Z @ alpha)
    beta = _wls(y, X, sigma2)
    ll = _loglik(y, X, Z, beta, alpha)
    if ll < best_ll - 1e-12 * (abs(best_ll) + 1.0):
        beta, ll = best_beta, best_ll
    return JointFit(
        beta=beta,
        alpha=alpha,
        sigma2=sigma2,
        loglik=float(ll),
        iterations=iterations,
        converged=converged,
    )


def _check_arrays(y, X, Z):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim != 2 or Z.ndim != 2:
        raise DimensionError("X and Z must be two-dimensional")
    n = y.size
    if X.shape[0] != n or Z.shape[0] != n:
        raise DimensionError(
            f"row counts disagree: y has {n}, X has {X.shape[0]}, Z has {Z.shape[0]}"
        )
    if n <= X.shape[1] or n <= Z.shape[1]:
        raise DimensionError("need more observations than parameters")
    for name, arr in (("y", y), ("X", X), ("Z", Z)):
        if not np.all(np.isfinite(arr)):
            raise ConvergenceError(
                f"{name} contains non-finite values; rescale or clean the data"
            )
    return y, X, Z


def _lstsq(A, b):
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        raise ValueError("design became rank deficient during fitting")
    return coef


def _wls(y, X, sigma2):
    root = np.sqrt(sigma2)
    return _lstsq(X / root[:, None], y / root)


def _pooled_alpha(Z, mean_sq):
    """Alpha giving a constant variance, when Z has a constant column."""
    if mean_sq <= 0:
        return None
    for j in range(Z.shape[1]):
        col = Z[:, j]
        if col[0] != 0 and np.ptp(col) == 0:
            alpha = np.zeros(Z.shape[1])
            alpha[j] = np.log(mean_sq) / col[0]
            return alpha
    return None
