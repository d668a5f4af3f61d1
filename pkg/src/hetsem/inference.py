"""Information-matrix inference for the heteroskedastic SEM.

The expected information is block diagonal between beta and (lam,
alpha).  With B = I - lam W, G = W B^{-1}, Omega = diag(sigma_i^2), and
H_p = diag(z_ip sigma_i^2):

    I_bb   = (BX)' Omega^{-1} (BX)
    I_ll   = tr(G^2) + tr(Omega G' Omega^{-1} G)
    I_la_p = tr(Omega^{-1} H_p G) = sum_i z_ip G_ii
    I_aa   = Z'Z / 2

Parameters are ordered (beta, lam, alpha) throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .model import FitResult, ModelData

__all__ = [
    "InformationMatrix",
    "h_p_diag",
    "information_matrix",
    "standard_errors",
    "wald_tests",
]


@dataclass
class InformationMatrix:
    """Expected information at a fit, with its assembled full matrix."""

    beta_beta: np.ndarray
    lambda_lambda: float
    lambda_alpha: np.ndarray
    alpha_alpha: np.ndarray
    full: np.ndarray
    positive_definite: bool


def h_p_diag(Z, alpha, p: int) -> np.ndarray:
    """Diagonal of dOmega/dalpha_p, namely z_ip * sigma_i^2."""
    Z = np.asarray(Z, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if not 0 <= p < Z.shape[1]:
        raise ValueError(f"column index {p} outside the variance design")
    return Z[:, p] * np.exp(Z @ alpha)


def information_matrix(data: ModelData, fit: FitResult) -> InformationMatrix:
    """Expected information at the fitted (beta, lam, alpha)."""
    if not fit.converged:
        warnings.warn(
            "information matrix evaluated at a fit that did not converge",
            RuntimeWarning,
        )
    lam = fit.lam
    sigma2 = fit.sigma2
    n, k, p = data.n, data.k, data.p

    BX = data.X - lam * data.w.lag(data.X)
    i_bb = BX.T @ (BX / sigma2[:, None])

    Wd = data.w.toarray()
    Bd = np.eye(n) - lam * Wd
    # G = W B^{-1}, solved column-wise from B' G' = W'.
    G = np.linalg.solve(Bd.T, Wd.T).T
    ratio = sigma2[None, :] / sigma2[:, None]
    i_ll = float(np.sum(G * G.T) + np.sum(G * G * ratio))
    i_la = data.Z.T @ np.diag(G)
    i_aa = 0.5 * (data.Z.T @ data.Z)

    full = np.zeros((k + 1 + p, k + 1 + p))
    full[:k, :k] = i_bb
    full[k, k] = i_ll
    full[k, k + 1:] = i_la
    full[k + 1:, k] = i_la
    full[k + 1:, k + 1:] = i_aa

    try:
        np.linalg.cholesky(full)
        pd_flag = True
    except np.linalg.LinAlgError:
        pd_flag = False
    return InformationMatrix(
        beta_beta=i_bb,
        lambda_lambda=i_ll,
        lambda_alpha=i_la,
        alpha_alpha=i_aa,
        full=full,
        positive_definite=pd_flag,
    )


def covariance(info: InformationMatrix) -> np.ndarray:
    """Inverse information; falls back to a pseudo-inverse when singular."""
    if info.positive_definite:
        return np.linalg.inv(info.full)
    warnings.warn(
        "information matrix is not positive definite; standard errors use "
        "a pseudo-inverse and should be read with caution",
        RuntimeWarning,
    )
    return np.linalg.pinv(info.full)


def standard_errors(info: InformationMatrix) -> np.ndarray:
    """Asymptotic standard errors ordered (beta, lam, alpha)."""
    var = np.diag(covariance(info)).copy()
    var[var < 0] = np.nan
    return np.sqrt(var)


def wald_tests(fit: FitResult, info: InformationMatrix,
               x_names=None, z_names=None) -> pd.DataFrame:
    """Wald z-statistics and two-sided p-values for every parameter."""
    k = fit.beta.size
    p = fit.alpha.size
    if x_names is None:
        x_names = [f"beta_{j}" for j in range(k)]
    else:
        x_names = [f"beta[{c}]" for c in x_names]
    if z_names is None:
        z_names = [f"alpha_{j}" for j in range(p)]
    else:
        z_names = [f"alpha[{c}]" for c in z_names]
    names = list(x_names) + ["lambda"] + list(z_names)
    estimates = np.concatenate([fit.beta, [fit.lam], fit.alpha])
    se = standard_errors(info)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = estimates / se
        pvals = 2.0 * stats.norm.sf(np.abs(z))
    return pd.DataFrame(
        {"parameter": names, "estimate": estimates, "se": se, "z": z, "p": pvals}
    )
