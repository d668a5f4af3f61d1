"""Spatial error models with regression-driven heteroskedasticity.

Estimates y = Xb + u, u = lam*W*u + eps, eps_i ~ N(0, exp(z_i'a)) by
maximum likelihood, jointly modeling the mean and the log-variance.
Ships the homoscedastic SEM, SAR and OLS baselines, expected-information
inference, Moran's I diagnostics and a Monte Carlo harness.
"""

from .baselines import (
    BaselineFit,
    fit_ols,
    fit_sar,
    fit_sem_homoscedastic,
    sar_covariance,
)
from .diagnostics import MoranResult, moran_scatter, morans_i
from .errors import ConvergenceError, DimensionError, HetsemError, ParseError
from .hetreg import JointFit, fit_joint, loglik_hetnormal
from .inference import (
    InformationMatrix,
    covariance,
    information_matrix,
    standard_errors,
    wald_tests,
)
from .model import (
    FitResult,
    ModelData,
    beta_gls,
    concentrated_loglik,
    fit,
    log_det_B,
    log_det_omega,
    loglik_hetsem,
    maximize_lambda,
    scores,
)
from .montecarlo import (
    McSummary,
    SimConfig,
    bias_bound,
    generate_sample,
    run_monte_carlo,
    run_pooled,
)
from .weights import (
    WeightMatrix,
    build_rook_grid,
    eigenvalues,
    load_weights,
    row_standardize,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineFit",
    "ConvergenceError",
    "DimensionError",
    "FitResult",
    "HetsemError",
    "InformationMatrix",
    "JointFit",
    "McSummary",
    "ModelData",
    "MoranResult",
    "ParseError",
    "SimConfig",
    "WeightMatrix",
    "beta_gls",
    "bias_bound",
    "build_rook_grid",
    "concentrated_loglik",
    "covariance",
    "eigenvalues",
    "fit",
    "fit_joint",
    "fit_ols",
    "fit_sar",
    "fit_sem_homoscedastic",
    "generate_sample",
    "information_matrix",
    "load_weights",
    "log_det_B",
    "log_det_omega",
    "loglik_hetnormal",
    "loglik_hetsem",
    "maximize_lambda",
    "moran_scatter",
    "morans_i",
    "row_standardize",
    "run_monte_carlo",
    "run_pooled",
    "sar_covariance",
    "scores",
    "standard_errors",
    "wald_tests",
    "__version__",
]
