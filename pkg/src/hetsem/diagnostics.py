"""Moran's I spatial autocorrelation statistic and scatter data.

I = (n / S0) * (x~' W x~) / (x~' x~) with x~ = x - mean(x) and
S0 = sum of all weights.  Inference uses the closed-form moments of I
under the normality null:

    E[I] = -1 / (n - 1)
    V[I] = (n^2 S1 - n S2 + 3 S0^2) / ((n - 1)(n + 1) S0^2) - E[I]^2

where S1 = (1/2) sum_ij (w_ij + w_ji)^2 and S2 = sum_i (row_i + col_i)^2
with row_i and col_i the i-th row and column sums of W.  A permutation
test is available for small samples where the normal approximation is
doubtful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionError
from .weights import WeightMatrix

__all__ = ["MoranResult", "morans_i", "moran_scatter"]


@dataclass
class MoranResult:
    """Moran's I with its null moments and test outcome.

    ``p_value`` is the two-sided normal-approximation p.  When the
    permutation test is requested, ``p_sim`` holds the pseudo p-value
    over ``permutations`` random relabelings (folded one-tailed, as is
    conventional), otherwise it is None.
    """

    I: float
    expectation: float
    variance: float
    z: float
    p_value: float
    p_sim: float | None = None
    permutations: int = 0


def _centered(x, w: WeightMatrix):
    x = np.asarray(x, dtype=float).ravel()
    if not isinstance(w, WeightMatrix):
        raise TypeError("w must be a WeightMatrix")
    if x.size != w.n:
        raise DimensionError(f"x has {x.size} entries but W is {w.n} x {w.n}")
    if x.size < 3:
        raise ValueError("Moran's I needs at least 3 observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom <= 0.0:
        raise ValueError("x has zero variance; Moran's I is undefined")
    return xc, denom


def morans_i(x, w: WeightMatrix, permutations: int = 0,
             seed: int | None = None) -> MoranResult:
    """Moran's I of x under w, with normality-null inference.

    Set ``permutations`` (999 is customary) to add a permutation
    pseudo p-value computed with the given seed.
    """
    xc, denom = _centered(x, w)
    n = w.n
    s0 = float(w.matrix.sum())
    scale = n / s0
    i_obs = scale * float(xc @ w.lag(xc)) / denom

    sym = w.matrix + w.matrix.T
    s1 = 0.5 * float((sym.multiply(sym)).sum())
    totals = w.row_sums() + np.asarray(w.matrix.sum(axis=0)).ravel()
    s2 = float(np.sum(totals ** 2))
    e_i = -1.0 / (n - 1)
    v_i = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / ((n - 1) * (n + 1) * s0 * s0)
    v_i -= e_i * e_i
    z = (i_obs - e_i) / np.sqrt(v_i)
    p = 2.0 * float(stats.norm.sf(abs(z)))

    p_sim = None
    if permutations > 0:
        rng = np.random.default_rng(seed)
        count_ge = 0
        for _ in range(permutations):
            xp = rng.permutation(xc)
            i_p = scale * float(xp @ w.lag(xp)) / denom
            if i_p >= i_obs:
                count_ge += 1
        tail = min(count_ge, permutations - count_ge)
        p_sim = (tail + 1.0) / (permutations + 1.0)
    return MoranResult(I=float(i_obs), expectation=e_i, variance=float(v_i),
                       z=float(z), p_value=p, p_sim=p_sim,
                       permutations=int(permutations))


def moran_scatter(x, w: WeightMatrix) -> np.ndarray:
    """Pairs (x~_i, (W x~)_i) for the Moran scatter plot.

    For row-standardized W the OLS slope through these pairs equals
    Moran's I.
    """
    xc, _ = _centered(x, w)
    return np.column_stack([xc, w.lag(xc)])
