"""Command-line interface: fit, simulate, moran.

All subcommands are deterministic given their flags (plus seed where
one applies).  Errors print one line to stderr with a stable prefix
(ERR_PARSE, ERR_DIM, ERR_CONV) and exit nonzero; exit code 0 means the
command completed without error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import fit_ols, fit_sar, fit_sem_homoscedastic, sar_covariance
from .diagnostics import moran_scatter, morans_i
from .errors import ConvergenceError, DimensionError, ParseError
from .inference import information_matrix, standard_errors
from .model import FitResult, ModelData, fit
from .montecarlo import ESTIMATORS, SimConfig, run_pooled
from .weights import WeightMatrix, load_weights, row_standardize

REPORT_SCHEMA = 1

__all__ = ["FitReport", "main", "cmd_fit", "cmd_simulate", "cmd_moran"]


@dataclass
class FitReport:
    """Machine-readable record of one model fit."""

    model: str
    n: int
    columns: dict
    coefficients: list
    loglik: float
    mse: float
    converged: bool
    iterations: int
    variance_scale: str
    notes: list = field(default_factory=list)
    schema: int = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ParseError(
                f"unsupported report schema {d.get('schema')!r}; expected {REPORT_SCHEMA}"
            )
        fields = {k: d[k] for k in ("model", "n", "columns", "coefficients",
                                    "loglik", "mse", "converged", "iterations",
                                    "variance_scale", "notes", "schema")}
        return cls(**fields)

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid report JSON: {exc}") from None


def _coef_row(name, estimate, se):
    if se is None or not np.isfinite(se) or se <= 0:
        return {"name": name, "estimate": float(estimate), "se": None,
                "z": None, "p": None}
    from scipy import stats

    z = float(estimate) / float(se)
    return {"name": name, "estimate": float(estimate), "se": float(se),
            "z": z, "p": float(2.0 * stats.norm.sf(abs(z)))}


def _load_table(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file")
    except Exception as exc:
        raise ParseError(f"{path}: {exc}")
    if df.empty:
        raise ParseError(f"{path}: no data rows")
    return df


def _numeric_columns(df: pd.DataFrame, names, path):
    cols = []
    for name in names:
        if name not in df.columns:
            raise ParseError(
                f"{path}: column {name!r} not found; available: "
                + ", ".join(df.columns)
            )
        col = pd.to_numeric(df[name], errors="coerce")
        bad = col.index[col.isna()]
        if len(bad):
            # +2: header line plus 1-based indexing
            lines = ", ".join(str(i + 2) for i in bad[:5])
            raise ParseError(
                f"{path}: column {name!r} has missing or non-numeric values "
                f"on line(s) {lines}"
            )
        cols.append(col.to_numpy(dtype=float))
    return np.column_stack(cols) if cols else np.empty((len(df), 0))


def _split_cols(spec: str | None):
    if not spec:
        return []
    return [c.strip() for c in spec.split(",") if c.strip()]


def _load_weights_arg(args, n: int) -> WeightMatrix:
    w = load_weights(args.weights, format=args.weights_format)
    if w.n != n:
        raise DimensionError(
            f"weights describe {w.n} units but the data has {n} rows"
        )
    if args.row_standardize == "true":
        w = row_standardize(w)
    return w


def _innovations(kind: str, y, X, w, beta, spatial) -> np.ndarray:
    e = y - X @ beta
    if kind in ("proposed", "ho-sem"):
        return e - spatial * w.lag(e)
    if kind == "sar":
        return (y - spatial * w.lag(y)) - X @ beta
    return e


def _fit_proposed(data: ModelData, x_names, z_names, scale: str):
    res = fit(data)
    info = information_matrix(data, res)
    se = standard_errors(info)
    notes = []
    if not info.positive_definite:
        notes.append("information matrix not positive definite; "
                     "pseudo-inverse standard errors")
    k, p = data.k, data.p
    names = ([f"beta[{c}]" for c in x_names] + ["lambda"]
             + [f"alpha[{c}]" for c in z_names])
    estimates = np.concatenate([res.beta, [res.lam], res.alpha])
    ses = se.copy()
    if scale == "sd":
        estimates[k + 1:] = estimates[k + 1:] / 2.0
        ses[k + 1:] = ses[k + 1:] / 2.0
    coefficients = [
        _coef_row(name, est, s if np.isfinite(s) else None)
        for name, est, s in zip(names, estimates, ses)
    ]
    return res, coefficients, notes


def _fit_baseline(kind: str, data: ModelData, x_names, scale: str):
    y, X, w = data.y, data.X, data.w
    if kind == "ho-sem":
        base = fit_sem_homoscedastic(y, X, w)
        Z1 = np.ones((data.n, 1))
        pinned = FitResult(
            beta=base.beta, alpha=np.array([np.log(base.sigma2_pooled)]),
            lam=base.spatial_param,
            sigma2=np.full(data.n, base.sigma2_pooled),
            loglik=base.loglik, outer_iterations=0, converged=base.converged,
        )
        hom = ModelData(y=y, X=X, Z=Z1, w=w)
        info = information_matrix(hom, pinned)
        se = standard_errors(info)
        names = [f"beta[{c}]" for c in x_names] + ["lambda", "alpha[const]"]
        estimates = np.concatenate([base.beta, [base.spatial_param],
                                    pinned.alpha])
        ses = se.copy()
        if scale == "sd":
            estimates[-1] /= 2.0
            ses[-1] /= 2.0
        coefficients = [_coef_row(nm, est, s if np.isfinite(s) else None)
                        for nm, est, s in zip(names, estimates, ses)]
        return base, coefficients
    if kind == "sar":
        base = fit_sar(y, X, w)
        cov = sar_covariance(y, X, w, base)
        se = np.sqrt(np.diag(cov))
        names = [f"beta[{c}]" for c in x_names] + ["rho"]
        estimates = np.concatenate([base.beta, [base.spatial_param]])
        coefficients = [_coef_row(nm, est, s)
                        for nm, est, s in zip(names, estimates, se)]
        return base, coefficients
    if kind == "ols":
        base = fit_ols(y, X)
        cov = base.sigma2_pooled * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.diag(cov))
        names = [f"beta[{c}]" for c in x_names]
        coefficients = [_coef_row(nm, est, s)
                        for nm, est, s in zip(names, base.beta, se)]
        return base, coefficients
    raise ParseError(f"unknown estimator {kind!r}")


def cmd_fit(args) -> FitReport:
    df = _load_table(args.data)
    x_names = _split_cols(args.x)
    z_names = _split_cols(args.z)
    y = _numeric_columns(df, [args.y], args.data).ravel()
    X = np.column_stack([np.ones(len(df)),
                         _numeric_columns(df, x_names, args.data)])
    if z_names:
        Z = np.column_stack([np.ones(len(df)),
                             _numeric_columns(df, z_names, args.data)])
    else:
        Z = np.ones((len(df), 1))
    w = _load_weights_arg(args, len(df))
    data = ModelData(y=y, X=X, Z=Z, w=w)
    x_full = ["const"] + x_names
    z_full = ["const"] + z_names
    columns = {"y": args.y, "x": x_full, "z": z_full}

    notes = []
    if args.estimator == "proposed":
        res, coefficients, notes = _fit_proposed(data, x_full, z_full,
                                                 args.variance_scale)
        innov = _innovations("proposed", y, X, w, res.beta, res.lam)
        loglik = res.loglik
        converged = res.converged
        iterations = res.outer_iterations
    else:
        base, coefficients = _fit_baseline(args.estimator, data, x_full,
                                           args.variance_scale)
        innov = _innovations(base.kind, y, X, w, base.beta, base.spatial_param)
        loglik = base.loglik
        converged = base.converged
        iterations = 1
    report = FitReport(
        model=args.estimator, n=len(df), columns=columns,
        coefficients=coefficients, loglik=float(loglik),
        mse=float(np.mean(innov ** 2)), converged=bool(converged),
        iterations=int(iterations), variance_scale=args.variance_scale,
        notes=notes,
    )
    _print_report(report)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return report


def _print_report(report: FitReport) -> None:
    print(f"model: {report.model}   n = {report.n}   "
          f"log-likelihood = {report.loglik:.4f}   MSE = {report.mse:.4f}")
    if not report.converged:
        print("WARNING: fit did not converge")
    rows = []
    for c in report.coefficients:
        rows.append({
            "parameter": c["name"],
            "estimate": c["estimate"],
            "se": c["se"] if c["se"] is not None else np.nan,
            "z": c["z"] if c["z"] is not None else np.nan,
            "p": c["p"] if c["p"] is not None else np.nan,
        })
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    for note in report.notes:
        print(f"note: {note}")


def _parse_grid(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ParseError(f"--grid expects ROWSxCOLS, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"--grid expects integers, got {text!r}")


def _parse_floats(text: str, flag: str, count: int | None = None):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ParseError(f"{flag} expects comma-separated numbers, got {text!r}")
    if count is not None and len(vals) != count:
        raise ParseError(f"{flag} expects {count} values, got {len(vals)}")
    return tuple(vals)


def _config_cells(cfg: dict):
    """Expand a simulate config (single cell or sweep) into design cells.

    Returns (groups, replications, seed, estimators) where groups is a
    list of (label, [SimConfig, ...]) pooled together per label.
    """
    def need(key, types, what):
        if key not in cfg:
            raise ParseError(f"config field {key!r} is required ({what})")
        val = cfg[key]
        if not isinstance(val, types):
            raise ParseError(f"config field {key!r}: expected {what}")
        return val

    seed = need("seed", int, "a nonnegative integer")
    estimators = tuple(cfg.get("estimators", ["proposed"]))
    beta = tuple(cfg.get("beta", (1.0, -1.0, 0.5)))

    def cell(grid, lam, alpha, reps):
        try:
            return SimConfig(
                grid_rows=int(grid[0]), grid_cols=int(grid[1]),
                lambda_true=float(lam), beta_true=beta,
                alpha_true=tuple(alpha), replications=reps, seed=seed,
                estimators=estimators,
            )
        except (ValueError, TypeError, IndexError) as exc:
            raise ParseError(f"config: {exc}")

    if "grids" in cfg:
        grids = need("grids", list, "a list of [rows, cols] pairs")
        lambdas = need("lambdas", list, "a list of lambda values")
        alphas = need("alphas", list, "a list of alpha triples")
        reps_per_cell = need("replications_per_cell", int, "a positive integer")
        groups = []
        for grid in grids:
            cells = [cell(grid, lam, alpha, reps_per_cell)
                     for lam, alpha in product(lambdas, alphas)]
            label = f"{int(grid[0]) * int(grid[1])}"
            groups.append((label, cells, reps_per_cell * len(cells)))
        return groups, seed, estimators
    grid = need("grid", list, "a [rows, cols] pair")
    lam = need("lambda", (int, float), "a number in (-1, 1)")
    reps = need("replications", int, "a positive integer")
    alpha = tuple(cfg.get("alpha", (0.0, 0.0, 0.0)))
    c = cell(grid, lam, alpha, reps)
    return [(f"{c.n}", [c], reps)], seed, estimators


def cmd_simulate(args) -> int:
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ParseError(f"{args.config}: no such file")
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.config}: invalid JSON: {exc}")
    else:
        for flag, value in (("--grid", args.grid), ("--lambda", args.lam),
                            ("--reps", args.reps), ("--seed", args.seed)):
            if value is None:
                raise ParseError(f"{flag} is required when --config is not given")
        rows, cols = _parse_grid(args.grid)
        cfg = {
            "grid": [rows, cols], "lambda": args.lam,
            "replications": args.reps, "seed": args.seed,
            "beta": _parse_floats(args.beta, "--beta", 3),
            "alpha": _parse_floats(args.alpha, "--alpha", 3),
            "estimators": _split_cols(args.estimators),
        }
    groups, seed, estimators = _config_cells(cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries, estimates, traces = [], [], []
    for label, cells, total_reps in groups:
        out = run_pooled(cells, total_reps, seed, estimators,
                         workers=args.workers)
        s = out.summary.copy()
        s.insert(0, "n", int(label))
        s = s.merge(out.convergence[["estimator", "rate"]], on="estimator")
        s = s.rename(columns={"rate": "convergence_rate"})
        summaries.append(s)
        e = out.estimates.copy()
        e.insert(0, "n", int(label))
        estimates.append(e)
        t = out.lambda_traces.copy()
        t.insert(0, "n", int(label))
        traces.append(t)
    summary = pd.concat(summaries, ignore_index=True)
    summary.to_csv(out_dir / "summary.csv", index=False)
    pd.concat(estimates, ignore_index=True).to_csv(
        out_dir / "estimates.csv", index=False)
    pd.concat(traces, ignore_index=True).to_csv(
        out_dir / "lambda_trace.csv", index=False)

    shaped = summary[summary["parameter"].str.startswith("beta")].pivot_table(
        index=["estimator", "n"], columns="parameter",
        values=["mean", "sd"], sort=False,
    )
    print(shaped.round(4).to_string())
    print(f"\nwrote {out_dir / 'summary.csv'}, {out_dir / 'estimates.csv'}, "
          f"{out_dir / 'lambda_trace.csv'}")
    return 0


def _residuals_from_report(args, df: pd.DataFrame, w: WeightMatrix) -> np.ndarray:
    report = FitReport.from_json(Path(args.residuals_of).read_text(encoding="utf-8"))
    cols = report.columns
    if report.n != len(df):
        raise DimensionError(
            f"report was fitted on {report.n} rows but the data has {len(df)}"
        )
    y = _numeric_columns(df, [cols["y"]], args.data).ravel()
    x_names = [c for c in cols["x"] if c != "const"]
    X = np.column_stack([np.ones(len(df)),
                         _numeric_columns(df, x_names, args.data)])
    by_name = {c["name"]: c["estimate"] for c in report.coefficients}
    try:
        beta = np.array([by_name[f"beta[{c}]"] for c in cols["x"]])
    except KeyError as exc:
        raise ParseError(f"report is missing coefficient {exc}")
    spatial = by_name.get("lambda", by_name.get("rho", 0.0))
    return _innovations(report.model, y, X, w, beta, spatial)


def cmd_moran(args) -> int:
    df = _load_table(args.data)
    w = _load_weights_arg(args, len(df))
    if (args.variable is None) == (args.residuals_of is None):
        raise ParseError("give exactly one of --variable or --residuals-of")
    if args.variable is not None:
        x = _numeric_columns(df, [args.variable], args.data).ravel()
        label = args.variable
    else:
        x = _residuals_from_report(args, df, w)
        label = f"residuals of {args.residuals_of}"
    res = morans_i(x, w, permutations=args.permutations, seed=args.seed)
    print(f"Moran's I of {label}")
    print(f"I = {res.I:.6f}   E[I] = {res.expectation:.6f}   "
          f"V[I] = {res.variance:.6g}")
    print(f"z = {res.z:.4f}   p (normal approximation) = {res.p_value:.6f}")
    if res.p_sim is not None:
        print(f"p ({res.permutations} permutations) = {res.p_sim:.6f}")
    if args.scatter:
        pairs = moran_scatter(x, w)
        pd.DataFrame(pairs, columns=["x_centered", "spatial_lag"]).to_csv(
            args.scatter, index=False)
        print(f"wrote scatter pairs to {args.scatter}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetsem",
        description="Spatial error models with regression-driven "
                    "heteroskedasticity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to CSV data")
    p_fit.add_argument("--data", required=True, help="CSV file with a header row")
    p_fit.add_argument("--y", required=True, help="response column")
    p_fit.add_argument("--x", required=True,
                       help="comma-separated mean covariates (intercept implicit)")
    p_fit.add_argument("--z", default=None,
                       help="comma-separated variance covariates "
                            "(default: intercept only)")
    p_fit.add_argument("--estimator", default="proposed",
                       choices=list(ESTIMATORS))
    p_fit.add_argument("--variance-scale", default="var", choices=["var", "sd"],
                       help="report the variance equation for ln sigma^2 "
                            "(var) or ln sigma (sd)")
    p_fit.add_argument("--out", default=None, help="write the JSON report here")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p_sim.add_argument("--config", default=None, help="JSON experiment config")
    p_sim.add_argument("--grid", default=None, help="ROWSxCOLS, e.g. 12x12")
    p_sim.add_argument("--lambda", dest="lam", type=float, default=None)
    p_sim.add_argument("--reps", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--beta", default="1,-1,0.5")
    p_sim.add_argument("--alpha", default="0,0,0")
    p_sim.add_argument("--estimators", default="proposed")
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.add_argument("--out-dir", default=".")

    p_mor = sub.add_parser("moran", help="Moran's I test")
    p_mor.add_argument("--data", required=True)
    p_mor.add_argument("--variable", default=None)
    p_mor.add_argument("--residuals-of", dest="residuals_of", default=None,
                       help="JSON fit report whose innovations are tested")
    p_mor.add_argument("--permutations", type=int, default=0)
    p_mor.add_argument("--seed", type=int, default=None)
    p_mor.add_argument("--scatter", default=None,
                       help="write Moran scatter pairs to this CSV")

    for p in (p_fit, p_mor):
        p.add_argument("--weights", required=True, help="weights CSV")
        p.add_argument("--weights-format", default="edges",
                       choices=["edges", "dense"])
        p.add_argument("--row-standardize", default="true",
                       choices=["true", "false"])
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            cmd_fit(args)
            return 0
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "moran":
            return cmd_moran(args)
        raise ParseError(f"unknown command {args.command!r}")
    except DimensionError as exc:
        print(f"ERR_DIM: {exc}", file=sys.stderr)
    except ConvergenceError as exc:
        print(f"ERR_CONV: {exc}", file=sys.stderr)
    except (ParseError, ValueError, OSError) as exc:
        print(f"ERR_PARSE: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
