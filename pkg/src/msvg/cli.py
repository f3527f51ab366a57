"""Command-line front end: fit, grid, simulate, summary.

All numeric output is written with repr / ``%.17g`` formatting, so repeated
runs with identical inputs produce byte-identical files.  Exit codes:
0 success, 1 numerical failure, 2 usage or schema error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .distribution import ArMsvgParams, CenterGuard, MsvgParams, density_grid, moments
from .ecm import ALGORITHMS, FitConfig, fit
from .inference import (
    aicc,
    flatten_params,
    n_free_params,
    observed_info,
    param_labels,
    standard_errors,
)
from .returns import ReturnsPanel, load_returns, load_values, summary_statistics
from .study import StudySpec, delta_sweep, run_study, skew_sweep


class SpecError(ValueError):
    """Schema violation in a user-supplied file."""


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _load_panel(args) -> ReturnsPanel:
    columns = args.columns.split(",") if args.columns else None
    if args.values:
        return load_values(args.data, date_column=args.date_column,
                           value_columns=columns)
    return load_returns(args.data, date_column=args.date_column,
                        price_columns=columns, log_returns=True)


def _params_to_json(params) -> dict:
    if isinstance(params, ArMsvgParams):
        return {"beta0": params.beta0.tolist(), "beta1": params.beta1.tolist(),
                "sigma": params.sigma.tolist(), "gamma": params.gamma.tolist(),
                "nu": params.nu}
    return {"mu": params.mu.tolist(), "sigma": params.sigma.tolist(),
            "gamma": params.gamma.tolist(), "nu": params.nu}


def _params_from_json(blob: dict):
    try:
        if "beta0" in blob:
            return ArMsvgParams(beta0=np.asarray(blob["beta0"], dtype=float),
                                beta1=np.asarray(blob["beta1"], dtype=float),
                                sigma=np.asarray(blob["sigma"], dtype=float),
                                gamma=np.asarray(blob["gamma"], dtype=float),
                                nu=float(blob["nu"]))
        return MsvgParams(mu=np.asarray(blob["mu"], dtype=float),
                          sigma=np.asarray(blob["sigma"], dtype=float),
                          gamma=np.asarray(blob["gamma"], dtype=float),
                          nu=float(blob["nu"]))
    except KeyError as exc:
        raise SpecError(f"parameter block is missing field {exc}") from None


def _corr_from_cov(cov: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


def _matrix_lines(name: str, mat: np.ndarray) -> list[str]:
    lines = [name]
    for row in np.atleast_2d(mat):
        lines.append("  " + " ".join(_fmt(v) for v in row))
    return lines


def cmd_fit(args) -> int:
    panel = _load_panel(args)
    config = FitConfig(algorithm=args.algorithm, tol=args.tol,
                       delta_cap=args.delta, scale_c=args.scale,
                       ar_order=args.ar)
    report = fit(panel.values, config)
    params = report.params
    guard = (CenterGuard(args.delta) if args.delta is not None
             else CenterGuard.default_for_dim(params.d))

    ses: dict[str, float] = {}
    se_error = None
    try:
        info = observed_info(params, panel.values, guard=guard)
        ses = standard_errors(info)
    except Exception as exc:  # noqa: BLE001 - SEs are best-effort in the report
        se_error = f"{type(exc).__name__}: {exc}"

    k = n_free_params(params)
    ic = aicc(report.final_loglik, k, report.n_obs)
    corr_sigma = _corr_from_cov(params.sigma)
    corr_total = _corr_from_cov(moments(MsvgParams(
        mu=params.beta0 if isinstance(params, ArMsvgParams) else params.mu,
        sigma=params.sigma, gamma=params.gamma, nu=params.nu))[1])

    labels = param_labels(params)
    est = flatten_params(params)
    blob = {
        "series": panel.series_names,
        "n": panel.n,
        "n_modelled": report.n_obs,
        "dropped_rows": panel.dropped_rows,
        "algorithm": report.algorithm,
        "ar_order": args.ar,
        "tol": args.tol,
        "delta_cap": args.delta,
        "scale_c": args.scale,
        "seed": args.seed,
        "converged": report.converged,
        "conv_iter": report.conv_iter,
        "switch_iter": report.switch_iter,
        "wall_time": report.wall_time,
        "final_loglik": report.final_loglik,
        "aicc": ic,
        "k": k,
        "params": _params_to_json(params),
        "estimates": {lab: float(v) for lab, v in zip(labels, est)},
        "standard_errors": {lab: float(v) for lab, v in ses.items()},
        "se_error": se_error,
        "corr_sigma": corr_sigma.tolist(),
        "corr_total": corr_total.tolist(),
        "guarded_count_final": report.guarded_count_final,
    }

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{out}.json", "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lines = [
        f"model: MSVG{' AR(1)' if args.ar == 1 else ''} "
        f"({', '.join(panel.series_names)})",
        f"n: {panel.n}  modelled: {report.n_obs}  dropped_rows: {panel.dropped_rows}",
        f"algorithm: {report.algorithm}  converged: {report.converged}  "
        f"iterations: {report.conv_iter}"
        + (f"  switch_iter: {report.switch_iter}" if report.switch_iter else ""),
        f"loglik: {_fmt(report.final_loglik)}  AICc: {_fmt(ic)}  k: {k}",
        f"wall_time_sec: {_fmt(report.wall_time)}",
        "",
        "estimate (standard error)",
    ]
    for lab, v in zip(labels, est):
        se_txt = f" ({_fmt(ses[lab])})" if lab in ses else ""
        lines.append(f"  {lab}: {_fmt(v)}{se_txt}")
    lines.append("")
    lines += _matrix_lines("correlation (from the scale matrix):", corr_sigma)
    lines += _matrix_lines("correlation (from the model covariance):", corr_total)
    if se_error:
        lines += ["", f"standard errors unavailable: {se_error}"]
    with open(f"{out}.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")

    if args.ar == 1:
        resid = (panel.values[1:] - params.beta0
                 - panel.values[:-1] @ params.beta1.T)
        with open(f"{out}_residuals.csv", "w", newline="") as fh:
            fh.write(",".join(panel.series_names) + "\n")
            for row in resid:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    print(f"wrote {out}.txt, {out}.json"
          + (f", {out}_residuals.csv" if args.ar == 1 else ""))
    return 0 if report.converged else 1


def cmd_grid(args) -> int:
    with open(args.params) as fh:
        blob = json.load(fh)
    if "params" in blob:
        blob = blob["params"]
    params = _params_from_json(blob)
    if isinstance(params, ArMsvgParams):
        # grid the residual distribution with the intercept as its centre
        params = MsvgParams(mu=params.beta0, sigma=params.sigma,
                            gamma=params.gamma, nu=params.nu)
    if params.d != 2:
        raise ValueError(f"grid emission needs bivariate parameters, got d={params.d}")
    xlim = tuple(float(v) for v in args.xlim.split(","))
    ylim = tuple(float(v) for v in args.ylim.split(","))
    if len(xlim) != 2 or len(ylim) != 2:
        raise SpecError("xlim/ylim must be 'low,high'")
    guard = (CenterGuard(args.delta) if args.delta is not None
             else CenterGuard.default_for_dim(2))
    values = density_grid(params, xlim, ylim, args.res, guard=guard)
    dx = (xlim[1] - xlim[0]) / args.res
    dy = (ylim[1] - ylim[0]) / args.res
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("x,y,density\n")
        for i in range(args.res):
            xc = xlim[0] + dx * (i + 0.5)
            for j in range(args.res):
                yc = ylim[0] + dy * (j + 0.5)
                fh.write(f"{_fmt(xc)},{_fmt(yc)},{_fmt(values[i, j])}\n")
    print(f"wrote {out}")
    return 0


def parse_study_spec(blob: dict) -> tuple[str, StudySpec]:
    """Validate and build a study spec from its JSON form."""
    if not isinstance(blob, dict):
        raise SpecError("study spec must be a JSON object")
    kind = blob.get("kind", "study")
    if kind not in ("study", "delta_sweep", "skew_sweep"):
        raise SpecError(f"field 'kind' must be study|delta_sweep|skew_sweep, got {kind!r}")
    for name in ("true_params", "n", "r"):
        if name not in blob:
            raise SpecError(f"field {name!r} is required")
    params = _params_from_json(blob["true_params"])
    n = blob["n"]
    r = blob["r"]
    if not isinstance(n, int) or n < 10 * params.d:
        raise SpecError(f"field 'n' must be an integer >= {10 * params.d}")
    if not isinstance(r, int) or r < 1:
        raise SpecError("field 'r' must be an integer >= 1")
    algorithms = tuple(blob.get("algorithms", ["hecm"]))
    for a in algorithms:
        if a not in ALGORITHMS:
            raise SpecError(f"field 'algorithms' may only contain {ALGORITHMS}, got {a!r}")
    fit_blob = blob.get("fit", {})
    if not isinstance(fit_blob, dict):
        raise SpecError("field 'fit' must be an object")
    try:
        config = FitConfig(
            algorithm=fit_blob.get("algorithm", algorithms[0]),
            tol=fit_blob.get("tol", 1e-8),
            max_iter=fit_blob.get("max_iter", 5000),
            delta_cap=fit_blob.get("delta_cap"),
            scale_c=fit_blob.get("scale_c", 100.0),
            nu_bounds=tuple(fit_blob.get("nu_bounds", (1e-4, 200.0))),
            ar_order=fit_blob.get("ar_order", 0),
        )
    except ValueError as exc:
        raise SpecError(f"field 'fit': {exc}") from None
    delta_levels = blob.get("delta_levels")
    gamma_levels = blob.get("gamma_levels")
    if kind == "delta_sweep" and not delta_levels:
        raise SpecError("field 'delta_levels' is required for a delta_sweep")
    if kind == "skew_sweep" and not gamma_levels:
        raise SpecError("field 'gamma_levels' is required for a skew_sweep")
    try:
        spec = StudySpec(
            true_params=params, n=n, r=r,
            base_seed=blob.get("base_seed", 0),
            algorithms=algorithms,
            delta_levels=delta_levels,
            gamma_levels=[np.asarray(g, dtype=float) for g in gamma_levels]
            if gamma_levels else None,
            fit_config=config,
        )
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    return kind, spec


def cmd_simulate(args) -> int:
    with open(args.spec) as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{args.spec}: invalid JSON ({exc})") from None
    kind, spec = parse_study_spec(blob)
    runner = {"study": run_study, "delta_sweep": delta_sweep,
              "skew_sweep": skew_sweep}[kind]
    table = runner(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "study.csv")
    table.write_spec_sidecar(out / "study_spec.json")
    flagged = sum(1 for row in table.rows
                  if row["statistic"] == "flagged" and row["value"])
    print(f"wrote {out / 'study.csv'} ({flagged} flagged cell(s))")
    return 1 if flagged else 0


def cmd_summary(args) -> int:
    panel = _load_panel(args)
    stats = summary_statistics(panel)
    lines = ["series," + ",".join(panel.series_names)]
    for name in ("mean", "sd", "max", "min", "skewness", "kurtosis"):
        lines.append(name + "," + ",".join(_fmt(v) for v in stats[name]))
    lines.append(f"n,{panel.n}")
    lines.append(f"dropped_rows,{panel.dropped_rows}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _add_panel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV (header row required)")
    p.add_argument("--date-column", default=None)
    p.add_argument("--columns", default=None,
                   help="comma-separated price columns (default: all non-date)")
    p.add_argument("--values", action="store_true",
                   help="treat the CSV columns as the modelled values "
                        "themselves (skip return computation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msvg",
        description="Fit and explore the multivariate skewed variance gamma model")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the model to a return panel")
    _add_panel_args(p_fit)
    p_fit.add_argument("--ar", type=int, choices=(0, 1), default=0)
    p_fit.add_argument("--algorithm", choices=ALGORITHMS, default="hecm")
    p_fit.add_argument("--tol", type=float, default=1e-10)
    p_fit.add_argument("--delta", type=float, default=None,
                       help="delta-region threshold (default by dimension)")
    p_fit.add_argument("--scale", type=float, default=100.0)
    p_fit.add_argument("--seed", type=int, default=0,
                       help="recorded in the report for provenance")
    p_fit.add_argument("--out", required=True, help="output path prefix")
    p_fit.set_defaults(func=cmd_fit)

    p_grid = sub.add_parser("grid", help="write a bivariate density grid as CSV")
    p_grid.add_argument("--params", required=True,
                        help="fit report JSON or a bare parameter JSON")
    p_grid.add_argument("--xlim", required=True, help="'low,high'")
    p_grid.add_argument("--ylim", required=True, help="'low,high'")
    p_grid.add_argument("--res", type=int, default=100)
    p_grid.add_argument("--delta", type=float, default=None)
    p_grid.add_argument("--out", required=True)
    p_grid.set_defaults(func=cmd_grid)

    p_sim = sub.add_parser("simulate", help="run a simulation study from a JSON spec")
    p_sim.add_argument("spec", help="study spec JSON path")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_sum = sub.add_parser("summary", help="summary statistics of a return panel")
    _add_panel_args(p_sum)
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
