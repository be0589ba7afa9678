"""Command-line interface.

Four subcommands: ``impute`` (one incomplete CSV in, completed data and
a pooled analysis out), ``simulate`` (TOML-configured Monte Carlo study),
``analytic-bias`` (closed-form bias surfaces for the 2x2 case) and
``pool`` (Rubin's rules over an estimates file).

Exit codes: 0 success, 1 usage error, 2 data or feasibility error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import analytic, glm, pooling, simlab
from .errors import CalimpError, DataError, NumericError
from .impute import (PopulationDistribution, STOCHASTIC_METHODS,
                     analyze_pooled, complete_records, impute_calibrated,
                     impute_standard, impute_weighted, single_impute,
                     write_stacked_csv)
from .tabular import read_csv, write_csv

_CLI_METHODS = ("cra", "single", "standard", "calibrated",
                "weighted-marginal", "weighted-conditional")
_NEEDS_SEED = ("standard", "calibrated", "weighted-marginal",
               "weighted-conditional")
_NEEDS_POP = ("calibrated", "weighted-marginal", "weighted-conditional")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise _Usage(message)


def _usage(message: str):
    raise _Usage(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calimp",
                     description="Calibrated multiple imputation toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("impute", help="impute one incomplete variable")
    p.add_argument("--data", required=True, help="input CSV path")
    p.add_argument("--target", required=True,
                   help="name of the incomplete variable")
    p.add_argument("--method", required=True, choices=_CLI_METHODS)
    p.add_argument("--predictors",
                   help="comma-separated imputation-model predictors "
                        "(default: every other variable)")
    p.add_argument("--outcome",
                   help="analysis outcome (default: first predictor)")
    p.add_argument("--analysis-model",
                   help="override, e.g. 'y~x+z' or just 'y' for y on "
                        "all other variables")
    p.add_argument("--m", type=int, default=10,
                   help="number of imputations (default 10)")
    p.add_argument("--seed", type=int,
                   help="RNG seed; required for stochastic methods")
    p.add_argument("--pop-dist",
                   help="reference distribution 'level=prob,...'; one "
                        "level may be omitted and gets the complement")
    p.add_argument("--pop-n", type=int,
                   help="size of the external sample behind --pop-dist "
                        "(omit for census-quality proportions)")
    p.add_argument("--single-level",
                   help="fill level for --method single")
    p.add_argument("--missing-token", action="append",
                   help="cell value treated as missing (repeatable; "
                        "default: empty string and NA)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--config", required=True, help="TOML study file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int,
                   help="worker processes (default: all cores)")
    p.add_argument("--profile", choices=sorted(simlab.PROFILES),
                   help="size preset overriding the config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analytic-bias",
                       help="closed-form bias over a selection grid")
    p.add_argument("--mechanism", required=True,
                   choices=("M1", "M2", "M3", "M4"))
    p.add_argument("--method", action="append",
                   choices=analytic.ANALYTIC_METHODS,
                   help="repeatable; default: all methods")
    p.add_argument("--grid", default="-3:3:61",
                   help="lo:hi:points for the active coefficients; use "
                        "--grid=lo:hi:pts when lo is negative "
                        "(default -3:3:61)")
    p.add_argument("--alpha0-fixed", type=float, default=0.5,
                   help="fixed intercept for the M4 grid (default 0.5)")
    p.add_argument("--p-x", type=float, default=0.7,
                   help="population P(x=1) (default 0.7)")
    p.add_argument("--beta0", type=float, default=float(np.log(0.5)))
    p.add_argument("--beta-x", type=float, default=float(np.log(1.5)))
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_analytic_bias)

    p = sub.add_parser("pool", help="pool an estimates file")
    p.add_argument("--estimates", required=True,
                   help="long CSV: imputation,coefficient,estimate,variance")
    p.add_argument("--df-com", type=float, required=True,
                   help="complete-data degrees of freedom (n - p)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_pool)

    return parser


def _parse_pop_dist(text: str, variable, levels, n_source):
    pairs = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            _usage(f"--pop-dist entry '{part}' is not level=prob")
        label, _, raw = part.partition("=")
        try:
            pairs[label.strip()] = float(raw)
        except ValueError:
            _usage(f"--pop-dist proportion '{raw}' is not a number")
    if not pairs:
        _usage("--pop-dist is empty")
    return PopulationDistribution.from_partial(variable, levels, pairs,
                                               n_source=n_source)


def _analysis_spec(ds, target, predictors, outcome, override):
    if override:
        if "~" in override:
            out, _, rhs = override.partition("~")
            preds = tuple(p.strip() for p in rhs.split("+") if p.strip())
        else:
            out = override
            preds = tuple(n for n in ds.names if n != override.strip())
        return glm.DesignSpec(outcome=out.strip(), predictors=preds)
    if outcome is None:
        outcome = predictors[0]
    return glm.DesignSpec(
        outcome=outcome,
        predictors=tuple(n for n in ds.names if n != outcome))


def _write_wald_analysis(fit, path):
    z = simlab.Z975
    names = fit.coef_names()
    se = fit.se()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["coefficient", "estimate", "se", "ci_lo", "ci_hi",
                         "odds_ratio", "or_ci_lo", "or_ci_hi"])
        for j, nm in enumerate(names):
            est, s = float(fit.coef_flat[j]), float(se[j])
            lo, hi = est - z * s, est + z * s
            writer.writerow([nm, repr(est), repr(s), repr(lo), repr(hi),
                             repr(float(np.exp(est))),
                             repr(float(np.exp(lo))),
                             repr(float(np.exp(hi)))])


def cmd_impute(args) -> int:
    tokens = tuple(args.missing_token) if args.missing_token else ("", "NA")
    ds = read_csv(args.data, missing_tokens=tokens)
    tvar = ds.var(args.target)
    if args.predictors:
        predictors = tuple(
            p.strip() for p in args.predictors.split(",") if p.strip())
    else:
        predictors = tuple(n for n in ds.names if n != args.target)
    if args.method in _NEEDS_SEED and args.seed is None:
        _usage(f"--seed is required for method '{args.method}'")
    pop = None
    if args.method in _NEEDS_POP:
        if not args.pop_dist:
            _usage(f"--pop-dist is required for method '{args.method}'")
        pop = _parse_pop_dist(args.pop_dist, args.target, tvar.levels,
                              args.pop_n)
    os.makedirs(args.out, exist_ok=True)
    spec = _analysis_spec(ds, args.target, predictors, args.outcome,
                          args.analysis_model)

    if args.method in ("cra", "single"):
        if args.method == "cra":
            completed = complete_records(ds, args.target)
        else:
            if args.single_level is None:
                _usage("--single-level is required for method 'single'")
            completed = single_impute(ds, args.target, args.single_level)
        write_csv(completed, os.path.join(args.out, "completed.csv"))
        fit = glm.fit(completed, spec)
        _write_wald_analysis(fit, os.path.join(args.out, "analysis.csv"))
        print(f"{args.method}: wrote completed.csv and analysis.csv "
              f"({completed.n_rows} rows)")
        return 0

    if args.method == "standard":
        res = impute_standard(ds, args.target, predictors, args.m, args.seed)
    elif args.method == "calibrated":
        res = impute_calibrated(ds, args.target, predictors, args.m, pop,
                                args.seed)
    else:
        mode = args.method.rsplit("-", 1)[1]
        res = impute_weighted(ds, args.target, predictors, args.m, pop,
                              args.seed, mode=mode)
    write_stacked_csv(res, os.path.join(args.out, "imputations.csv"))
    pooled = analyze_pooled(res, spec)
    pooling.write_pooled_csv(pooled, os.path.join(args.out, "pooled.csv"))
    flag = " (weighted imputation model)" if "weighted" in res.method else ""
    print(f"{res.method}: m={res.m}, wrote imputations.csv and "
          f"pooled.csv{flag}")
    for p in pooled:
        print(f"  {p.name}: {p.estimate:.4f} "
              f"[{p.ci_lo:.4f}, {p.ci_hi:.4f}] fmi={p.fmi:.3f}")
    return 0


def cmd_simulate(args) -> int:
    study = simlab.load_study(args.config, profile=args.profile)
    os.makedirs(args.out, exist_ok=True)
    all_results, summaries = [], []
    for cfg in study.scenarios:
        res = simlab.run_scenario(cfg, threads=args.threads)
        all_results.append(res)
        summaries += simlab.summarize(res)
        print(f"scenario '{cfg.name}': {cfg.reps} reps, "
              f"{len(res.failures)} failures")
    simlab.write_raw_csv(all_results, os.path.join(args.out, "raw.csv"))
    simlab.write_summary_csv(summaries,
                             os.path.join(args.out, "summary.csv"))
    simlab.write_summary_json(summaries, all_results,
                              os.path.join(args.out, "summary.json"))
    print(f"wrote raw.csv, summary.csv, summary.json to {args.out}")
    return 0


def cmd_analytic_bias(args) -> int:
    try:
        lo, hi, pts = args.grid.split(":")
        lo, hi, pts = float(lo), float(hi), int(pts)
    except ValueError:
        _usage(f"--grid '{args.grid}' is not lo:hi:points")
    tab = analytic.PopulationTable.from_margins(args.p_x, args.beta0,
                                                args.beta_x)
    methods = tuple(args.method) if args.method else analytic.ANALYTIC_METHODS
    axes = analytic.grid_axes(args.mechanism, pts, lo, hi,
                              alpha0_fixed=args.alpha0_fixed)
    rows = analytic.bias_grid(tab, args.mechanism, methods, axes=axes)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=list(rows[0]),
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def cmd_pool(args) -> int:
    by_imp: dict[int, dict[str, tuple[float, float]]] = {}
    names: list[str] = []
    with open(args.estimates, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"imputation", "coefficient", "estimate", "variance"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(
                f"{args.estimates}: needs columns {sorted(need)}")
        for row in reader:
            i = int(row["imputation"])
            nm = row["coefficient"]
            if nm not in names:
                names.append(nm)
            by_imp.setdefault(i, {})[nm] = (
                float(row["estimate"]), float(row["variance"]))
    imps = sorted(by_imp)
    est = np.empty((len(imps), len(names)))
    var = np.empty_like(est)
    for r, i in enumerate(imps):
        for c, nm in enumerate(names):
            if nm not in by_imp[i]:
                raise DataError(
                    f"imputation {i} lacks coefficient '{nm}'")
            est[r, c], var[r, c] = by_imp[i][nm]
    pooled = pooling.pool(est, var, args.df_com, names=names)
    if args.out:
        pooling.write_pooled_csv(pooled, args.out)
    else:
        for p in pooled:
            print(f"{p.name}: {p.estimate:.6g} se={p.se:.6g} "
                  f"[{p.ci_lo:.6g}, {p.ci_hi:.6g}] df={p.df:.1f} "
                  f"fmi={p.fmi:.4f} re={p.re:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:   # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except CalimpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
