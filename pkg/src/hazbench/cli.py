"""Command-line interface: fit, simulate, bench, diagnose.

Exit codes: 0 success, 2 input error (bad file, column, formula, chain
directory), 3 estimator failure.  Every run writes a manifest.txt with
the effective configuration, seed, and grid, sufficient to reproduce the
outputs byte-for-byte.  Options may also come from a flat key=value
config file (--config); explicit flags win.  HAZBENCH_SEED is the seed
fallback when neither source sets one.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .chains import MCMCControl, autocorrelation, gelman_rubin, load_chains, save_chains
from .data import HazardCurve, SurvDataset, TimeGrid, log_hazard_ratio
from .dbeta import DBetaPriors, discretize, fit_markov_beta, survival_chains
from .formula import FormulaError, parse_formula, render_formula
from .io import InputError, dataset_summary, read_dataset, write_curve, write_dataset
from .kernel import BandwidthSpec, BoundarySpec, KernelSpec, kernel_hazard, presmoothed_hazard
from .mrh import MRHPriors, fit_mrh, summarize_chains
from .simulate import ESTIMATORS as BENCH_ESTIMATORS
from .simulate import SimConfig, generate_dataset, run_benchmark, truth_on_grid
from .spline import SplineBasisSpec, fit_spline_hazard, to_baseline
from .timevar import SmootherSpec, decumulate, fit_timevar, test_effects
from .yp import fit_yp

FIT_ESTIMATORS = ("kernel", "presmooth", "spline", "mrh", "dbeta", "timevar", "yp")


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}: config lines must be key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(args: argparse.Namespace, sub: argparse.ArgumentParser, argv) -> None:
    """Apply precedence defaults < config file < explicit flags."""
    file_values = _read_config_file(args.config) if args.config else {}
    explicit = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                explicit.add(action.dest)
    for action in sub._actions:
        name = action.dest
        if name in ("help", "config") or name in explicit:
            continue
        if name in file_values:
            raw: object = file_values[name]
            if action.type is not None:
                raw = action.type(raw)
            elif action.const is True:  # store_true flags
                raw = str(raw).lower() in ("1", "true", "yes")
            setattr(args, name, raw)
    if getattr(args, "seed", None) is None:
        env = os.environ.get("HAZBENCH_SEED")
        args.seed = int(env) if env else 0


def _write_manifest(out: Path, entries: dict) -> None:
    with open(out / "manifest.txt", "w") as fh:
        fh.write(f"hazbench_version={__version__}\n")
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def _write_coefficients(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "estimate", "lower", "upper"])
        for name, est, lo, hi in rows:
            writer.writerow(
                [name, _fmt(est), "" if lo is None else _fmt(lo), "" if hi is None else _fmt(hi)]
            )


def _grid_for(data: SurvDataset, bins: int) -> TimeGrid:
    return TimeGrid.regular(float(data.times.max()), bins)


def _stratified(data: SurvDataset, formula) -> list[tuple[str, SurvDataset]]:
    if not formula.nph_terms:
        return [("all", data)]
    try:
        cols = [data.column(t) for t in formula.nph_terms]
    except KeyError:
        # string factor columns were expanded at ingestion; use its strata
        if data.strata is None:
            raise
        return [
            (str(lab), data.subset(data.strata == lab))
            for lab in data.stratum_labels()
        ]
    keys = list(zip(*[c.tolist() for c in cols]))
    labels = sorted(set(keys))
    out = []
    for key in labels:
        name = ",".join(f"{t}={v:g}" for t, v in zip(formula.nph_terms, key))
        mask = np.array([k == key for k in keys])
        out.append((name, data.subset(mask)))
    return out


def _mcmc_control(args) -> MCMCControl:
    return MCMCControl(
        n_iter=args.iters, n_burn=args.burn, n_thin=args.thin,
        n_chains=args.chains, seed=args.seed,
    )


def cmd_fit(args) -> int:
    try:
        formula = parse_formula(args.model)
        data = read_dataset(args.data, formula)
    except (FormulaError, InputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = dataset_summary(data)
    print(
        "dataset: n={n} events={events} censored={censored_pct}% "
        "median_event_time={median_event_time:g} range=[{min_time:g}, {max_time:g}]".format(**summary)
    )
    curves: dict[str, HazardCurve] = {}
    coef_rows: list[tuple] = []
    extra_lines: list[str] = []
    try:
        if args.estimator in ("kernel", "presmooth"):
            grid = _grid_for(data, args.bins)
            for name, sub in _stratified(data, formula):
                if args.estimator == "kernel":
                    curves[name] = kernel_hazard(
                        sub,
                        KernelSpec(args.kernel or "epanechnikov"),
                        BandwidthSpec(mode=args.bw_mode, value=args.bw, k=args.nn_k),
                        grid,
                        BoundarySpec(args.bound),
                    )
                else:
                    curves[name] = presmoothed_hazard(
                        sub,
                        args.estimand,
                        KernelSpec(args.kernel or "biweight"),
                        args.bw_presmooth,
                        args.bw,
                        BoundarySpec(args.bound),
                        grid,
                    )
            if formula.ph_terms:
                print("note: PH terms are ignored by this estimator", file=sys.stderr)
        elif args.estimator == "spline":
            spec = SplineBasisSpec(args.bins, args.knots, args.degree, args.lambda_)
            fit = fit_spline_hazard(data, formula, spec)
            curves["average_subject"] = fit.curve_avg
            curves["baseline"] = to_baseline(fit)
            coef_rows = [(n, b, None, None) for n, b in zip(fit.covariate_names, fit.beta)]
            extra_lines.append(f"lambda={fit.lambda_hat!r}")
        elif args.estimator == "mrh":
            ctrl = _mcmc_control(args)
            result = fit_mrh(data, formula, args.m, MRHPriors(), ctrl)
            chain_set = result if isinstance(result, list) else [result]
            save_chains(
                out / "chains",
                chain_set,
                {
                    "model": "mrh",
                    "seed": args.seed,
                    "n_iter": ctrl.n_iter,
                    "n_burn": ctrl.n_burn,
                    "n_thin": ctrl.n_thin,
                    "n_chains": ctrl.n_chains,
                    "priors": "split_a=1,h_shape=0.01,h_rate=0.01,beta_var=25",
                },
            )
            s = summarize_chains(chain_set[0])
            curves.update(s.curves)
            for name, curve in s.log_ratios.items():
                write_curve(curve, out / f"log_ratio_{_safe(name)}.csv")
            coef_rows = [(n, est, lo, hi) for n, (est, lo, hi) in s.beta.items()]
        elif args.estimator == "dbeta":
            disc = discretize(data, args.discretize_mode)
            ctrl = _mcmc_control(args)
            result = fit_markov_beta(disc, DBetaPriors(c=args.dep_c), ctrl)
            chain_set = result if isinstance(result, list) else [result]
            save_chains(
                out / "chains",
                chain_set,
                {
                    "model": "dbeta",
                    "seed": args.seed,
                    "n_iter": ctrl.n_iter,
                    "n_burn": ctrl.n_burn,
                    "n_thin": ctrl.n_thin,
                    "n_chains": ctrl.n_chains,
                    "priors": f"alpha=0.001,beta=0.001,c={args.dep_c}",
                },
            )
            surv = survival_chains(chain_set[0])
            write_curve(surv, out / "survival.csv")
            k = int(chain_set[0].meta["n_periods"])
            pis = np.column_stack(
                [chain_set[0].column(f"pi[{j}]") for j in range(1, k + 1)]
            )
            qs = np.quantile(pis, [0.025, 0.5, 0.975], axis=0)
            curves["all"] = HazardCurve(
                TimeGrid(np.arange(0, k + 1, dtype=float)),
                qs[1],
                kind="hazard",
                lower=np.minimum(qs[0], qs[1]),
                upper=np.maximum(qs[2], qs[1]),
            )
        elif args.estimator == "timevar":
            grid = _grid_for(data, args.bins)
            fit = fit_timevar(data, formula, grid)
            pred = np.linspace(fit.time_range[0], fit.time_range[1], args.pred_points)
            baseline, coef_curves = decumulate(fit, SmootherSpec(args.smooth_b, pred))
            curves["baseline"] = baseline
            for name, curve in coef_curves.items():
                write_curve(curve, out / f"coef_curve_{_safe(name)}.csv")
            coef_rows = [
                (n, g, g - 1.96 * se, g + 1.96 * se)
                for n, g, se in zip(fit.ph_names, fit.gamma, fit.se_gamma)
            ]
            report = test_effects(fit, n_resample=args.resamples, seed=args.seed)
            (out / "tests.txt").write_text(report.render() + "\n")
            print(report.render())
        elif args.estimator == "yp":
            fit = fit_yp(data, formula, seed=args.seed)
            print(f"theta1={fit.theta1!r} theta2={fit.theta2!r}")
            extra_lines.append(f"theta1={fit.theta1!r}")
            extra_lines.append(f"theta2={fit.theta2!r}")
            with open(out / "hazard_ratio.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["time", "hr", "pointwise_lo", "pointwise_hi", "band_lo", "band_hi"]
                )
                for i, t in enumerate(fit.times):
                    writer.writerow(
                        [
                            _fmt(t),
                            _fmt(fit.hr_values[i]),
                            _fmt(fit.pointwise_lo[i]),
                            _fmt(fit.pointwise_hi[i]),
                            _fmt(fit.band_lo[i]),
                            _fmt(fit.band_hi[i]),
                        ]
                    )
            coef_rows = [
                ("theta1", fit.theta1, None, None),
                ("theta2", fit.theta2, None, None),
            ]
        else:
            print(f"input error: unknown estimator {args.estimator!r}", file=sys.stderr)
            return 2
    except (InputError, FormulaError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"estimator failure: {exc}", file=sys.stderr)
        return 3

    for name, curve in curves.items():
        write_curve(curve, out / f"hazard_{_safe(name)}.csv")
    if (
        args.estimator in ("kernel", "presmooth")
        and len(curves) > 1
        and all(c.kind == "hazard" for c in curves.values())
    ):
        names = sorted(curves)
        base = curves[names[0]]
        for other in names[1:]:
            if curves[other].grid == base.grid:
                lr = log_hazard_ratio(curves[other], base)
                write_curve(lr, out / f"log_ratio_{_safe(other)}_vs_{_safe(names[0])}.csv")
    if coef_rows:
        _write_coefficients(out / "coefficients.csv", coef_rows)
    if args.plots and curves:
        from .plots import plot_curves

        plot_curves(curves, out / "curves.svg", title=args.estimator)
    manifest = {
        "command": "fit",
        "data": args.data,
        "model": render_formula(formula),
        "estimator": args.estimator,
        "bins": args.bins,
        "seed": args.seed,
        "summary_n": summary["n"],
        "summary_censored_pct": summary["censored_pct"],
        "summary_median_event_time": summary["median_event_time"],
    }
    for line in extra_lines:
        key, _, value = line.partition("=")
        manifest[key] = value
    _write_manifest(out, manifest)
    return 0


def _safe(name: str) -> str:
    return "".join(ch if (ch.isalnum() or ch in "._-") else "_" for ch in name)


def cmd_simulate(args) -> int:
    config = SimConfig(
        scenario=args.scenario, n=args.n, reps=max(args.rep + 1, 1),
        bins=args.bins, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_dataset(config, args.rep)
    write_dataset(data, out / "dataset.csv")
    grid = config.grid()
    truth = config.baseline_truth()
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_mid", "hazard"])
        for t, h in zip(grid.midpoints, truth_on_grid(truth, grid)):
            writer.writerow([_fmt(t), _fmt(h)])
    _write_manifest(
        out,
        {
            "command": "simulate",
            "scenario": args.scenario,
            "n": args.n,
            "rep": args.rep,
            "bins": args.bins,
            "seed": args.seed,
            "grid": f"regular[0,{config.horizon}]x{args.bins}",
            "censoring": _fmt(1.0 - data.events.mean()),
        },
    )
    print(f"wrote {out / 'dataset.csv'} ({len(data)} rows)")
    return 0


def cmd_bench(args) -> int:
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    unknown = set(estimators) - set(BENCH_ESTIMATORS)
    if unknown or not estimators:
        print(f"input error: unknown estimators {sorted(unknown)}", file=sys.stderr)
        return 2
    config = SimConfig(
        scenario=args.scenario, n=args.n, reps=args.reps, bins=args.bins, seed=args.seed
    )
    mcmc = MCMCControl(n_iter=args.iters, n_burn=args.burn, n_thin=args.thin, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table, artifacts = run_benchmark(config, estimators, mcmc, threads=args.threads)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "bin_index", "t_mid", "bias", "rmse"])
        for name, j, mid, b, r in table.rows():
            writer.writerow([name, j, _fmt(mid), _fmt(b), _fmt(r)])
    with open(out / "integrated.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["estimator", "int_abs_bias", "int_rmse", "reps_ok", "failures"]
        )
        for name in sorted(table.integrated):
            row = table.integrated[name]
            writer.writerow(
                [
                    name,
                    _fmt(row["int_abs_bias"]),
                    _fmt(row["int_rmse"]),
                    row["reps_ok"],
                    row["failures"],
                ]
            )
    # wall-clock timings are inherently non-deterministic; keep them out of
    # the reproducible CSVs
    with open(out / "timings.txt", "w") as fh:
        for name in sorted(table.integrated):
            fh.write(f"{name}={table.integrated[name]['runtime']:.3f}s\n")
    if args.plots:
        from .plots import plot_cloud

        truth = truth_on_grid(config.baseline_truth(), config.grid())
        for name in estimators:
            ests = artifacts["per_estimator"][name]["estimates"]
            plot_cloud(
                ests, config.grid(), truth, out / f"cloud_{name}.svg", title=name
            )
    _write_manifest(
        out,
        {
            "command": "bench",
            "scenario": args.scenario,
            "n": args.n,
            "reps": args.reps,
            "bins": args.bins,
            "seed": args.seed,
            "estimators": ",".join(estimators),
            "mcmc_iters": args.iters,
            "mcmc_burn": args.burn,
            "threads": args.threads,
        },
    )
    completed = sum(1 for name in estimators if table.integrated[name]["reps_ok"] > 0)
    failed = {n: table.integrated[n]["failures"] for n in estimators if table.integrated[n]["failures"]}
    if failed:
        print(f"partial failures: {failed}", file=sys.stderr)
    for name in sorted(table.integrated):
        row = table.integrated[name]
        print(
            f"{name}: integrated |bias|={row['int_abs_bias']:.4f} "
            f"integrated RMSE={row['int_rmse']:.4f} ({row['reps_ok']} reps)"
        )
    return 0 if completed else 3


def cmd_diagnose(args) -> int:
    try:
        chain_set, header = load_chains(args.chains)
    except (FileNotFoundError, InputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    print(f"chains: {len(chain_set)}  kept: {[c.n_kept for c in chain_set]}")
    print(f"header: {header}")
    labels = chain_set[0].labels
    psrf = None
    if len(chain_set) >= 2:
        psrf = gelman_rubin(chain_set)
    print(f"{'parameter':24s}{'mean':>12s}{'sd':>12s}{'acf1':>8s}{'acf5':>8s}" + (f"{'PSRF':>8s}" if psrf else ""))
    flagged = []
    for lab in labels:
        col = chain_set[0].column(lab)
        ac = autocorrelation(col, max_lag=5)
        line = f"{lab:24s}{col.mean():12.4f}{col.std():12.4f}{ac[0]:8.3f}{ac[4]:8.3f}"
        if psrf:
            value = psrf[lab]
            line += f"{value:8.3f}"
            if np.isfinite(value) and value > 1.1:
                flagged.append(lab)
        print(line)
    if flagged:
        print(f"NOT CONVERGED (PSRF > 1.1): {', '.join(flagged)}")
    else:
        print("no convergence flags raised")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hazbench",
        description="Hazard-rate estimation and benchmarking for right-censored data",
    )
    parser.add_argument("--version", action="version", version=f"hazbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (fallback: HAZBENCH_SEED, then 0)")
        p.add_argument("--out", default="hazbench_out", help="output directory")
        p.add_argument("--bins", type=int, default=32, help="time-grid bin count")
        p.add_argument("--plots", action="store_true", default=None,
                       help="emit SVG plots")

    fit = sub.add_parser("fit", help="fit one estimator to a CSV dataset")
    common(fit)
    fit.add_argument("--data", required=True, help="CSV file with header row")
    fit.add_argument("--model", required=True,
                     help="e.g. 'Surv(time, delta) ~ trt + nph(group)'")
    fit.add_argument("--estimator", required=True, choices=FIT_ESTIMATORS)
    fit.add_argument("--kernel", default=None,
                     choices=("epanechnikov", "rectangle", "biweight", "triweight"))
    fit.add_argument("--bw", type=float, default=1.0, help="(hazard) bandwidth")
    fit.add_argument("--bw-presmooth", dest="bw_presmooth", type=float, default=1.0)
    fit.add_argument("--bw-mode", dest="bw_mode", default="global",
                     choices=("global", "local", "nearest_neighbor"))
    fit.add_argument("--nn-k", dest="nn_k", type=int, default=5)
    fit.add_argument("--bound", default="none", choices=("none", "left", "right", "both"))
    fit.add_argument("--estimand", default="h", choices=("h", "H", "S"))
    fit.add_argument("--knots", type=int, default=12)
    fit.add_argument("--degree", type=int, default=3)
    fit.add_argument("--lambda", dest="lambda_", metavar="LAMBDA", type=float, default=None)
    fit.add_argument("--m", type=int, default=5, help="MRH resolution (2^m bins)")
    fit.add_argument("--dep-c", dest="dep_c", type=float, default=0.0)
    fit.add_argument("--discretize-mode", dest="discretize_mode", default="ceiling",
                     choices=("round", "ceiling"))
    fit.add_argument("--smooth-b", dest="smooth_b", type=float, default=1.0)
    fit.add_argument("--pred-points", dest="pred_points", type=int, default=33)
    fit.add_argument("--resamples", type=int, default=500)
    fit.add_argument("--iters", type=int, default=2000)
    fit.add_argument("--burn", type=int, default=500)
    fit.add_argument("--thin", type=int, default=1)
    fit.add_argument("--chains", type=int, default=1)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="write one simulated replicate")
    common(sim)
    sim.add_argument("--scenario", default="PH", choices=("PH", "NPH"))
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--rep", type=int, default=0)
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", help="run the estimator comparison benchmark")
    common(bench)
    bench.add_argument("--scenario", default="PH", choices=("PH", "NPH"))
    bench.add_argument("--n", type=int, default=1000)
    bench.add_argument("--reps", type=int, default=100)
    bench.add_argument("--estimators", default="kernel,spline",
                       help="comma-separated benchmark estimators")
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--iters", type=int, default=1500)
    bench.add_argument("--burn", type=int, default=500)
    bench.add_argument("--thin", type=int, default=1)
    bench.set_defaults(func=cmd_bench)

    diag = sub.add_parser("diagnose", help="MCMC chain diagnostics for a chain dir")
    diag.add_argument("--config", help="flat key=value config file")
    diag.add_argument("--chains", required=True, help="directory written by fit")
    diag.set_defaults(func=cmd_diagnose)
    return parser, {"fit": fit, "simulate": sim, "bench": bench, "diagnose": diag}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, subs[args.command], argv)
    except (InputError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    if getattr(args, "plots", None) is None:
        args.plots = False
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
