"""
Command-line front end.

Exit status is 0 on success, 1 on a domain or runtime error and 2 on a
usage error.  Every JSON output carries a ``meta`` object and every TSV
output starts with a ``# meta`` line holding the tool version, the full
flag set, the seed and the SHA-256 of the input file, so identical inputs
give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cv import (PathSpec, cv_constrained_lasso, cv_two_stage, default_lambda_grid,
                 make_folds)
from .data import load_csv, log_design
from .exceptions import LogRatioError
from .inference import (f_test_sum_zero, lasso_selection_event, selective_sum_zero_test)
from .logratio import (PairCoefficients, fit_single_stage, fit_two_stage, model_to_dict,
                       ratio_table)
from .solver import lambda_path
from .stepwise import approx_forward_stepwise

FIT_METHODS = ("single", "two-stage", "two-stage-conservative", "approx-fs")
DEFAULT_K_GRID = tuple(range(11))


# ---------------------------------------------------------------------------
# output helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _meta(args) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("handler", "error_usage")}
    meta = {"tool": "lrlasso", "version": __version__, "command": args.command,
            "flags": flags, "seed": args.seed}
    inp = getattr(args, "input", None)
    if inp is not None:
        meta["input_sha256"] = _sha256(inp)
    return meta


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _write(text: str, path) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _tsv(meta: dict, header, rows) -> str:
    lines = ["# meta " + json.dumps(_clean(meta), sort_keys=True), "\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _load(args):
    d = load_csv(args.input, args.response, group_column=args.group,
                 pseudocount=args.pseudocount, family=args.family)
    return d, log_design(d)


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    d, W = _load(args)
    meta = _meta(args)
    lam, k = args.lam, args.k
    folds = None
    if args.method != "approx-fs" and lam is None:
        folds = make_folds(d, args.folds, args.seed, blocked=args.group is not None)
    if args.method == "approx-fs":
        if k is None:
            args.error_usage("--method approx-fs requires --k")
        tr = approx_forward_stepwise(W, d.y, k)
        mu, coefs = tr.model(k)
        theta = PairCoefficients(coefs, d.p, mu, args.family, d.feature_names)
        fit_meta = {"lambda": None, "k": tr.n_steps, "gamma": None,
                    "stopped_early": tr.stopped_early}
    elif args.method == "single":
        if args.unpaired and lam is None:
            args.error_usage("--unpaired requires --lambda")
        if lam is None:
            curve = cv_constrained_lasso(W, d.y, folds, PathSpec(n_lambda=args.n_lambda), args.family)
            lam = 2.0 * curve.best
        theta, _, rep = fit_single_stage(W, d.y, lam, args.family, include_unpaired=args.unpaired)
        fit_meta = {"lambda": lam, "k": None, "gamma": lam / 2.0,
                    "kkt_residual": rep.kkt_residual, "converged": rep.converged}
    else:
        cons = args.method == "two-stage-conservative"
        if lam is None:
            grid = default_lambda_grid(W, d.y, args.family, n_lambda=args.n_lambda)
            ks = [k] if k is not None else DEFAULT_K_GRID
            curve = cv_two_stage(W, d.y, folds, grid, ks, args.family, cons)
            lam, k = curve.best
        if k is None:
            k = 10
        theta, rep = fit_two_stage(W, d.y, lam, k, args.family, cons)
        fit_meta = {"lambda": lam, "k": rep.k, "gamma": lam / 2.0,
                    "stage1_support": list(rep.stage1_support), "warnings": rep.warnings}
    out = model_to_dict(theta, fit_meta)
    out["meta"] = meta
    _write(_dump_json(out), args.output)
    table = ratio_table(theta) + "\n"
    if args.table:
        Path(args.table).write_text(table)
    else:
        sys.stderr.write(table)
    return 0


def cmd_cv(args) -> int:
    d, W = _load(args)
    blocked = args.blocked
    if blocked and args.group is None:
        args.error_usage("--blocked requires --group")
    folds = make_folds(d, args.folds, args.seed, blocked=blocked, blocked_by=args.group)
    if args.method in ("single", "lasso"):
        curve = cv_constrained_lasso(W, d.y, folds, PathSpec(n_lambda=args.n_lambda), args.family,
                                     sum_zero=args.method == "single", rule=args.rule)
        header = ["gamma" if args.method == "single" else "lambda", "mean", "se"]
        rows = [(g, m, s) for g, m, s in zip(curve.grid, curve.mean_error, curve.se_error)]
    else:
        grid = default_lambda_grid(W, d.y, args.family, n_lambda=args.n_lambda)
        curve = cv_two_stage(W, d.y, folds, grid, range(args.k_max + 1), args.family,
                             args.method == "two-stage-conservative", rule=args.rule)
        header = ["lambda", "k", "mean", "se"]
        rows = [(g[0], g[1], m, s) for g, m, s in zip(curve.grid, curve.mean_error, curve.se_error)]
    meta = _meta(args)
    _write(_tsv(meta, header, rows), args.output)
    summary = {"meta": meta, "rule": curve.rule, "chosen_index": curve.chosen,
               "chosen": curve.best, "mean_error": curve.mean_error[curve.chosen],
               "se_error": curve.se_error[curve.chosen], "K": folds.K,
               "blocked_by": folds.blocked_by, "failures": curve.failures}
    if curve.misclassification is not None:
        summary["misclassification"] = curve.misclassification[curve.chosen]
    text = _dump_json(summary)
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stderr.write(text)
    return 0


def cmd_stepwise(args) -> int:
    d, W = _load(args)
    tr = approx_forward_stepwise(W, d.y, args.k)
    names = d.feature_names
    mu, coefs = tr.model(args.k)
    out = {
        "meta": _meta(args),
        "selected": [{"j": j, "k": k, "name_j": names[j], "name_k": names[k]} for j, k in tr.selected],
        "residual_norms": tr.residual_norms,
        "stopped_early": tr.stopped_early,
        "stop_reason": tr.stop_reason,
        "model": model_to_dict(PairCoefficients(coefs, d.p, mu, d.family, names),
                               {"lambda": None, "k": tr.n_steps, "gamma": None}),
    }
    _write(_dump_json(out), args.output)
    return 0


def cmd_gof_test(args) -> int:
    d, W = _load(args)
    if args.test == "f":
        F, p = f_test_sum_zero(W, d.y)
        out = {"method": "f", "statistic": F, "p_one_sided": p, "p_two_sided": p,
               "M": list(range(d.p)), "s": None, "vminus": None, "vplus": None,
               "sigma": None, "sigma_estimated": None}
    else:
        if args.lam is None:
            args.error_usage("--test selective requires --lambda")
        ev = lasso_selection_event(W, d.y, args.lam)
        r = selective_sum_zero_test(ev, W, d.y, args.sigma)
        out = {"method": "selective", "statistic": r.statistic, "p_one_sided": r.p_one_sided,
               "p_two_sided": r.p_two_sided, "pivot": r.pivot, "M": list(r.M), "s": list(r.s),
               "vminus": r.vminus, "vplus": r.vplus, "sigma": r.sigma,
               "sigma_estimated": r.sigma_estimated}
    out["meta"] = _meta(args)
    _write(_dump_json(out), args.output)
    return 0


def cmd_path(args) -> int:
    d, W = _load(args)
    path = lambda_path(W, d.y, args.family, n_lambda=args.n_lambda,
                       lambda_min_ratio=args.lambda_min_ratio)
    grid = [g for g, _ in path]
    folds = make_folds(d, args.folds, args.seed, blocked=args.group is not None)
    curve = cv_constrained_lasso(W, d.y, folds, PathSpec(grid=grid), args.family)
    meta = _meta(args)
    meta["cv_gamma"] = curve.best
    meta["cv_index"] = curve.chosen
    rows = []
    for i, (g, sol) in enumerate(path):
        for j, name in enumerate(d.feature_names):
            rows.append((i, g, name, sol.coefficients[j], "*" if i == curve.chosen else ""))
    _write(_tsv(meta, ["step", "gamma", "feature", "coefficient", "cv_chosen"], rows), args.output)
    return 0


def cmd_simulate(args) -> int:
    from . import simulate as sim

    if args.reps is None:
        args.reps = {"bench": 3, "pvalues": 2000}.get(args.experiment, 200)
    meta = _meta(args)
    if args.experiment == "bench":
        return _bench(args, meta)
    if args.experiment == "pvalues":
        studies = {w: sim.run_pvalue_study(w, args.reps, args.n or 100, args.p or 30, args.seed)
                   for w in ("null_ratio", "null_single")}
        rows = [(w, i, v) for w, st in studies.items() for i, v in enumerate(st.p_values)]
        _write(_tsv(meta, ["example", "replication", "p_one_sided"], rows), args.output)
        verdicts = {
            "null_ratio_uniform": studies["null_ratio"].ks_pvalue > 0.01,
            "null_single_subuniform": studies["null_single"].mean < 0.45,
        }
        summary = {w: {"mean": st.mean, "ks_statistic": st.ks_statistic, "ks_pvalue": st.ks_pvalue,
                       "kept": int(st.p_values.size), "skipped": st.skipped,
                       "failures": len(st.failures)} for w, st in studies.items()}
        summary.update(meta=meta, verdicts=verdicts)
    else:
        model = "two_ratio" if args.experiment == "1" else "misspecified"
        kw = {}
        if args.s:
            kw["s"] = tuple(args.s)
        if args.methods:
            kw["methods"] = tuple(args.methods)
        spec = sim.SimSpec(n=args.n or 100, p=args.p or 30, model=model, reps=args.reps,
                           seed=args.seed, n_jobs=args.threads, **kw)
        res = sim.run_experiment(spec)
        tsv = res.to_tsv(timings=args.timings)
        _write("# meta " + json.dumps(_clean(meta), sort_keys=True) + "\n" + tsv, args.output)
        verdicts = {}
        methods = set(spec.methods)
        if {"two_stage", "vanilla_lasso"} <= methods:
            for s in spec.s:
                if model == "two_ratio" and s == 1.5:
                    verdicts["mse_ratio_at_1.5_le_0.8"] = res.mse_ratio("two_stage", "vanilla_lasso", s) <= 0.8
                if model == "two_ratio" and s in (0.5, 1.0, 2.0, 3.0):
                    a = res.summary[("two_stage", s)].nulls_selected
                    b = res.summary[("vanilla_lasso", s)].nulls_selected
                    verdicts[f"fewer_nulls_at_{s:g}"] = a < b
                if model == "misspecified" and s == 1.5:
                    verdicts["mse_not_worse_at_1.5"] = res.mse_ratio("two_stage", "vanilla_lasso", s) <= 1.0
        summary = {"meta": meta, "verdicts": verdicts, "failures": len(res.failures)}
    text = _dump_json(summary)
    if args.summary:
        Path(args.summary).write_text(text)
    else:
        sys.stderr.write(text)
    return 0


def _bench(args, meta) -> int:
    from .simulate import run_runtime_bench

    p_grid = args.p_grid or [50, 100, 200, 400]
    rows = run_runtime_bench(sorted(p_grid), n=args.n or 500, k=args.k, reps=args.reps,
                             seed=args.seed)
    _write(_tsv(meta, ["method", "p", "median_seconds"], rows), args.output)
    return 0


def cmd_bench(args) -> int:
    return _bench(args, _meta(args))


# ---------------------------------------------------------------------------
# parser


def _data_flags(p, family=True):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument("--group", default=None, help="group column (enables blocked folds)")
    p.add_argument("--pseudocount", type=float, default=0.0)
    if family:
        p.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker cap for parallel loops")
    common.add_argument("-o", "--output", default=None, help="output path (default stdout)")

    parser = argparse.ArgumentParser(prog="lrlasso", description="Sparse log-ratio regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a log-ratio model")
    _data_flags(p)
    p.add_argument("--method", choices=FIT_METHODS, default="two-stage")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="log-ratio penalty; chosen by cross-validation when omitted")
    p.add_argument("--k", type=int, default=None, help="number of ratios (stage 2 / stepwise)")
    p.add_argument("--unpaired", action="store_true", help="allow unpaired log terms")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--n-lambda", type=int, default=20)
    p.add_argument("--table", default=None, help="ratio table path (default stderr)")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("cv", parents=[common], help="cross-validation curve")
    _data_flags(p)
    p.add_argument("--method", choices=("single", "lasso", "two-stage", "two-stage-conservative"),
                   default="single")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--blocked", action="store_true", help="keep groups intact across folds")
    p.add_argument("--rule", choices=("min", "one_se"), default="min")
    p.add_argument("--n-lambda", type=int, default=20)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--summary", default=None, help="JSON summary path (default stderr)")
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("stepwise", parents=[common], help="approximate forward stepwise selection")
    _data_flags(p, family=False)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(handler=cmd_stepwise, family="gaussian")

    p = sub.add_parser("gof-test", parents=[common], help="test the log-ratio hypothesis")
    _data_flags(p, family=False)
    p.add_argument("--test", choices=("f", "selective"), default="f")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None, help="noise sd (estimated when omitted)")
    p.set_defaults(handler=cmd_gof_test, family="gaussian")

    p = sub.add_parser("path", parents=[common], help="constrained lasso coefficient path")
    _data_flags(p)
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--lambda-min-ratio", type=float, default=1e-3)
    p.add_argument("--folds", type=int, default=None)
    p.set_defaults(handler=cmd_path)

    p = sub.add_parser("simulate", parents=[common], help="run a synthetic experiment")
    p.add_argument("--experiment", choices=("1", "2", "pvalues", "bench"), required=True)
    p.add_argument("--reps", type=int, default=None,
                   help="replications (default 200; 2000 for pvalues; 3 for bench)")
    p.add_argument("--s", type=float, nargs="+", default=None, help="signal amplitudes")
    p.add_argument("--methods", nargs="+", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--p-grid", type=int, nargs="+", default=None)
    p.add_argument("--timings", action="store_true", help="include wall times in the TSV")
    p.add_argument("--summary", default=None, help="JSON summary path (default stderr)")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("bench", parents=[common], help="runtime benchmark")
    p.add_argument("--p-grid", type=int, nargs="+", default=None)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--reps", type=int, default=3)
    p.set_defaults(handler=cmd_bench)
    return parser


class _UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    def error_usage(msg):
        raise _UsageError(msg)

    handler = args.handler
    try:
        args.error_usage = error_usage
        del args.handler
        return handler(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lrlasso: error: {exc}", file=sys.stderr)
        return 2
    except (LogRatioError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"lrlasso: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
