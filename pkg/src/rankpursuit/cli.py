"""Batch command-line front-end.

Subcommands: ``synth`` (generate a synthetic benchmark, solve, report),
``complete`` (load observations, split, solve, report), ``lrr`` (load a
dense data matrix, solve the self-representation problem, cluster),
``eval`` (score saved factors against a test set) and ``validate-trace``
(re-check the monotonicity invariants of a trace file).

Settings are resolved as: built-in defaults, overridden by ``key = value``
lines from a config file (``--config`` flag or the ``RANKPURSUIT_CONFIG``
environment variable), overridden by command-line flags.  Every stochastic
step takes an explicit seed, so identical invocations produce identical
traces apart from wall-time fields.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .clustering import clustering_accuracy, lrr_affinity_cluster
from .datasets import Dataset, gen_synthetic, load_triplets, rmse, split
from .problems import CompletionProblem, LRRProblem
from .prox import ShrinkKind
from .solvers import SolverConfig, heuristics, prg_solve, rprg_solve, sp_solve
from .variety import FixedRankMatrix

CONFIG_ENV = "RANKPURSUIT_CONFIG"
SOLVERS = ("prg", "rprg", "sp-prg", "sp-rprg")

_DEFAULTS = {
    "solver": "sp-prg",
    "seed": 0,
    "gamma": None,
    "lam": None,
    "lambda0": None,
    "rank_increment": None,
    "rank_budget": None,
    "nu": 0.005,
    "delta": 0.1,
    "eta": 0.65,
    "kappa_max": 8,
    "rho": 0.5,
    "chi": 0.25,
    "beta": 1e-4,
    "tol_inner": 0.01,
    "tol_outer": 1e-4,
    "max_inner": 500,
    "max_outer": None,
    "output_dir": None,
}


@dataclass
class RunReport:
    command: str
    solver: str
    status: str
    final_psi: float
    rank: int
    wall_time: float
    test_rmse: float | None
    trace_path: str | None
    extra: dict

    def as_dict(self):
        out = asdict(self)
        out.update(out.pop("extra"))
        return out


def _parse_scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_config_file(path):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = _parse_scalar(value)
    return out


def resolve_settings(args):
    settings = dict(_DEFAULTS)
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        file_settings = read_config_file(path)
        unknown = set(file_settings) - set(settings)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        settings.update(file_settings)
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["solver"] not in SOLVERS:
        raise ValueError(f"unknown solver {settings['solver']!r}")
    return settings


def build_solver_config(settings, kappa):
    return SolverConfig(
        beta=settings["beta"],
        eps_inner=settings["tol_inner"],
        eps_outer=settings["tol_outer"],
        rho=settings["rho"],
        chi=settings["chi"],
        lambda0=settings["lambda0"],
        kappa=kappa,
        max_inner=settings["max_inner"],
        max_outer=settings["max_outer"],
        nu=settings["nu"],
        delta=settings["delta"],
        eta=settings["eta"],
    ).validate()


def _completion_setup(train, settings, robust):
    gamma, lam, kappa = settings["gamma"], settings["lam"], settings["rank_increment"]
    if gamma is None or (robust and lam is None) or kappa is None:
        h_gamma, h_lam, h_kappa = heuristics(
            train, nu=settings["nu"], delta=settings["delta"],
            eta=settings["eta"], kappa_max=settings["kappa_max"])
        gamma = gamma if gamma is not None else h_gamma
        lam = lam if lam is not None else h_lam
        kappa = kappa if kappa is not None else h_kappa
    kind = ShrinkKind.ENTRYWISE_L1 if robust else ShrinkKind.NONE
    problem = CompletionProblem(train, gamma, lam if robust else 0.0, kind)
    return problem, build_solver_config(settings, kappa)


def _lrr_setup(data, settings, robust):
    gamma, lam, kappa = settings["gamma"], settings["lam"], settings["rank_increment"]
    if gamma is None or (robust and lam is None) or kappa is None:
        h_gamma, h_lam, h_kappa = heuristics(
            data, nu=settings["nu"], delta=settings["delta"],
            eta=settings["eta"], kappa_max=settings["kappa_max"])
        gamma = gamma if gamma is not None else h_gamma
        lam = lam if lam is not None else h_lam
        kappa = kappa if kappa is not None else h_kappa
    kind = ShrinkKind.COLUMNWISE_L21 if robust else ShrinkKind.NONE
    problem = LRRProblem(data, gamma, lam if robust else 0.0, kind)
    return problem, build_solver_config(settings, kappa)


def _run_solver(problem, settings, config, iter_metric=None):
    name = settings["solver"]
    if name in ("prg", "rprg"):
        budget = settings["rank_budget"]
        if budget is None:
            raise ValueError(f"--rank-budget is required for solver {name!r}")
        if name == "prg":
            return prg_solve(problem, budget, config, iter_metric=iter_metric)
        return rprg_solve(problem, budget, config, iter_metric=iter_metric)
    return sp_solve(problem, config, iter_metric=iter_metric)


def _write_outputs(outdir, solution):
    os.makedirs(outdir, exist_ok=True)
    trace_path = os.path.join(outdir, "trace.jsonl")
    with open(trace_path, "w", encoding="utf-8") as fh:
        for rec in solution.trace.records:
            fh.write(json.dumps(rec.as_dict()) + "\n")
    x = solution.x
    np.savetxt(os.path.join(outdir, "u.csv"), x.u, delimiter=",")
    np.savetxt(os.path.join(outdir, "sigma.csv"), x.sigma, delimiter=",")
    np.savetxt(os.path.join(outdir, "v.csv"), x.v, delimiter=",")
    return trace_path


def _emit_report(report, outdir):
    payload = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if outdir:
        with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(payload)


def _parse_dims(text):
    try:
        m, n = text.lower().split("x")
        return int(m), int(n)
    except ValueError:
        raise ValueError(f"--dims expects MxN, got {text!r}") from None


def cmd_synth(args):
    settings = resolve_settings(args)
    dataset, _truth = gen_synthetic(
        args.m, args.rank, args.omega, noise_scale=args.noise,
        outlier_fraction=args.outlier_fraction, outlier_range=args.outlier_range,
        seed=settings["seed"], train_fraction=args.train_fraction)
    robust = settings["solver"] in ("rprg", "sp-rprg")
    problem, config = _completion_setup(dataset.train, settings, robust)
    metric = lambda x: rmse(x, dataset.test)  # noqa: E731
    start = time.perf_counter()
    solution = _run_solver(problem, settings, config, iter_metric=metric)
    wall = time.perf_counter() - start
    outdir = settings["output_dir"]
    trace_path = _write_outputs(outdir, solution) if outdir else None
    report = RunReport(
        command="synth", solver=settings["solver"], status=solution.status.value,
        final_psi=solution.psi, rank=solution.x.rank, wall_time=wall,
        test_rmse=rmse(solution.x, dataset.test), trace_path=trace_path,
        extra={"gamma": problem.gamma, "lam": problem.lam, "kappa": config.kappa,
               "seed": settings["seed"], **dataset.meta})
    _emit_report(report, outdir)
    return 0


def _load_dataset(args, settings):
    dims = _parse_dims(args.dims) if args.dims else None
    train = load_triplets(args.train, fmt=args.format, dims=dims)
    if args.test:
        test = load_triplets(args.test, fmt=args.format, dims=(train.m, train.n))
        return Dataset(train=train, test=test, meta={"source": args.train})
    return split(train, args.split_fraction, settings["seed"])


def cmd_complete(args):
    settings = resolve_settings(args)
    dataset = _load_dataset(args, settings)
    robust = settings["solver"] in ("rprg", "sp-rprg")
    problem, config = _completion_setup(dataset.train, settings, robust)
    metric = lambda x: rmse(x, dataset.test)  # noqa: E731
    start = time.perf_counter()
    solution = _run_solver(problem, settings, config, iter_metric=metric)
    wall = time.perf_counter() - start
    outdir = settings["output_dir"]
    trace_path = _write_outputs(outdir, solution) if outdir else None
    report = RunReport(
        command="complete", solver=settings["solver"], status=solution.status.value,
        final_psi=solution.psi, rank=solution.x.rank, wall_time=wall,
        test_rmse=rmse(solution.x, dataset.test), trace_path=trace_path,
        extra={"gamma": problem.gamma, "lam": problem.lam, "kappa": config.kappa,
               "train_size": dataset.train.size, "test_size": dataset.test.size})
    _emit_report(report, outdir)
    return 0


def cmd_lrr(args):
    settings = resolve_settings(args)
    data = np.loadtxt(args.data, delimiter=",", ndmin=2)
    robust = settings["solver"] in ("rprg", "sp-rprg")
    problem, config = _lrr_setup(data, settings, robust)
    start = time.perf_counter()
    solution = _run_solver(problem, settings, config)
    labels = lrr_affinity_cluster(solution.x, args.clusters, settings["seed"])
    wall = time.perf_counter() - start
    outdir = settings["output_dir"]
    trace_path = _write_outputs(outdir, solution) if outdir else None
    if outdir:
        np.savetxt(os.path.join(outdir, "labels.csv"), labels, fmt="%d")
    extra = {"gamma": problem.gamma, "lam": problem.lam, "kappa": config.kappa,
             "clusters": args.clusters}
    if args.labels:
        truth = np.loadtxt(args.labels, dtype=int)
        extra["accuracy"] = clustering_accuracy(labels, truth)
    report = RunReport(
        command="lrr", solver=settings["solver"], status=solution.status.value,
        final_psi=solution.psi, rank=solution.x.rank, wall_time=wall,
        test_rmse=None, trace_path=trace_path, extra=extra)
    _emit_report(report, outdir)
    return 0


def _load_factors(factors_dir):
    def grab(name, ndmin):
        path = os.path.join(factors_dir, name)
        arr = np.loadtxt(path, delimiter=",", ndmin=ndmin)
        return arr
    u = grab("u.csv", 2)
    sigma = grab("sigma.csv", 1)
    v = grab("v.csv", 2)
    if sigma.size == 0:
        return FixedRankMatrix.zero(u.shape[0], v.shape[0])
    return FixedRankMatrix(u, sigma, v)


def cmd_eval(args):
    settings = resolve_settings(args)
    x = _load_factors(args.factors_dir)
    dims = _parse_dims(args.dims) if args.dims else x.shape
    test = load_triplets(args.test, fmt=args.format, dims=dims)
    report = RunReport(
        command="eval", solver="none", status="evaluated",
        final_psi=float("nan"), rank=x.rank, wall_time=0.0,
        test_rmse=rmse(x, test), trace_path=None,
        extra={"factors_dir": args.factors_dir, "test_size": test.size})
    _emit_report(report, settings["output_dir"])
    return 0


def cmd_validate_trace(args):
    """Re-check trace invariants: objective non-increasing within every
    inner run and monotone wall clock."""
    with open(args.trace, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        print("empty trace", file=sys.stderr)
        return 1
    prev_wall = -float("inf")
    prev_psi = {}
    bad = 0
    for idx, rec in enumerate(records):
        if rec["wall"] < prev_wall:
            print(f"record {idx}: wall time went backwards", file=sys.stderr)
            bad += 1
        prev_wall = rec["wall"]
        key = rec["outer"]
        if key in prev_psi:
            slack = 1e-9 * (1.0 + abs(prev_psi[key]))
            if rec["psi"] > prev_psi[key] + slack:
                print(f"record {idx}: psi increased within run {key} "
                      f"({prev_psi[key]!r} -> {rec['psi']!r})", file=sys.stderr)
                bad += 1
        prev_psi[key] = rec["psi"]
    if bad:
        return 1
    print(f"trace ok: {len(records)} records")
    return 0


def _add_common(p):
    p.add_argument("--config", help="settings file of key = value lines")
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--lambda0", type=float)
    p.add_argument("--rank-increment", type=int, dest="rank_increment",
                   help="rank growth per pursuit round (default: heuristic)")
    p.add_argument("--rank-budget", type=int, dest="rank_budget",
                   help="fixed budget for the plain prg/rprg solvers")
    p.add_argument("--nu", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--chi", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tol-inner", type=float, dest="tol_inner")
    p.add_argument("--tol-outer", type=float, dest="tol_outer")
    p.add_argument("--max-inner", type=int, dest="max_inner")
    p.add_argument("--max-outer", type=int, dest="max_outer")
    p.add_argument("--output-dir", dest="output_dir")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rankpursuit",
        description="trace-norm regularized matrix recovery via rank pursuit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark and solve it")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--rank", "-r", type=int, required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--outlier-range", type=float, default=10.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("complete", help="solve completion from a triplet file")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--format", choices=("csv-triplet", "matrix-market"),
                   default="csv-triplet")
    p.add_argument("--dims", help="matrix size as MxN (csv-triplet files)")
    p.add_argument("--split-fraction", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("lrr", help="self-representation clustering of a dense matrix")
    p.add_argument("--data", required=True, help="dense CSV matrix, samples in columns")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--labels", help="true labels (one integer per line) for accuracy")
    _add_common(p)
    p.set_defaults(func=cmd_lrr)

    p = sub.add_parser("eval", help="report RMSE of saved factors on a test set")
    p.add_argument("--factors-dir", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=("csv-triplet", "matrix-market"),
                   default="csv-triplet")
    p.add_argument("--dims")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate-trace", help="re-check trace invariants")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_validate_trace)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface component errors with a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
