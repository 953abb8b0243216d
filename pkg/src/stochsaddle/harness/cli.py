"""Command-line entry point.

::

    stochsaddle run --config exp.yaml [--seeds A..B] [--out DIR] [--workers W]
    stochsaddle replicate fig-mb [--scale desk|full] [--out DIR]
    stochsaddle eig --matrix H.csv --k 2 --eps 1e-8
    stochsaddle rate --in aggregate.csv --window 1000:100000
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..eigensearch import EigenSearchConfig, search_unstable_directions
from ..oracles import StepSchedule
from .config import ConfigError, ExperimentConfig, parse_seeds
from .experiment import RateError, fit_rate, read_aggregate_csv, run_experiment
from .replicate import FIGURES, replicate


def _window(text: str):
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError("window must look like N_LO:N_HI")
    return float(lo), float(hi)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochsaddle", description="Stochastic saddle search experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config over several seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--seeds", help="seed range A..B (inclusive)")
    r.add_argument("--out", help="output directory (defaults to the config's 'out')")
    r.add_argument("--workers", type=int, default=None)

    rep = sub.add_parser("replicate", help="run a figure preset and write its CSV series")
    rep.add_argument("figure", choices=FIGURES)
    rep.add_argument("--scale", choices=("desk", "full"), default="desk")
    rep.add_argument("--out", default=None)
    rep.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eig", help="stochastic eigenvector search on a dense symmetric matrix")
    e.add_argument("--matrix", required=True, help="CSV file holding the matrix")
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--eps", type=float, required=True, help="unscaled residual tolerance eps_v")
    e.add_argument("--noise", type=float, default=0.0, help="symmetric additive noise level")
    e.add_argument("--gamma", type=float, default=None, help="step size (constant without noise, else gamma/(n+10)); defaults to 1/||H||")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--max-inner", type=int, default=10000)

    rt = sub.add_parser("rate", help="fit a log-log slope to an aggregate CSV")
    rt.add_argument("--in", dest="path", required=True)
    rt.add_argument("--window", type=_window, required=True)
    rt.add_argument("--column", default=None, help="defaults to dist_sq_mean, else grad_norm_sq_mean")
    return p


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    seeds = parse_seeds(args.seeds) if args.seeds else None
    res = run_experiment(cfg, out=args.out, workers=args.workers, seeds=seeds)
    counts = {}
    for rec in res.records:
        counts[rec.status] = counts.get(rec.status, 0) + 1
    print(json.dumps({"name": cfg.name, "config_sha": cfg.sha, "runs": len(res.records),
                      "status": counts, "out": res.out}, sort_keys=True))
    return 0


def _cmd_replicate(args) -> int:
    report = replicate(args.figure, scale=args.scale, out=args.out, workers=args.workers)
    print(report.text())
    return 0


def _cmd_eig(args) -> int:
    H = np.loadtxt(args.matrix, delimiter=",", ndmin=2)
    if H.shape[0] != H.shape[1] or np.max(np.abs(H - H.T)) > 1e-10:
        raise ValueError("matrix must be square and symmetric")
    d = H.shape[0]
    L = float(np.max(np.abs(np.linalg.eigvalsh(H)))) or 1.0
    gamma = args.gamma if args.gamma is not None else 1.0 / L
    sigma = args.noise
    # without noise a constant step converges geometrically; noise needs a decaying one
    sched = StepSchedule.constant(gamma) if sigma == 0 else StepSchedule.power(gamma, 10.0)
    cfg = EigenSearchConfig(eps_v=args.eps, lipschitz=L, schedule=sched, max_inner=args.max_inner)

    def sample(v, rng):
        if sigma == 0:
            return H @ v
        xi = rng.standard_normal((d, d))
        return H @ v + 0.5 * sigma * (xi @ v + xi.T @ v)

    rep = search_unstable_directions(sample, args.k, cfg, dim=d, exact_hvp=lambda v: H @ v,
                                     rng=np.random.default_rng(args.seed))
    out = rep.to_dict()
    out["vectors"] = rep.frame.vectors.tolist()
    print(json.dumps(out, sort_keys=True))
    return 0 if rep.converged else 1


def _cmd_rate(args) -> int:
    data = read_aggregate_csv(args.path)
    col = args.column or ("dist_sq_mean" if np.isfinite(data.get("dist_sq_mean", np.array([np.nan]))).any()
                          else "grad_norm_sq_mean")
    if col not in data:
        raise ValueError(f"column {col!r} not in {args.path}")
    fit = fit_rate(data["n"], data[col], args.window)
    print(json.dumps({"column": col, "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
                      "ci95": list(fit.ci), "points": fit.points}, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "replicate": _cmd_replicate, "eig": _cmd_eig, "rate": _cmd_rate}
    try:
        return handlers[args.command](args)
    except (ConfigError, RateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
