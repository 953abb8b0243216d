"""Figure presets: run the benchmark experiments and check them.

Each figure maps to one or more experiment configs whose parameters follow
the figure captions literally. ``replicate`` runs them, writes the raw
experiment outputs plus one CSV series per figure (columns shaped like the
figure axes) and evaluates the pass/fail checks attached to the figure.

``scale="desk"`` shortens horizons or seed counts where the full run is out
of reach on a single core; the checks are still evaluated at their stated
thresholds and fail honestly when a desk run cannot reach them.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .experiment import RateError, fit_rate, run_experiment

FIGURES = ("fig-mb", "fig-butterfly", "fig-nn", "fig-ldg")
SCALES = ("desk", "full")

MB_EIGEN = {
    "eps_v": 1.0e-2, "lipschitz": 1000.0, "schedule": {"kind": "power", "gamma": 5.0e-3, "m": 10},
    "max_inner": 2000, "residual_check_period": 5,
}
MB_BASE = {
    "method": "saddle", "landscape": {"name": "mb"},
    "noise": {"kind": "gaussian_additive", "scale": 100.0, "rng_seed": 0},
    "k": 1, "eigen": MB_EIGEN, "eps_x": 1.0e-14, "x0": "mb-default", "seeds": 100,
    "max_outer": 100_000, "grad_check_period": 100, "stop_at_tolerance": False,
}

# in two dimensions a restart can only find the other eigenvector, which is never kept
BUTTERFLY_EIGEN = {
    "eps_v": 1.0e-3, "lipschitz": 20.0, "schedule": {"kind": "power", "gamma": 0.5, "m": 10},
    "max_inner": 5000, "max_restarts": 0,
}
# alpha(n) = 0.5 / n with n counted from 1
BUTTERFLY_SCHEDULE = {"kind": "power", "gamma": 0.5, "m": 0.0, "offset": 1}
BUTTERFLY_BASE = {
    "landscape": {"name": "butterfly"}, "k": 1, "x_schedule": BUTTERFLY_SCHEDULE, "eigen": BUTTERFLY_EIGEN,
    "eps_x": 1.0e-6, "lipschitz": 1.0, "x0": "butterfly-default", "grad_check_period": 10,
    "divergence_bound": 1.0e3,
}

NN_EIGEN = {
    "eps_v": 1.0e-3, "lipschitz": 1054.0, "schedule": {"kind": "power", "gamma": 1.0, "m": 1000},
    "max_inner": 20_000, "max_restarts": 0, "residual_check_period": 10,
}
NN_BASE = {
    "method": "saddle", "k": 16, "x_schedule": {"kind": "power", "gamma": 100.0, "m": 10_000},
    "eigen": NN_EIGEN, "eps_x": 1.0e-30, "lipschitz": 1.0, "x0": "nn-perturbed", "refresh_period": 1,
    "grad_check_period": 100, "stop_at_tolerance": False,
}

LDG_EIGEN = {
    "eps_v": 1.0e-6, "lipschitz": 4200.0, "schedule": {"kind": "power", "gamma": 2.4e-3, "m": 10},
    "max_inner": 20_000, "max_restarts": 0, "residual_check_period": 10,
}
LDG_BASE = {
    "method": "saddle", "landscape": {"name": "ldg", "n_grid": 32},
    "noise": {"kind": "coordinate_mask", "keep_fraction": 0.1, "rng_seed": 0},
    "k": 1, "x_schedule": {"kind": "power", "gamma": 1.0, "m": 10_000}, "eigen": LDG_EIGEN,
    "eps_x": 1.0e-10, "lipschitz": 1.0, "x0": "ldg-near-d1", "refresh_period": 10,
    "grad_check_period": 1000,
}

# desk horizons (outer iterations) where the full run does not fit a desk budget
DESK = {"butterfly": 100_000, "nn": 1000, "ldg": 20_000}


def _tree(base: dict, **changes) -> dict:
    tree = copy.deepcopy(base)
    tree.update(changes)
    return tree


def presets(figure: str, scale: str = "desk") -> dict:
    """Experiment config trees for ``figure``, keyed by series label."""
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; expected one of {SCALES}")
    full = scale == "full"
    if figure == "fig-mb":
        return {
            "decaying": _tree(MB_BASE, name="mb-decaying",
                              x_schedule={"kind": "power", "gamma": 0.01, "m": 100}),
            "constant": _tree(MB_BASE, name="mb-constant", x_schedule={"kind": "constant", "alpha0": 1.0e-4}),
        }
    if figure == "fig-butterfly":
        return {
            "deterministic": _tree(BUTTERFLY_BASE, name="butterfly-deterministic", method="deterministic",
                                   seeds=1, max_outer=10_000, dense=True),
            "stochastic": _tree(BUTTERFLY_BASE, name="butterfly-stochastic", method="saddle",
                                noise={"kind": "gaussian_additive", "scale": 1.0, "rng_seed": 0}, seeds=100,
                                max_outer=100_000 if full else DESK["butterfly"]),
        }
    if figure == "fig-nn":
        out = {"N100": _tree(NN_BASE, name="nn-N100", landscape={"name": "linear_nn", "n_samples": 100, "data_seed": 0},
                             noise={"kind": "minibatch", "batch_size": 20, "rescale": False, "rng_seed": 0},
                             seeds=10 if full else 1, max_outer=100_000 if full else DESK["nn"])}
        if full:
            out["N10000"] = _tree(NN_BASE, name="nn-N10000",
                                  landscape={"name": "linear_nn", "n_samples": 10_000, "data_seed": 0},
                                  noise={"kind": "minibatch", "batch_size": 1000, "rescale": False, "rng_seed": 0},
                                  seeds=10, max_outer=100_000)
        return out
    return {"stochastic": _tree(LDG_BASE, name="ldg-mask", seeds=1,
                                max_outer=1_000_000 if full else DESK["ldg"])}


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


@dataclass
class ReplicationReport:
    figure: str
    scale: str
    out: str | None
    checks: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [f"{self.figure} ({self.scale} scale, {self.elapsed:.1f} s)"]
        lines += ["  " + c.line() for c in self.checks]
        if self.out:
            lines.append(f"  outputs in {self.out}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"figure": self.figure, "scale": self.scale, "passed": self.passed, "elapsed_s": self.elapsed,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks]}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def series_csv(columns: dict) -> str:
    """CSV text with one column per key; missing values and NaN become empty cells."""
    names = list(columns)
    n = max((len(v) for v in columns.values()), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for i in range(n):
        w.writerow([_cell(columns[c][i]) if i < len(columns[c]) else "" for c in names])
    return buf.getvalue()


def _slope_check(name, agg, column, window, lo, hi) -> Check:
    n = agg.n
    if n.size == 0 or n.max() < window[1]:
        reach = int(n.max()) if n.size else 0
        return Check(name, False, f"series ends at n={reach}; window {window[0]:g}..{window[1]:g} not covered")
    try:
        fit = fit_rate(n, agg.series(column), window)
    except RateError as exc:
        return Check(name, False, str(exc))
    ok = (lo is None or fit.slope >= lo) and (hi is None or fit.slope <= hi)
    rng = f"[{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]"
    return Check(name, ok, f"slope {fit.slope:.3f} (r2 {fit.r2:.3f}) over n in {window[0]:g}..{window[1]:g}, "
                           f"required {rng}")


def _run(tree, out, label, workers):
    cfg = ExperimentConfig(tree)
    sub = None if out is None else os.path.join(out, label)
    return run_experiment(cfg, out=sub, workers=workers)


def _fig_mb(runs, checks, series):
    dec, con = runs["decaying"].aggregate, runs["constant"].aggregate
    cols = {"n": dec.n}
    for label, agg in (("decaying", dec), ("constant", con)):
        for stat in ("mean", "p10", "p90"):
            cols[f"{label}_dist_sq_{stat}"] = agg.series("dist_sq", stat)
    series["fig-mb.csv"] = cols
    n_end = 100_000
    e_dec, e_con = dec.at(n_end), con.at(n_end)
    checks.append(Check("mb decaying error at n=1e5", e_dec <= 5e-6, f"mean ||x-x*||^2 = {e_dec:.3e}, required <= 5e-6"))
    checks.append(_slope_check("mb decaying slope", dec, "dist_sq", (1e3, 1e5), -1.3, -0.7))
    ratio = e_con / e_dec if e_dec > 0 else float("inf")
    checks.append(Check("mb constant plateau", ratio >= 10.0,
                        f"constant/decaying mean error at n=1e5 = {ratio:.1f}, required >= 10"))


def _fig_butterfly(runs, checks, series):
    det = runs["deterministic"]
    sto = runs["stochastic"]
    tr = det.traces[0]
    pts = tr.points
    series["fig-butterfly-deterministic.csv"] = {"n": np.arange(len(pts)), "x": pts[:, 0], "y": pts[:, 1]}
    agg = sto.aggregate
    hits = [rec for rec in sto.records if rec.status == "converged"]
    series["fig-butterfly-stochastic.csv"] = {
        "n": agg.n, "grad_norm_sq_mean": agg.series("grad_norm_sq"), "grad_norm_sq_p10": agg.series("grad_norm_sq", "p10"),
        "grad_norm_sq_p90": agg.series("grad_norm_sq", "p90"), "count": agg.count,
    }
    series["fig-butterfly-runs.csv"] = {
        "seed": [r.seed for r in sto.records], "converged": [int(r.status == "converged") for r in sto.records],
        "iterations": [r.iterations for r in sto.records],
        "x": [float(res.state.x[0]) if not isinstance(res, str) else None for res in sto.results],
        "y": [float(res.state.x[1]) if not isinstance(res, str) else None for res in sto.results],
    }
    det_ok = tr.status != "converged"
    gn = tr.last.get("grad_norm_sq")
    checks.append(Check("butterfly deterministic stays trapped", det_ok,
                        f"status {tr.status}, final ||grad||^2 = {gn:.3e} after {int(det.records[0].iterations)} steps"))
    frac = len(hits) / max(1, len(sto.records))
    checks.append(Check("butterfly stochastic escape", frac >= 0.3,
                        f"{len(hits)}/{len(sto.records)} seeds reached ||grad||^2 < 1e-6, required >= 30%"))


def nn_saddle_checks(landscape) -> list:
    """Gradient and index checks at the closed-form network saddle."""
    w = landscape.known_saddle
    g = landscape.gradient(w)
    yf = float(np.sum(landscape.spec.Y ** 2))
    gnorm = float(np.linalg.norm(g))
    ev = np.linalg.eigvalsh(landscape.hessian(w))
    neg = int(np.sum(ev < -1e-8))
    return [
        Check("nn saddle gradient", gnorm <= 1e-8 * (1 + yf), f"||grad|| = {gnorm:.2e}, bound {1e-8 * (1 + yf):.2e}"),
        Check("nn saddle index", neg == 16, f"{neg} eigenvalues < -1e-8, required 16"),
    ]


def _fig_nn(runs, checks, series):
    for label, res in runs.items():
        agg = res.aggregate
        series[f"fig-nn-{label}.csv"] = {
            "n": agg.n, "grad_norm_sq_mean": agg.series("grad_norm_sq"),
            "grad_norm_sq_p10": agg.series("grad_norm_sq", "p10"), "grad_norm_sq_p90": agg.series("grad_norm_sq", "p90"),
        }
        checks.extend(nn_saddle_checks(res.config.landscape()) if label == "N100" else [])
        checks.append(_slope_check(f"nn {label} grad-norm slope", agg, "grad_norm_sq", (1e3, 1e5), -1.4, -0.6))


def ldg_final_index(landscape, x, k: int = 3) -> np.ndarray:
    """Smallest ``k`` Hessian eigenvalues at ``x``."""
    from scipy.sparse.linalg import LinearOperator, eigsh

    op = LinearOperator((landscape.dim, landscape.dim), matvec=lambda v: landscape._hvp(x, v), dtype=float)
    return np.sort(eigsh(op, k=k, which="SA", v0=np.ones(landscape.dim), tol=1e-10)[0])


def _fig_ldg(runs, checks, series):
    res = runs["stochastic"]
    agg = res.aggregate
    tr = res.traces[0]
    series["fig-ldg.csv"] = {"n": agg.n, "grad_norm_sq": agg.series("grad_norm_sq"),
                             "energy": tr.column("energy")[: agg.n.size]}
    rec = res.records[0]
    gn = rec.grad_norm_sq
    checks.append(Check("ldg reaches tolerance", rec.status == "converged",
                        f"status {rec.status}, final ||grad||^2 = {gn:.3e} after {rec.iterations} steps, "
                        f"required <= 1e-10"))
    landscape = res.config.landscape()
    ev = ldg_final_index(landscape, res.results[0].state.x)
    neg = int(np.sum(ev < 0))
    checks.append(Check("ldg final index", neg == 1, f"smallest eigenvalues {np.array2string(ev, precision=3)}, "
                                                     f"{neg} negative, required exactly 1"))
    n = agg.n
    hi = float(n.max()) if n.size else 0.0
    checks.append(_slope_check("ldg grad-norm slope", agg, "grad_norm_sq", (max(1e3, hi / 100), hi), None, -1.0)
                  if hi >= 1e4 else Check("ldg grad-norm slope", False, "run too short for a slope fit"))


HANDLERS = {"fig-mb": _fig_mb, "fig-butterfly": _fig_butterfly, "fig-nn": _fig_nn, "fig-ldg": _fig_ldg}


def replicate(figure: str, scale: str = "desk", out=None, workers: int | None = 1) -> ReplicationReport:
    """Run the presets of ``figure`` and evaluate its checks.

    Parameters
    ----------
    figure : str
        One of ``FIGURES``.
    scale : {"desk", "full"}
    out : str, optional
        Output directory; experiment outputs go to ``out/<label>/`` and the
        figure series to ``out/*.csv`` with a ``summary.json``.
    workers : int, optional
        Worker processes per experiment.
    """
    t0 = time.perf_counter()
    trees = presets(figure, scale)
    runs = {label: _run(tree, out, label, workers) for label, tree in trees.items()}
    report = ReplicationReport(figure, scale, out)
    HANDLERS[figure](runs, report.checks, report.series)
    report.results = runs
    report.elapsed = time.perf_counter() - t0
    if out is not None:
        os.makedirs(out, exist_ok=True)
        for name, cols in report.series.items():
            with open(os.path.join(out, name), "w", newline="") as fh:
                fh.write(series_csv(cols))
        summary = report.to_dict()
        summary.pop("elapsed_s")
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
