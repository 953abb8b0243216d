"""Multi-seed execution, aggregation across seeds and convergence-rate fits."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..landscapes import perturbed_start
from ..oracles import RngStreams, build_oracles
from ..saddlesearch import (
    KnownSpaceSpec,
    run_deterministic_hisd,
    run_known_space_batch,
    run_saddle_search_batch,
)
from ..trace import Trace, _fmt
from .config import BUTTERFLY_DEFAULT_START, MB_DEFAULT_START, ConfigError, ExperimentConfig

# RNG phase for seeded random starts, distinct from the search phases
START_PHASE = 3
STATUSES = ("converged", "max_iter", "diverged", "restart_exhausted", "failed")
RUN_COLUMNS = ("seed", "status", "grad_norm_sq", "dist_sq", "iterations", "trace_path", "error")


class RateError(ValueError):
    pass


@dataclass
class RunRecord:
    """Outcome of one seed."""

    seed: int
    status: str
    grad_norm_sq: float | None = None
    dist_sq: float | None = None
    iterations: int = 0
    trace_path: str = ""
    error: str = ""

    def as_row(self) -> list:
        return [_fmt(getattr(self, c)) if c not in ("status", "trace_path", "error") else getattr(self, c)
                for c in RUN_COLUMNS]


@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float
    stderr: float
    ci: tuple
    window: tuple
    points: int


@dataclass
class AggregateReport:
    """Per-``n`` statistics across seeds sharing one config hash.

    ``stats[col]`` maps ``mean``, ``p10`` and ``p90`` to arrays aligned with
    ``n``; ``count`` is the number of runs with a record at each ``n``.
    """

    config_sha: str
    n: np.ndarray
    count: np.ndarray
    stats: dict
    n_runs: int = 0
    convergence_fraction: float = 0.0
    rate: RateFit | None = None
    rate_column: str = ""

    COLUMNS = ("grad_norm_sq", "dist_sq")

    def series(self, column: str, stat: str = "mean") -> np.ndarray:
        return self.stats[column][stat]

    def at(self, n: int, column: str = "dist_sq", stat: str = "mean") -> float:
        idx = np.flatnonzero(self.n == n)
        if not idx.size:
            raise KeyError(f"no aggregate row at n={n}")
        return float(self.stats[column][stat][idx[0]])

    def header(self) -> list:
        cols = ["n", "count"]
        for c in self.stats:
            cols += [f"{c}_mean", f"{c}_p10", f"{c}_p90"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_sha={self.config_sha}\n")
        buf.write(",".join(self.header()) + "\n")
        for i, n in enumerate(self.n):
            row = [_fmt(int(n)), _fmt(int(self.count[i]))]
            for c in self.stats:
                row += [_fmt(self.stats[c][s][i]) for s in ("mean", "p10", "p90")]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def summary(self) -> dict:
        out = {
            "config_sha": self.config_sha,
            "n_runs": self.n_runs,
            "convergence_fraction": self.convergence_fraction,
            "final_n": int(self.n[-1]) if self.n.size else None,
        }
        for c in self.stats:
            last = self.stats[c]["mean"][-1] if self.n.size else float("nan")
            out[f"final_{c}_mean"] = None if not np.isfinite(last) else float(last)
        if self.rate is not None:
            out["rate"] = {"column": self.rate_column, "slope": self.rate.slope,
                           "intercept": self.rate.intercept, "r2": self.rate.r2,
                           "ci95": list(self.rate.ci), "window": list(self.rate.window)}
        return out


def read_aggregate_csv(path) -> dict:
    """Column name -> float array from an aggregate CSV (empty fields become ``nan``)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    cols = lines[0].split(",")
    data = {c: [] for c in cols}
    for ln in lines[1:]:
        for c, v in zip(cols, ln.split(",")):
            data[c].append(float(v) if v else np.nan)
    return {c: np.array(v) for c, v in data.items()}


# -- statistics -----------------------------------------------------------------
def fit_rate(n, error, window) -> RateFit:
    """Least-squares fit of ``log(error)`` against ``log(n)`` over ``window``.

    Parameters
    ----------
    n, error : array_like
        Series of iteration counts and positive errors.
    window : (n_lo, n_hi)
        Inclusive range of ``n`` used in the fit.

    Returns
    -------
    RateFit
        Slope, intercept (natural log), ``R^2``, standard error and 95%
        confidence band on the slope.
    """
    n = np.asarray(n, dtype=float)
    e = np.asarray(error, dtype=float)
    lo, hi = float(window[0]), float(window[1])
    sel = (n >= lo) & (n <= hi) & np.isfinite(e)
    if sel.sum() < 10:
        raise RateError(f"need at least 10 points in window [{lo:g}, {hi:g}], got {int(sel.sum())}")
    if np.any(e[sel] <= 0) or np.any(n[sel] <= 0):
        raise RateError("non-positive values in fit window")
    lx, ly = np.log(n[sel]), np.log(e[sel])
    if np.ptp(ly) == 0:
        return RateFit(0.0, float(ly[0]), 1.0, 0.0, (0.0, 0.0), (lo, hi), int(sel.sum()))
    res = stats.linregress(lx, ly)
    half = stats.t.ppf(0.975, sel.sum() - 2) * res.stderr
    return RateFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), float(res.stderr),
                   (float(res.slope - half), float(res.slope + half)), (lo, hi), int(sel.sum()))


def aggregate(traces, columns=AggregateReport.COLUMNS, rate_window=None, rate_column=None) -> AggregateReport:
    """Mean and 10/90% quantiles across traces at every recorded ``n``.

    Traces are combined in seed order; all must share one config hash.
    """
    traces = sorted(traces, key=lambda t: t.seed)
    shas = {t.config_sha for t in traces}
    if len(shas) > 1:
        raise ConfigError(f"cannot aggregate traces from different configs: {sorted(shas)}")
    sha = shas.pop() if shas else ""
    ns = sorted({int(r["n"]) for t in traces for r in t.rows})
    index = {n: i for i, n in enumerate(ns)}
    count = np.zeros(len(ns), dtype=int)
    tables = {c: np.full((len(traces), len(ns)), np.nan) for c in columns}
    for ti, t in enumerate(traces):
        for r in t.rows:
            i = index[int(r["n"])]
            count[i] += 1
            for c in columns:
                v = r.get(c)
                if v is not None:
                    tables[c][ti, i] = v
    out = {}
    for c, tab in tables.items():
        valid = np.isfinite(tab)
        has = valid.any(axis=0)
        mean = np.full(len(ns), np.nan)
        p10 = np.full(len(ns), np.nan)
        p90 = np.full(len(ns), np.nan)
        for i in np.flatnonzero(has):
            col = tab[valid[:, i], i]
            mean[i] = col.sum() / col.size
            p10[i], p90[i] = np.percentile(col, [10, 90])
        out[c] = {"mean": mean, "p10": p10, "p90": p90}
    conv = sum(t.status == "converged" for t in traces)
    report = AggregateReport(sha, np.array(ns, dtype=int), count, out, n_runs=len(traces),
                             convergence_fraction=conv / len(traces) if traces else 0.0)
    if rate_column is None:
        rate_column = next((c for c in ("dist_sq", "grad_norm_sq") if c in out and
                            np.isfinite(out[c]["mean"]).any()), None)
    if rate_column is not None and ns:
        window = rate_window or (max(ns[-1] / 100.0, 1.0), ns[-1])
        try:
            report.rate = fit_rate(report.n, out[rate_column]["mean"], window)
            report.rate_column = rate_column
        except RateError:
            report.rate = None
    return report


# -- output -----------------------------------------------------------------------
def emit_csv(obj, path) -> None:
    """Write run records, a trace or an aggregate report as CSV.

    Output depends only on the inputs, so repeated runs give identical bytes.
    """
    if isinstance(obj, Trace):
        text = obj.to_csv()
    elif isinstance(obj, AggregateReport):
        text = obj.to_csv()
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for rec in obj:
            w.writerow(rec.as_row())
        text = buf.getvalue()
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_runs_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(RunRecord(
            seed=int(r["seed"]), status=r["status"],
            grad_norm_sq=float(r["grad_norm_sq"]) if r["grad_norm_sq"] else None,
            dist_sq=float(r["dist_sq"]) if r["dist_sq"] else None,
            iterations=int(r["iterations"]), trace_path=r["trace_path"], error=r["error"],
        ))
    return out


# -- execution --------------------------------------------------------------------
def _ldg_near_d1(landscape, amplitude: float = 0.1):
    """Stable D1 state moved ``amplitude`` (Euclidean) along its softest Hessian direction."""
    from scipy.sparse.linalg import LinearOperator, eigsh

    d1 = landscape.diagonal_state(+1)
    op = LinearOperator((landscape.dim, landscape.dim), matvec=lambda v: landscape._hvp(d1, v), dtype=float)
    _, vec = eigsh(op, k=1, which="SA", v0=np.ones(landscape.dim), tol=1e-10)
    u = vec[:, 0]
    u = u if u[np.flatnonzero(u)[0]] >= 0 else -u
    return d1 + amplitude * u / np.linalg.norm(u)


def resolve_start(cfg: ExperimentConfig, landscape, seed: int, master: int):
    x0 = cfg.tree["x0"]
    if not isinstance(x0, str):
        return np.asarray(x0, dtype=float)
    if x0 == "mb-default":
        return np.array(MB_DEFAULT_START)
    if x0 == "butterfly-default":
        return np.array(BUTTERFLY_DEFAULT_START)
    if x0 == "saddle":
        if landscape.known_saddle is None:
            raise ConfigError(f"landscape {landscape.name} has no known saddle")
        return landscape.known_saddle.copy()
    if x0 == "nn-perturbed":
        if landscape.name != "linear_nn" or landscape.known_saddle is None:
            raise ConfigError("nn-perturbed needs a linear_nn landscape with a closed-form saddle")
        return perturbed_start(landscape, landscape.known_saddle, RngStreams(master, seed).stream(START_PHASE))
    if x0 == "ldg-near-d1":
        if landscape.name != "ldg":
            raise ConfigError("ldg-near-d1 needs an ldg landscape")
        amp = float(cfg.tree.get("ldg_start", {}).get("amplitude", 0.1))
        return _ldg_near_d1(landscape, amp)
    raise ConfigError(f"unknown named start {x0!r}")


def _target(cfg: ExperimentConfig, landscape):
    t = cfg.tree.get("target")
    return None if t is None else np.asarray(t, dtype=float)


def _run_chunk(tree: dict, text, seeds: list) -> list:
    """Run ``seeds`` of one config; returns ``(seed, SearchResult or error message)`` pairs."""
    cfg = ExperimentConfig(tree, text=text)
    landscape = cfg.landscape()
    noise = cfg.noise()
    master = noise.rng_seed
    target = _target(cfg, landscape)
    sha = cfg.sha
    x0_named = isinstance(cfg.tree["x0"], str)
    shared = None if x0_named and cfg.tree["x0"] == "nn-perturbed" else resolve_start(cfg, landscape, seeds[0], master)

    def starts(ss):
        if shared is not None:
            return shared
        return np.array([resolve_start(cfg, landscape, s, master) for s in ss])

    def attempt(ss):
        if cfg.method == "deterministic":
            sc = cfg.search_config(landscape)
            out = []
            for s in ss:
                res = run_deterministic_hisd(landscape, sc, starts([s]).reshape(-1), target=target, config_sha=sha)
                res.trace.seed = s
                out.append(res)
            return out
        if cfg.method == "known_space":
            basis = cfg.tree.get("known_space")
            spec = KnownSpaceSpec(np.asarray(basis, dtype=float)) if basis is not None else \
                KnownSpaceSpec.from_lagrangian(landscape)
            sc = cfg.search_config(landscape)
            return run_known_space_batch(
                landscape, spec, noise, sc.x_schedule, starts(ss), ss, eps=sc.eps_x, lipschitz=sc.L,
                max_outer=sc.max_outer, grad_check_period=sc.grad_check_period,
                stop_at_tolerance=sc.stop_at_tolerance, dense=sc.dense, target=target, config_sha=sha,
            )
        oracles = build_oracles(landscape, noise, cfg.tree.get("hvp_mode"), cfg.tree.get("dimer_length"))
        sc = cfg.search_config(landscape)
        return run_saddle_search_batch(landscape, oracles, sc, starts(ss), ss, master=master, target=target,
                                       config_sha=sha)

    try:
        return list(zip(seeds, attempt(seeds)))
    except Exception:
        if len(seeds) == 1:
            raise
    # isolate the failing seed(s); results are independent of batch composition
    out = []
    for s in seeds:
        try:
            out.append((s, attempt([s])[0]))
        except Exception as exc:  # recorded per run, siblings continue
            out.append((s, f"{type(exc).__name__}: {exc}"))
    return out


def _run_chunk_safe(tree, text, seeds):
    try:
        return _run_chunk(tree, text, seeds)
    except Exception as exc:
        return [(s, f"{type(exc).__name__}: {exc}") for s in seeds]


def _record(seed: int, res, trace_path: str) -> RunRecord:
    if isinstance(res, str):
        return RunRecord(seed, "failed", error=res, trace_path="")
    last = res.trace.last
    return RunRecord(seed, res.trace.status, last.get("grad_norm_sq"), last.get("dist_sq"),
                     int(res.state.n), trace_path)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    aggregate: AggregateReport
    traces: list = field(default_factory=list)
    results: list = field(default_factory=list)
    out: str | None = None


def run_experiment(cfg: ExperimentConfig, out=None, workers: int | None = None, seeds=None,
                   rate_window=None, rate_column=None) -> ExperimentResult:
    """Run every seed of ``cfg`` and aggregate the traces.

    Parameters
    ----------
    cfg : ExperimentConfig
    out : path, optional
        Output directory; defaults to the config's ``out`` key. When neither
        is set nothing is written.
    workers : int, optional
        Process count. Seeds are split into contiguous chunks that each run
        in lockstep; results do not depend on the split.
    seeds : list, optional
        Overrides the config's seeds.

    Returns
    -------
    ExperimentResult
        Run records ordered by seed, the aggregate report and the traces.

    Notes
    -----
    Files written under ``out``: ``config.yaml`` (the config echoed
    verbatim), ``traces/seed_XXXXXX.csv``, ``runs.csv``, ``aggregate.csv``
    and ``summary.json``.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    out = out if out is not None else cfg.tree.get("out")
    workers = int(workers or cfg.tree.get("workers") or 1)
    # fail on bad starts before launching anything
    cfg.landscape()
    chunks = [list(c) for c in np.array_split(np.array(seeds, dtype=int), min(workers, len(seeds))) if len(c)]
    chunks = [[int(s) for s in c] for c in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk_safe, [cfg.tree] * len(chunks), [cfg.text] * len(chunks), chunks))
    else:
        parts = [_run_chunk_safe(cfg.tree, cfg.text, c) for c in chunks]
    pairs = sorted((p for part in parts for p in part), key=lambda p: p[0])

    records, traces, results = [], [], []
    for seed, res in pairs:
        rel = f"traces/seed_{seed:06d}.csv" if not isinstance(res, str) else ""
        records.append(_record(seed, res, rel if out is not None else ""))
        if not isinstance(res, str):
            traces.append(res.trace)
            results.append(res)
    agg = aggregate(traces, rate_window=rate_window, rate_column=rate_column)
    if traces:
        agg.convergence_fraction = sum(t.status == "converged" for t in traces) / len(records)
    if out is not None:
        write_outputs(out, cfg, records, traces, agg)
    return ExperimentResult(cfg, records, agg, traces, results, None if out is None else str(out))


def write_outputs(out, cfg: ExperimentConfig, records, traces, agg: AggregateReport) -> None:
    os.makedirs(os.path.join(out, "traces"), exist_ok=True)
    with open(os.path.join(out, "config.yaml"), "w") as fh:
        fh.write(cfg.echo())
    for t in traces:
        t.write_csv(os.path.join(out, "traces", f"seed_{t.seed:06d}.csv"))
    emit_csv(records, os.path.join(out, "runs.csv"))
    emit_csv(agg, os.path.join(out, "aggregate.csv"))
    summary = agg.summary()
    summary["name"] = cfg.name
    summary["seeds"] = [r.seed for r in records]
    summary["status_counts"] = {s: sum(r.status == s for r in records) for s in STATUSES}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
