"""Reflected stochastic gradient iterations for index-k saddle points.

The outer update is ``x <- x - alpha(n) (I - 2 sum v_i v_i^T) g(x; omega)``
with the frame ``{v_i}`` refreshed by the stochastic eigenvector search.
Also provided: the fixed-subspace variant, a deterministic baseline, an RK4
integrator for the continuous dynamics and the piecewise-linear
interpolation of a discrete trajectory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .eigensearch import (
    EigenSearchConfig,
    UnstableFrame,
    search_unstable_directions,
)
from .landscapes import Landscape
from .oracles import (
    CHECK_PHASE,
    INIT_PHASE,
    X_PHASE,
    DivergenceError,
    NoiseModel,
    OraclePair,
    RngStreams,
    StepSchedule,
    build_oracles,
)
from .trace import Trace

RUN_STATUSES = ("converged", "max_iter", "diverged", "restart_exhausted")


class SearchError(ValueError):
    """Invalid search configuration or state."""


def reflect(g, frame) -> np.ndarray:
    """``(I - 2 sum v_i v_i^T) g`` for the rows ``v_i`` of ``frame``.

    ``frame`` may be an ``UnstableFrame``, a ``(k, d)`` array or empty.
    """
    g = np.asarray(g, dtype=float)
    V = frame.vectors if isinstance(frame, UnstableFrame) else np.asarray(frame, dtype=float)
    if V.size == 0:
        return g.copy()
    V = np.atleast_2d(V)
    if V.shape[1] != g.size:
        raise SearchError(f"frame dimension {V.shape[1]} does not match gradient length {g.size}")
    return g - 2.0 * (V.T @ (V @ g))


@dataclass
class SaddleSearchConfig:
    """Settings of the outer saddle-search loop.

    Parameters
    ----------
    k : int
        Target index.
    x_schedule : StepSchedule
        Outer step sizes; step ``n`` uses ``alpha(n + offset)``.
    eigen : EigenSearchConfig
        Inner search settings.
    eps_x : float
        Unscaled tolerance; the loop stops once ``||grad f||^2 < L^2 eps_x``.
    lipschitz : float, optional
        ``L`` in the stopping threshold; defaults to ``eigen.lipschitz``.
    max_outer : int
        Cap on outer iterations.
    grad_check_period : int
        Stopping test (and trace record) every this many outer steps.
    grad_check_samples : int
        Sample count for the averaged gradient when ``check_exact`` is false.
    check_exact : bool
        Use the exact gradient in the stopping test.
    refresh_period : int
        Refresh the frame every this many outer steps (1 = every step).
    stop_at_tolerance : bool
        If false, run to ``max_outer`` and report whether the final check
        meets the tolerance. Used for fixed-horizon averaging.
    record_period : int, optional
        Record spacing; defaults to ``grad_check_period``.
    dense : bool
        Keep every iterate (needed for trajectory interpolation).
    divergence_bound : float
        Abort with status ``diverged`` once ``||x||_inf`` exceeds this.
    timing : bool
        Fill the ``wall_ms`` column. Off by default so traces are
        byte-reproducible.
    """

    k: int
    x_schedule: StepSchedule
    eigen: EigenSearchConfig = field(default_factory=EigenSearchConfig)
    eps_x: float = 1e-10
    lipschitz: float | None = None
    max_outer: int = 100_000
    grad_check_period: int = 100
    grad_check_samples: int = 32
    check_exact: bool = True
    refresh_period: int = 1
    stop_at_tolerance: bool = True
    record_period: int | None = None
    dense: bool = False
    divergence_bound: float = 1e8
    timing: bool = False

    def __post_init__(self):
        if self.k < 0:
            raise SearchError("k must be non-negative")
        if not self.eps_x > 0:
            raise SearchError("eps_x must be positive")
        if self.max_outer < 0:
            raise SearchError("max_outer must be non-negative")
        for name in ("grad_check_period", "grad_check_samples", "refresh_period"):
            if getattr(self, name) < 1:
                raise SearchError(f"{name} must be at least 1")
        if self.record_period is not None and self.record_period < 1:
            raise SearchError("record_period must be at least 1")

    @property
    def L(self) -> float:
        return self.eigen.lipschitz if self.lipschitz is None else self.lipschitz

    @property
    def threshold(self) -> float:
        return self.L ** 2 * self.eps_x


@dataclass
class SearchState:
    x: np.ndarray
    frame: UnstableFrame | None
    n: int = 0
    eig_iters: int = 0
    eig_status: str = "converged"
    hit_n: int | None = None


@dataclass
class SearchResult:
    trace: Trace
    state: SearchState

    @property
    def status(self) -> str:
        return self.trace.status


@dataclass
class KnownSpaceSpec:
    """Orthonormal rows spanning the known unstable subspace."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if np.max(np.abs(B @ B.T - np.eye(B.shape[0]))) > 1e-12:
            raise SearchError("known-space basis must have orthonormal rows")
        self.basis = B

    @classmethod
    def from_lagrangian(cls, landscape) -> "KnownSpaceSpec":
        return cls(landscape.unstable_basis())


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


class _Recorder:
    def __init__(self, landscape: Landscape, cfg: SaddleSearchConfig, k: int, target, trace: Trace):
        self.landscape = landscape
        self.cfg = cfg
        self.k = k
        self.target = target
        self.trace = trace
        self.t0 = time.perf_counter()

    def record(self, n, alpha, gn, x, frame, eig_iters):
        row = {"n": int(n), "alpha": alpha, "grad_norm_sq": _finite_or_none(gn)}
        if self.target is not None:
            diff = x - self.target
            row["dist_sq"] = _finite_or_none(diff @ diff)
        else:
            row["dist_sq"] = None
        try:
            row["energy"] = _finite_or_none(self.landscape._energy(x))
        except (FloatingPointError, OverflowError):
            row["energy"] = None
        for i in range(self.k):
            q = None if frame is None else frame.rayleigh[i]
            row[f"q{i + 1}"] = None if q is None else _finite_or_none(q)
        row["eig_iters"] = int(eig_iters)
        row["wall_ms"] = (time.perf_counter() - self.t0) * 1e3 if self.cfg.timing else None
        rows = self.trace.rows
        if rows and rows[-1]["n"] == row["n"]:
            rows[-1] = row
        else:
            rows.append(row)


def _batch_fast_check(X, V, landscape: Landscape, thresh: float):
    """Rayleigh quotients and a pass flag per run for warm frames.

    A run passes when every direction already meets its deflated residual
    guard with a non-positive Rayleigh quotient, which is exactly the case
    where the full search would stop before its first update.
    """
    R, k, _ = V.shape
    if k > 1 and R < k:
        HV = np.stack([landscape._hvp_multi(X[r], V[r]) for r in range(R)])
    else:
        HV = np.stack([landscape._hvp_batch(X, V[:, j]) for j in range(k)], axis=1)
    # C[r, i, j] = v_i . H v_j; direction j is deflated by v_1..v_j
    C = np.triu(V @ HV.transpose(0, 2, 1))
    res = HV - np.einsum("rij,rid->rjd", C, V)
    Q = np.einsum("rjd,rjd->rj", V, HV)
    ok = np.all((Q <= 0) & (np.einsum("rjd,rjd->rj", res, res) < thresh), axis=1)
    return Q, ok


def _canonical_rows(V):
    first = np.argmax(V != 0, axis=-1)
    lead = np.take_along_axis(V, first[..., None], axis=-1)
    return np.where(lead < 0, -V, V)


def _orthonormal_rows(v, U):
    for _ in range(2 if U.shape[1] else 0):
        v = v - ((U * v[:, None, :]).sum(axis=2)[:, :, None] * U).sum(axis=1)
    nrm = np.sqrt((v * v).sum(axis=1))
    good = nrm >= 1e-8
    return v / np.where(good, nrm, 1.0)[:, None], good


def _refine_batch(oracles: OraclePair, X, V, ecfg: EigenSearchConfig, xi_draws):
    """Warm-started eigenvector search for several runs in lockstep.

    Follows the sequential deflated iteration with exact residual guard for
    ``analytic_noisy`` Hessian noise. A row is marked not ok as soon as it
    would need a restart, a random re-seed or more than ``max_inner`` steps;
    those rows are left to the general search. With ``max_restarts == 0`` a
    converged direction with positive quotient is kept and flagged, which is
    what the general search returns in that case.

    Returns
    -------
    V, Q, iters, ok, exhausted
    """
    R, k, d = V.shape
    V = V.copy()
    Q = np.zeros((R, k))
    iters = np.zeros(R, dtype=int)
    ok = np.ones(R, dtype=bool)
    exhausted = np.zeros(R, dtype=bool)
    keep_positive = ecfg.max_restarts == 0
    sched = ecfg.schedule
    period = ecfg.residual_check_period
    thresh = ecfg.threshold
    noisy = oracles._hsigma > 0
    for j in range(k):
        act = np.flatnonzero(ok)
        v = V[act, j]
        n_v = 0
        while act.size:
            U = V[act, :j]
            if n_v % period == 0:
                v, good = _orthonormal_rows(v, U)
                hv = oracles.hvp_batch(X[act], v)
                q = (v * hv).sum(axis=1)
                r = hv - q[:, None] * v
                if j:
                    r = r - ((U * hv[:, None, :]).sum(axis=2)[:, :, None] * U).sum(axis=1)
                done = good & ((r * r).sum(axis=1) < thresh)
                if keep_positive:
                    exhausted[act[done & (q > 0)]] = True
                    fail = ~good | (~done & (n_v >= ecfg.max_inner))
                else:
                    fail = ~good | (done & (q > 0)) | (~done & (n_v >= ecfg.max_inner))
                fin = done & ~fail
                V[act[fin], j] = v[fin]
                Q[act[fin], j] = q[fin]
                ok[act[fail]] = False
                keep = ~(fin | fail)
                act, v = act[keep], v[keep]
                if not act.size:
                    break
                U = V[act, :j]
            xis = [xi_draws(r, j) for r in act] if noisy else None
            hv = oracles.hvp_batch(X[act], v, xis)
            w = hv - (v * hv).sum(axis=1)[:, None] * v
            if j:
                w = w - ((U * hv[:, None, :]).sum(axis=2)[:, :, None] * U).sum(axis=1)
            vh = v - sched(n_v + sched.offset) * w
            nrm = np.sqrt((vh * vh).sum(axis=1))
            bad = ~(nrm >= 1e-14)
            if bad.any():
                ok[act[bad]] = False
                act, vh, nrm = act[~bad], vh[~bad], nrm[~bad]
            v = vh / nrm[:, None]
            iters[act] += 1
            n_v += 1
    return _canonical_rows(V), Q, iters, ok, exhausted & ok


def _search(oracles: OraclePair, x, frame, k: int, ecfg: EigenSearchConfig, streams: RngStreams,
            exact: bool):
    lnd = oracles.landscape
    return search_unstable_directions(
        lambda v, g: oracles.hvp(x, v, g), k, ecfg, dim=lnd.dim,
        exact_hvp=(lambda v: lnd._hvp(x, v)) if exact else None,
        warm_start=frame, rng=streams.eigen,
    )


def _refresh(oracles: OraclePair, x, state: SearchState, k: int, ecfg: EigenSearchConfig,
             streams: RngStreams, exact: bool):
    if exact and state.frame is not None:
        Q, ok = _batch_fast_check(x[None, :], state.frame.vectors[None], oracles.landscape,
                                  ecfg.threshold)
        if ok[0]:
            state.frame.rayleigh = Q[0]
            state.eig_status = "converged"
            return
    rep = _search(oracles, x, state.frame, k, ecfg, streams, exact)
    state.frame = rep.frame
    state.eig_iters += rep.total_inner
    state.eig_status = rep.status


def _as_starts(x0, R: int, d: int) -> np.ndarray:
    X = np.array(x0, dtype=float)
    if X.shape == (d,):
        X = np.tile(X, (R, 1))
    if X.shape != (R, d) or not np.all(np.isfinite(X)):
        raise SearchError(f"x0 must be a finite vector of length {d} or an ({R}, {d}) array")
    return X


def _run_batch(landscape: Landscape, oracles: OraclePair, cfg: SaddleSearchConfig, x0, seeds, *,
               master: int, frame0=None, fixed_frame: np.ndarray | None = None, target=None,
               config_sha: str = "", exact_residual: bool = True) -> list:
    """Advance one independent run per seed in lockstep.

    All per-run arithmetic is row-wise, so a run's trajectory does not
    depend on which other runs share the batch.
    """
    d = landscape.dim
    seeds = [int(s) for s in seeds]
    R = len(seeds)
    if R == 0:
        return []
    X = _as_starts(x0, R, d)
    k = cfg.k if fixed_frame is None else fixed_frame.shape[0]
    if fixed_frame is None and not 0 <= k < d:
        raise SearchError(f"need 0 <= k < d, got k={k}, d={d}")
    if target is None:
        target = landscape.known_saddle
    streams = [RngStreams(master, s) for s in seeds]
    traces = [Trace(k=k, seed=s, config_sha=config_sha, landscape=landscape.name) for s in seeds]
    recs = [_Recorder(landscape, cfg, k, target, t) for t in traces]
    states = [SearchState(x=X[r], frame=None) for r in range(R)]
    refreshing = fixed_frame is None and k > 0

    V = np.zeros((R, k, d))
    if fixed_frame is not None:
        V[:] = fixed_frame
        for st in states:
            st.frame = UnstableFrame(fixed_frame, np.full(k, np.nan)) if k else None
    elif k:
        if frame0 is not None:
            f0 = frame0 if isinstance(frame0, UnstableFrame) else UnstableFrame(frame0)
            if f0.dim != d or f0.k != k:
                raise SearchError("initial frame has the wrong shape")
        for r, st in enumerate(states):
            if frame0 is not None:
                st.frame = UnstableFrame(f0.vectors.copy(), f0.rayleigh.copy())
            else:
                Qm, _ = np.linalg.qr(streams[r].stream(INIT_PHASE).standard_normal((d, k)))
                st.frame = UnstableFrame(Qm.T)
            _refresh(oracles, X[r], st, k, cfg.eigen, streams[r], exact_residual)
            V[r] = st.frame.vectors

    sched = cfg.x_schedule
    offset = sched.offset
    thresh = cfg.threshold
    period = cfg.grad_check_period
    rperiod = 1 if cfg.dense else (cfg.record_period or period)
    samplers = [oracles.sampler(st.stream(X_PHASE)) for st in streams]
    check_rngs = [st.stream(CHECK_PHASE) for st in streams]
    bound = cfg.divergence_bound
    refresh = cfg.refresh_period
    ecfg = cfg.eigen
    hvp_batch = landscape._hvp_batch
    lockstep = refreshing and exact_residual and oracles.hvp_mode == "analytic_noisy"
    xi_cache = {}

    def xi_draws(r, j):
        key = (r, j)
        if key not in xi_cache:
            xi_cache[key] = oracles.hvp_noise_sampler(streams[r].eigen(j))
        return xi_cache[key]()
    points = [[X[r].copy()] for r in range(R)] if cfg.dense else None
    alphas = [] if cfg.dense else None
    status = [None] * R
    last_alpha = [sched(offset)] * R
    ends = [0] * R

    def measured_grad_sq(r, xx):
        if cfg.check_exact:
            g = landscape._gradient(xx)
        else:
            g = oracles.grad(xx, check_rngs[r])
            for _ in range(cfg.grad_check_samples - 1):
                g = g + oracles.grad(xx, check_rngs[r])
            g = g / cfg.grad_check_samples
        return float(g @ g)

    def sync(r):
        st = states[r]
        st.x = X[r].copy()
        if st.frame is not None and refreshing:
            st.frame = UnstableFrame(V[r].copy(), st.frame.rayleigh)

    active = np.arange(R)
    n = 0
    alpha = last_alpha[0]
    while active.size:
        if n % period == 0 or n % rperiod == 0:
            done = []
            for r in active:
                gn = measured_grad_sq(r, X[r])
                sync(r)
                recs[r].record(n, alpha, gn, X[r], states[r].frame, states[r].eig_iters)
                if n % period == 0 and gn < thresh:
                    if states[r].hit_n is None:
                        states[r].hit_n = n
                    if cfg.stop_at_tolerance:
                        status[r] = "converged"
                        ends[r] = n
                        done.append(r)
            if done:
                active = active[~np.isin(active, done)]
        if n >= cfg.max_outer or not active.size:
            break
        alpha = sched(n + offset)
        XA = X[active]
        G = oracles.gradient_batch(XA, [samplers[r]() for r in active])
        if k:
            VA = V[active]
            G = G - 2.0 * ((VA * G[:, None, :]).sum(axis=2)[:, :, None] * VA).sum(axis=1)
        XA = XA - alpha * G
        X[active] = XA
        n += 1
        if cfg.dense:
            for r in active:
                points[r].append(X[r].copy())
            alphas.append(alpha)
        # also catches nan, which fails every comparison
        bad = ~(np.abs(XA).max(axis=1) <= bound)
        if bad.any():
            for r in active[bad]:
                status[r] = "diverged"
                ends[r] = n
                last_alpha[r] = alpha
                x_r = X[r]
                gn = measured_grad_sq(r, x_r) if np.all(np.isfinite(x_r)) else float("nan")
                sync(r)
                recs[r].record(n, alpha, gn, x_r if np.all(np.isfinite(x_r)) else np.full(d, np.nan),
                               states[r].frame, states[r].eig_iters)
            active = active[~bad]
            XA = XA[~bad]
        if refreshing and n % refresh == 0 and active.size:
            exhausted_ids = set()
            if exact_residual:
                Qa, ok = _batch_fast_check(XA, V[active], landscape, ecfg.threshold)
            else:
                Qa, ok = None, np.zeros(active.size, dtype=bool)
            if lockstep and not ok.all():
                rows = np.flatnonzero(~ok)
                ids = active[rows]
                Vn, Qn, its, good, exh = _refine_batch(oracles, XA[rows], V[ids], ecfg,
                                                       lambda i, j: xi_draws(ids[i], j))
                V[active[rows[good]]] = Vn[good]
                Qa[rows[good]] = Qn[good]
                ok[rows[good]] = True
                exhausted_ids = set(ids[exh].tolist())
                # rows handed to the general search still count their lockstep work
                for r, it in zip(active[rows], its):
                    states[r].eig_iters += int(it)
            for i, r in enumerate(active):
                st = states[r]
                if ok[i]:
                    st.frame.rayleigh = Qa[i]
                    st.eig_status = "restart_exhausted" if r in exhausted_ids else "converged"
                    continue
                rep = _search(oracles, X[r], UnstableFrame(V[r], st.frame.rayleigh), k, ecfg,
                              streams[r], exact_residual)
                V[r] = rep.frame.vectors
                st.frame.rayleigh = rep.frame.rayleigh
                st.eig_iters += rep.total_inner
                st.eig_status = rep.status

    results = []
    for r in range(R):
        st = states[r]
        if status[r] is None:
            ends[r] = n
            gn = measured_grad_sq(r, X[r])
            sync(r)
            recs[r].record(n, alpha, gn, X[r], st.frame, st.eig_iters)
            if gn < thresh:
                status[r] = "converged"
            elif st.eig_status == "restart_exhausted":
                status[r] = "restart_exhausted"
            else:
                status[r] = "max_iter"
        sync(r)
        st.n = ends[r]
        traces[r].status = status[r]
        if cfg.dense:
            traces[r].points = np.array(points[r])
            traces[r].alphas = np.array(alphas[: ends[r]])
        results.append(SearchResult(traces[r], st))
    return results


def run_saddle_search(landscape: Landscape, oracles: OraclePair, cfg: SaddleSearchConfig, x0, *,
                      seed: int = 0, master: int | None = None, frame0=None, target=None,
                      config_sha: str = "") -> SearchResult:
    """Stochastic index-k saddle search with frame refresh.

    Parameters
    ----------
    landscape : Landscape
    oracles : OraclePair
    cfg : SaddleSearchConfig
    x0 : array_like
        Starting point.
    seed : int
        Run index; together with ``master`` (default ``oracles.noise.rng_seed``)
        it selects the RNG streams.
    frame0 : UnstableFrame or array, optional
        Initial directions. By default a seeded random frame is refined by
        the eigenvector search at ``x0``.
    target : array_like, optional
        Reference point for ``dist_sq``; defaults to ``landscape.known_saddle``.

    Returns
    -------
    SearchResult
        Trace (one row per record period plus the final state) and final state.
    """
    master = oracles.noise.rng_seed if master is None else master
    return _run_batch(landscape, oracles, cfg, x0, [seed], master=master, frame0=frame0,
                      target=target, config_sha=config_sha)[0]


def run_saddle_search_batch(landscape: Landscape, oracles: OraclePair, cfg: SaddleSearchConfig,
                            x0, seeds, *, master: int | None = None, frame0=None, target=None,
                            config_sha: str = "") -> list:
    """``run_saddle_search`` for several seeds at once.

    ``x0`` is either one start shared by all runs or one row per seed. Each
    result equals the single-seed call with the same seed.
    """
    master = oracles.noise.rng_seed if master is None else master
    return _run_batch(landscape, oracles, cfg, x0, seeds, master=master, frame0=frame0,
                      target=target, config_sha=config_sha)


def saddle_step(state: SearchState, oracles: OraclePair, cfg: SaddleSearchConfig,
                streams: RngStreams) -> SearchState:
    """One outer update followed by a warm-started frame refresh."""
    alpha = cfg.x_schedule(state.n + cfg.x_schedule.offset)
    g = oracles.grad(state.x, streams.stream(X_PHASE))
    frame = state.frame if state.frame is not None else np.zeros((0, state.x.size))
    x = state.x - alpha * reflect(g, frame)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite iterate")
    new = SearchState(x=x, frame=state.frame, n=state.n + 1, eig_iters=state.eig_iters,
                      eig_status=state.eig_status, hit_n=state.hit_n)
    if new.frame is not None and new.frame.k and new.n % cfg.refresh_period == 0:
        new.frame = UnstableFrame(new.frame.vectors.copy(), new.frame.rayleigh.copy())
        _refresh(oracles, x, new, new.frame.k, cfg.eigen, streams, True)
    return new


def _known_space_cfg(spec, schedule, eps, L, max_outer, grad_check_period, stop_at_tolerance, dense):
    return SaddleSearchConfig(
        k=spec.basis.shape[0], x_schedule=schedule, eigen=EigenSearchConfig(lipschitz=L),
        eps_x=eps, lipschitz=L, max_outer=max_outer, grad_check_period=grad_check_period,
        stop_at_tolerance=stop_at_tolerance, dense=dense,
    )


def run_known_space(landscape: Landscape, spec: KnownSpaceSpec, noise: NoiseModel,
                    schedule: StepSchedule, z0, *, eps: float = 1e-12, lipschitz: float | None = None,
                    max_outer: int = 100_000, grad_check_period: int = 100, seed: int = 0,
                    stop_at_tolerance: bool = True, dense: bool = False, target=None,
                    config_sha: str = "") -> SearchResult:
    """Fixed-subspace iteration: ascend on the span of ``spec.basis``, descend elsewhere.

    Equivalent to ``z <- z - alpha (I - 2 P_V) g(z; omega)``.
    """
    return run_known_space_batch(landscape, spec, noise, schedule, z0, [seed], eps=eps,
                                 lipschitz=lipschitz, max_outer=max_outer,
                                 grad_check_period=grad_check_period,
                                 stop_at_tolerance=stop_at_tolerance, dense=dense, target=target,
                                 config_sha=config_sha)[0]


def run_known_space_batch(landscape: Landscape, spec: KnownSpaceSpec, noise: NoiseModel,
                          schedule: StepSchedule, z0, seeds, *, eps: float = 1e-12,
                          lipschitz: float | None = None, max_outer: int = 100_000,
                          grad_check_period: int = 100, stop_at_tolerance: bool = True,
                          dense: bool = False, target=None, config_sha: str = "") -> list:
    oracles = build_oracles(landscape, noise)
    L = lipschitz if lipschitz is not None else (landscape.lipschitz or 1.0)
    cfg = _known_space_cfg(spec, schedule, eps, L, max_outer, grad_check_period, stop_at_tolerance, dense)
    return _run_batch(landscape, oracles, cfg, z0, seeds, master=noise.rng_seed,
                      fixed_frame=spec.basis, target=target, config_sha=config_sha)


def run_deterministic_hisd(landscape: Landscape, cfg: SaddleSearchConfig, x0, frame0=None, *,
                           target=None, config_sha: str = "") -> SearchResult:
    """The same loop with exact gradients and exact Hessian products."""
    oracles = build_oracles(landscape, NoiseModel("exact"), "analytic_noisy")
    return _run_batch(landscape, oracles, cfg, x0, [0], master=0, frame0=frame0, target=target,
                      config_sha=config_sha)[0]


# -- continuous dynamics ------------------------------------------------------

def _gram_schmidt(V: np.ndarray) -> np.ndarray:
    out = []
    for v in V:
        for u in out:
            v = v - (u @ v) * u
        out.append(v / np.linalg.norm(v))
    return np.array(out).reshape(V.shape)


def _sd_rhs(landscape: Landscape, x, V, fixed: bool):
    g = landscape._gradient(x)
    dx = -(g - 2.0 * (V.T @ (V @ g))) if V.size else -g
    if fixed or not V.size:
        return dx, np.zeros_like(V)
    dV = np.empty_like(V)
    for i in range(V.shape[0]):
        v = V[i]
        hv = landscape._hvp(x, v)
        r = hv - v * (v @ hv)
        if i:
            U = V[:i]
            r = r - 2.0 * (U.T @ (U @ hv))
        dV[i] = -r
    return dx, dV


@dataclass
class SampledPath:
    times: np.ndarray
    points: np.ndarray
    frames: np.ndarray | None = None


def integrate_saddle_dynamics(landscape: Landscape, x0, frame0, T: float, dt: float, *,
                              fixed_frame: bool = False, sample_every: int = 1) -> SampledPath:
    """Classical RK4 on the coupled position and direction equations.

    Directions are re-orthonormalized after every step. With
    ``fixed_frame=True`` the directions stay constant, which gives the
    fixed-subspace dynamics.
    """
    if not dt > 0 or not T >= dt:
        raise SearchError("need dt > 0 and T >= dt")
    x = np.array(x0, dtype=float)
    V = np.zeros((0, x.size)) if frame0 is None else np.atleast_2d(
        frame0.vectors if isinstance(frame0, UnstableFrame) else np.asarray(frame0, dtype=float)).copy()
    if V.size:
        V = _gram_schmidt(V)
    steps = int(round(T / dt))
    h = T / steps
    times = [0.0]
    pts = [x.copy()]
    frames = [V.copy()]
    for s in range(1, steps + 1):
        k1x, k1v = _sd_rhs(landscape, x, V, fixed_frame)
        k2x, k2v = _sd_rhs(landscape, x + 0.5 * h * k1x, V + 0.5 * h * k1v, fixed_frame)
        k3x, k3v = _sd_rhs(landscape, x + 0.5 * h * k2x, V + 0.5 * h * k2v, fixed_frame)
        k4x, k4v = _sd_rhs(landscape, x + h * k3x, V + h * k3v, fixed_frame)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        if V.size and not fixed_frame:
            V = _gram_schmidt(V + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v))
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e8:
            raise DivergenceError(f"integration blew up at t={s * h}")
        if s % sample_every == 0 or s == steps:
            times.append(s * h)
            pts.append(x.copy())
            frames.append(V.copy())
    return SampledPath(np.array(times), np.array(pts), np.array(frames))


class InterpolatedPath:
    """Piecewise-linear path through ``x(n)`` at times ``t(n) = sum_{i<n} alpha(i)``."""

    def __init__(self, points, alphas, t0: float = 0.0):
        self.points = np.asarray(points, dtype=float)
        alphas = np.asarray(alphas, dtype=float)
        if self.points.ndim != 2 or alphas.shape != (self.points.shape[0] - 1,):
            raise SearchError("need N+1 points and N step sizes")
        if np.any(alphas <= 0):
            raise SearchError("step sizes must be positive")
        self.times = t0 + np.concatenate([[0.0], np.cumsum(alphas)])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        t = float(t)
        if t < self.times[0] or t > self.times[-1]:
            raise SearchError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        if t == t0:
            return self.points[i].copy()
        if t == t1:
            return self.points[i + 1].copy()
        w = (t - t0) / (t1 - t0)
        return self.points[i] + (self.points[i + 1] - self.points[i]) * w

    def index_at(self, t) -> int:
        return int(np.searchsorted(self.times, t, side="right")) - 1


def interpolate_trace(trace, alphas=None) -> InterpolatedPath:
    """Continuous interpolation of a dense trace (or of a raw point array)."""
    if isinstance(trace, Trace):
        if trace.points is None:
            raise SearchError("trace was not recorded in dense mode")
        return InterpolatedPath(trace.points, trace.alphas if alphas is None else alphas)
    return InterpolatedPath(trace, alphas)


__all__ = [
    "InterpolatedPath", "KnownSpaceSpec", "RUN_STATUSES", "SaddleSearchConfig", "SampledPath",
    "SearchError", "SearchResult", "SearchState", "integrate_saddle_dynamics",
    "interpolate_trace", "reflect", "run_deterministic_hisd", "run_known_space",
    "run_known_space_batch", "run_saddle_search", "run_saddle_search_batch", "saddle_step",
]
