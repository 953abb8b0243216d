"""Statistical invariants of the saddle iterations, shared by unit and acceptance tests.

Each check returns ``(passed, detail)`` so callers can either assert or report.
"""

import numpy as np

from stochsaddle import NoiseModel, StepSchedule, build_landscape, build_oracles
from stochsaddle.eigensearch import EigenSearchConfig
from stochsaddle.saddlesearch import (
    KnownSpaceSpec,
    SaddleSearchConfig,
    integrate_saddle_dynamics,
    interpolate_trace,
    run_known_space_batch,
    run_saddle_search_batch,
)

LAGRANGIAN = {"name": "lagrangian", "P": [[1.0, 0.0], [0.0, 1.0]], "A": [[1.0, 0.0]], "b": [1.0], "eta": 0.5}


def noise_second_moment(landscape, noise, x, samples=20_000, seed=12345):
    """Empirical ``E||g(x; omega) - grad f(x)||^2``."""
    o = build_oracles(landscape, noise)
    rng = np.random.default_rng(seed)
    g = landscape.gradient(x)
    return float(np.mean([np.sum((o.grad(x, rng) - g) ** 2) for _ in range(samples)]))


def descent_recursion(runs=500, steps=300, n_checks=20, sigma=0.5):
    """Mean squared distance obeys the one-step contraction bound on diag(-1, 2).

    ``E||x(n+1)||^2 <= (1 - alpha mu) E||x(n)||^2 + 1.1 alpha^2 (sigma^2 + G^2)``
    with ``mu = 1``, ``sigma^2`` measured from the oracle and ``G^2`` the
    empirical mean squared gradient at step ``n``.
    """
    land = build_landscape({"name": "quadratic", "diag": [-1.0, 2.0]})
    noise = NoiseModel("gaussian_additive", scale=sigma, rng_seed=7)
    sched = StepSchedule.power(0.5, 10.0)
    cfg = SaddleSearchConfig(
        k=1, x_schedule=sched,
        eigen=EigenSearchConfig(eps_v=1e-8, lipschitz=2.0, schedule=StepSchedule.power(0.5, 10.0),
                                residual_check_period=5),
        eps_x=1e-30, lipschitz=2.0, max_outer=steps, grad_check_period=steps,
        stop_at_tolerance=False, dense=True,
    )
    res = run_saddle_search_batch(land, build_oracles(land, noise), cfg, (1.0, 1.0), range(runs))
    P = np.stack([r.trace.points for r in res])
    sq = np.sum(P ** 2, axis=2).mean(axis=0)
    gsq = np.sum((P * np.array([-1.0, 2.0])) ** 2, axis=2).mean(axis=0)
    s2 = noise_second_moment(land, noise, np.zeros(2))
    worst = -np.inf
    for n in np.linspace(0, steps - 1, n_checks).astype(int):
        a = sched(n)
        bound = (1 - a) * sq[n] + 1.1 * a * a * (s2 + gsq[n])
        worst = max(worst, sq[n + 1] / bound)
    return worst <= 1.0, f"max ratio mean||x(n+1)||^2 / bound = {worst:.4f} over {n_checks} steps, {runs} runs"


def supermartingale(runs=500, steps=400, block=40, sigma=0.5):
    """``zeta_n = ||z(n) - z*||^2 + sum_{i >= n} 2 alpha(i)^2 (sigma^2 + G^2)`` has falling mean."""
    land = build_landscape(LAGRANGIAN)
    noise = NoiseModel("gaussian_additive", scale=sigma, rng_seed=11)
    sched = StepSchedule.power(0.5, 10.0)
    res = run_known_space_batch(land, KnownSpaceSpec.from_lagrangian(land), noise, sched, (0.0, 0.0, 0.0),
                                range(runs), max_outer=steps, grad_check_period=steps,
                                stop_at_tolerance=False, dense=True)
    Z = np.stack([r.trace.points for r in res])
    zs = land.known_saddle
    err = np.sum((Z - zs) ** 2, axis=2)
    G2 = max(float(np.mean([np.sum(land.gradient(z) ** 2) for z in Z[:, n]])) for n in range(0, steps + 1, block))
    s2 = noise_second_moment(land, noise, zs)
    a2 = np.array([sched(n) ** 2 for n in range(steps)])
    tail = np.concatenate([np.cumsum(a2[::-1])[::-1], [0.0]])
    zeta = err.mean(axis=0) + 2.0 * tail * (s2 + G2)
    means = zeta[::block]
    ok = bool(np.all(np.diff(means) <= 0))
    return ok, "block means " + ", ".join(f"{m:.4g}" for m in means)


def pseudo_trajectory(seeds=100, t0s=(1.0, 5.0, 25.0), window=1.0, sigma=0.5):
    """Distance between the interpolated iterates and the flow shrinks with the start time."""
    land = build_landscape(LAGRANGIAN)
    noise = NoiseModel("gaussian_additive", scale=sigma, rng_seed=3)
    # slowly decaying steps so t(N) covers the last window within a few thousand steps
    sched = StepSchedule.power(0.5, 10.0, p=0.6)
    times = np.cumsum([sched(n) for n in range(200_000)])
    steps = int(np.searchsorted(times, max(t0s) + window + 0.1)) + 1
    spec = KnownSpaceSpec.from_lagrangian(land)
    res = run_known_space_batch(land, spec, noise, sched, (0.0, 0.0, 0.0), range(seeds), max_outer=steps,
                                grad_check_period=steps, stop_at_tolerance=False, dense=True)
    medians = []
    for t0 in t0s:
        sups = []
        for r in res:
            path = interpolate_trace(r.trace)
            flow = integrate_saddle_dynamics(land, path(t0), spec.basis, window, 0.01, fixed_frame=True)
            sups.append(max(np.linalg.norm(path(t0 + t) - x) for t, x in zip(flow.times, flow.points)))
        medians.append(float(np.median(sups)))
    ok = all(b < a for a, b in zip(medians, medians[1:]))
    return ok, "median sup distance " + ", ".join(f"t0={t:g}: {m:.4g}" for t, m in zip(t0s, medians))


def gapped_spectrum(rng, d, k, L=5.0, gap=0.5):
    """``k`` distinct negative eigenvalues spaced by at least ``gap``; the rest in ``[gap, L]``."""
    neg = -gap - gap * np.arange(k) - rng.uniform(0, 0.2, k).cumsum()
    pos = rng.uniform(gap, L, d - k)
    return np.concatenate([neg, pos])


def rotated(eigs, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((len(eigs), len(eigs))))
    return Q @ np.diag(eigs) @ Q.T


def projector_bound_suite(instances=50, eps=1e-13, L=5.0, seed=2024):
    """The eigenvector search on random gapped matrices lands within ``k zbar_k^2 d``."""
    from stochsaddle.eigensearch import (
        exact_smallest_eigvecs,
        projection_distance,
        projector_error_bound,
        search_unstable_directions,
    )

    rng = np.random.default_rng(seed)
    cfg = EigenSearchConfig(eps_v=eps, lipschitz=L, schedule=StepSchedule.constant(1.0 / L), max_inner=50_000,
                            residual_check_period=5)
    bad, worst = [], 0.0
    for i in range(instances):
        k = 1 + i % 3
        d = int(rng.integers(k + 2, 51))
        eigs = gapped_spectrum(rng, d, k, L)
        M = rotated(eigs, rng)
        rep = search_unstable_directions(lambda v, g: M @ v, k, cfg, dim=d, exact_hvp=lambda v: M @ v, rng=rng)
        bound = projector_error_bound(eigs, k, L, eps)
        dist = projection_distance(rep.frame, exact_smallest_eigvecs(M, k))
        worst = max(worst, dist / bound)
        if not rep.converged or not dist <= bound:
            bad.append((i, d, k, rep.status, dist, bound))
    return not bad, f"{instances - len(bad)}/{instances} within bound, max distance/bound = {worst:.2e}" + (
        f", failures {bad[:3]}" if bad else "")


def oracle_invariant_suite(landscapes, sample_point, trials=200, seed=99):
    """Counts violations of the zero-tolerance invariants across random instances."""
    from stochsaddle.eigensearch import oja_step
    from stochsaddle.landscapes import fd_gradient, fd_hvp
    from stochsaddle.saddlesearch import interpolate_trace, reflect

    rng = np.random.default_rng(seed)
    counts = {"unit_norm": 0, "deflation": 0, "isometry": 0, "involution": 0, "fd_gradient": 0, "fd_hvp": 0,
              "knots": 0}

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))

    for _ in range(trials):
        d = int(rng.integers(3, 15))
        Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
        U, v = Q[:, :2].T, Q[:, 2]
        M = rng.standard_normal((d, d))
        M = (M + M.T) / np.linalg.norm(M + M.T, 2)
        for _ in range(20):
            v = oja_step(v, M @ v + 0.1 * rng.standard_normal(d), U, float(rng.uniform(1e-3, 0.5)))
            counts["unit_norm"] += abs(np.linalg.norm(v) - 1.0) > 1e-12
            counts["deflation"] += np.max(np.abs(U @ v)) > 1e-10
        k = int(rng.integers(0, d))
        g = rng.standard_normal(d)
        r = reflect(g, Q[:, :k].T)
        counts["isometry"] += abs(np.linalg.norm(r) - np.linalg.norm(g)) > 1e-12
        counts["involution"] += np.max(np.abs(reflect(r, Q[:, :k].T) - g)) > 1e-12
        N = int(rng.integers(1, 30))
        pts, alphas = rng.standard_normal((N + 1, 3)), rng.uniform(0.01, 1.0, N)
        path = interpolate_trace(pts, alphas)
        t = np.concatenate([[0.0], np.cumsum(alphas)])
        counts["knots"] += sum(not np.array_equal(path(t[n]), pts[n]) for n in range(N + 1))
    for name, make in landscapes.items():
        lnd = make()
        for _ in range(10):
            x = sample_point(name, lnd, rng)
            w = rng.standard_normal(lnd.dim)
            counts["fd_gradient"] += rel(lnd.gradient(x), fd_gradient(lnd, x)) > 1e-5
            counts["fd_hvp"] += rel(lnd.hvp(x, w), fd_hvp(lnd, x, w)) > 1e-4
    total = int(sum(counts.values()))
    return total == 0, f"{total} violations: " + ", ".join(f"{k}={int(c)}" for k, c in counts.items())
