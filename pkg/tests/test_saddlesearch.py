import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import invariant_checks
from stochsaddle import NoiseModel, RngStreams, StepSchedule, Trace, build_landscape, build_oracles
from stochsaddle.eigensearch import EigenSearchConfig, UnstableFrame
from stochsaddle.harness.experiment import fit_rate
from stochsaddle.saddlesearch import (
    KnownSpaceSpec,
    SaddleSearchConfig,
    SearchError,
    SearchState,
    integrate_saddle_dynamics,
    interpolate_trace,
    reflect,
    run_deterministic_hisd,
    run_known_space,
    run_known_space_batch,
    run_saddle_search,
    run_saddle_search_batch,
    saddle_step,
)

QUAD = {"name": "quadratic", "diag": [-1.0, 2.0]}
QUAD_EIGEN = EigenSearchConfig(eps_v=1e-8, lipschitz=2.0, schedule=StepSchedule.power(0.5, 10.0),
                               residual_check_period=5)


def quad_cfg(**kw):
    base = dict(k=1, x_schedule=StepSchedule.power(2.0, 10.0), eigen=QUAD_EIGEN, eps_x=1e-12, lipschitz=2.0,
                max_outer=1000, grad_check_period=10)
    base.update(kw)
    return SaddleSearchConfig(**base)


def lagrangian(eta):
    return build_landscape(dict(invariant_checks.LAGRANGIAN, eta=eta))


class TestReflect:
    @pytest.mark.parametrize(
        "g, frame, expected",
        [
            ([3.0, 4.0], np.zeros((0, 2)), [3.0, 4.0]),
            ([3.0, 4.0], [[0.0, 1.0]], [3.0, -4.0]),
            ([1.0, 0.0], [[2 ** -0.5, 2 ** -0.5]], [0.0, -1.0]),
        ],
    )
    def test_examples(self, g, frame, expected):
        np.testing.assert_allclose(reflect(g, frame), expected, atol=1e-15)

    def test_accepts_frame_object(self):
        f = UnstableFrame(np.array([[0.0, 1.0]]))
        np.testing.assert_array_equal(reflect([3.0, 4.0], f), [3.0, -4.0])

    def test_dimension_mismatch(self):
        with pytest.raises(SearchError):
            reflect([1.0, 2.0, 3.0], [[1.0, 0.0]])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 2 ** 31), st.data())
    def test_isometry_and_involution(self, d, seed, data):
        k = data.draw(st.integers(0, d - 1))
        rng = np.random.default_rng(seed)
        V = np.linalg.qr(rng.standard_normal((d, d)))[0][:, :k].T
        g = rng.standard_normal(d) * 10 ** rng.uniform(-3, 3)
        r = reflect(g, V)
        assert abs(np.linalg.norm(r) - np.linalg.norm(g)) <= 1e-12 * max(1.0, np.linalg.norm(g))
        np.testing.assert_allclose(reflect(r, V), g, atol=1e-12 * max(1.0, np.linalg.norm(g)))


class TestSaddleStep:
    def test_hand_example(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("exact"))
        cfg = quad_cfg(x_schedule=StepSchedule.constant(0.1))
        state = SearchState(x=np.array([1.0, 1.0]), frame=UnstableFrame(np.array([[1.0, 0.0]])))
        new = saddle_step(state, o, cfg, RngStreams(0, 0))
        np.testing.assert_allclose(new.x, [0.9, 0.8], atol=1e-15)
        assert new.n == 1
        np.testing.assert_allclose(np.abs(new.frame.vectors), [[1.0, 0.0]], atol=1e-8)

    def test_critical_point_unchanged(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("exact"))
        state = SearchState(x=np.zeros(2), frame=UnstableFrame(np.array([[0.6, 0.8]])))
        new = saddle_step(state, o, quad_cfg(), RngStreams(0, 0))
        np.testing.assert_array_equal(new.x, [0.0, 0.0])

    def test_does_not_mutate_input(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        state = SearchState(x=np.array([1.0, 1.0]), frame=UnstableFrame(np.array([[1.0, 0.0]])))
        before = state.frame.vectors.copy()
        saddle_step(state, o, quad_cfg(), RngStreams(0, 0))
        np.testing.assert_array_equal(state.x, [1.0, 1.0])
        np.testing.assert_array_equal(state.frame.vectors, before)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"k": -1}, {"eps_x": 0.0}, {"max_outer": -1}, {"grad_check_period": 0},
                                    {"refresh_period": 0}, {"record_period": 0}])
    def test_rejects(self, kw):
        with pytest.raises(SearchError):
            quad_cfg(**kw)

    def test_threshold(self):
        assert quad_cfg(eps_x=1e-6, lipschitz=10.0).threshold == pytest.approx(1e-4)

    def test_lipschitz_defaults_to_eigen(self):
        assert quad_cfg(lipschitz=None).L == 2.0


class TestSaddleSearch:
    def test_saddle_start_stops_immediately(self):
        q = build_landscape(QUAD)
        res = run_saddle_search(q, build_oracles(q, NoiseModel("exact")), quad_cfg(), np.zeros(2))
        assert res.status == "converged"
        assert res.state.n == 0
        assert res.state.hit_n == 0
        np.testing.assert_array_equal(res.state.x, [0.0, 0.0])

    def test_exact_quadratic_converges(self):
        q = build_landscape(QUAD)
        cfg = quad_cfg(x_schedule=StepSchedule.constant(0.2))
        res = run_saddle_search(q, build_oracles(q, NoiseModel("exact")), cfg, (1.0, 1.0))
        assert res.status == "converged"
        assert res.trace.last["grad_norm_sq"] < 4.0 * 1e-12

    def test_noisy_quadratic_rate(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        cfg = quad_cfg(max_outer=100_000, grad_check_period=100, stop_at_tolerance=False, eps_x=1e-30)
        res = run_saddle_search_batch(q, o, cfg, (1.0, 1.0), range(20))
        n = res[0].trace.column("n")
        err = np.mean([r.trace.column("dist_sq") for r in res], axis=0)
        fit = fit_rate(n, err, (1e2, 1e5))
        assert -1.3 <= fit.slope <= -0.7

    def test_mb_per_run_accuracy(self):
        mb = build_landscape({"name": "mb"})
        o = build_oracles(mb, NoiseModel("gaussian_additive", scale=100.0))
        eig = EigenSearchConfig(eps_v=1e-2, lipschitz=1000.0, schedule=StepSchedule.power(5e-3, 10.0),
                                max_inner=2000, residual_check_period=5)
        cfg = SaddleSearchConfig(k=1, x_schedule=StepSchedule.power(0.01, 100.0), eigen=eig, eps_x=1e-14,
                                 max_outer=100_000, grad_check_period=1000, stop_at_tolerance=False)
        res = run_saddle_search_batch(mb, o, cfg, (-0.4, 0.6), range(100))
        close = sum(np.sum((r.state.x - mb.known_saddle) ** 2) < 1e-4 for r in res)
        assert close >= 80

    def test_batch_equals_single(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        cfg = quad_cfg(max_outer=300, grad_check_period=20, stop_at_tolerance=False)
        batch = run_saddle_search_batch(q, o, cfg, (1.0, 1.0), range(5))
        for seed in (0, 3):
            single = run_saddle_search(q, o, cfg, (1.0, 1.0), seed=seed)
            assert single.trace.same_records(batch[seed].trace)
            np.testing.assert_array_equal(single.state.x, batch[seed].state.x)

    def test_replay_is_bitwise(self):
        mb = build_landscape({"name": "mb"})
        o = build_oracles(mb, NoiseModel("gaussian_additive", scale=100.0))
        cfg = SaddleSearchConfig(k=1, x_schedule=StepSchedule.power(0.01, 100.0),
                                 eigen=EigenSearchConfig(eps_v=1e-2, lipschitz=1000.0,
                                                         schedule=StepSchedule.power(5e-3, 10.0)),
                                 max_outer=500, grad_check_period=50)
        a = run_saddle_search(mb, o, cfg, (-0.4, 0.6), seed=4)
        b = run_saddle_search(mb, o, cfg, (-0.4, 0.6), seed=4)
        assert a.trace.to_csv() == b.trace.to_csv()

    def test_records_strictly_increasing(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        res = run_saddle_search(q, o, quad_cfg(max_outer=250, grad_check_period=40, stop_at_tolerance=False),
                                (1.0, 1.0))
        n = res.trace.column("n")
        assert np.all(np.diff(n) > 0)
        assert n[0] == 0 and n[-1] == 250

    def test_divergence_status(self):
        q = build_landscape(QUAD)
        cfg = quad_cfg(k=0, x_schedule=StepSchedule.constant(0.5), divergence_bound=1e3)
        res = run_saddle_search(q, build_oracles(q, NoiseModel("exact")), cfg, (1.0, 0.0))
        assert res.status == "diverged"

    def test_max_iter_status(self):
        q = build_landscape(QUAD)
        res = run_saddle_search(q, build_oracles(q, NoiseModel("exact")), quad_cfg(max_outer=5), (1.0, 1.0))
        assert res.status == "max_iter"

    def test_trace_csv_round_trip(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        res = run_saddle_search(q, o, quad_cfg(max_outer=100), (1.0, 1.0), config_sha="abc")
        back = Trace.from_csv(res.trace.to_csv())
        assert back.same_records(res.trace)
        assert back.header() == res.trace.header()


class TestKnownSpace:
    @pytest.mark.parametrize("eta, x1, nu", [(0.0, 1.0, -1.0), (0.5, 2 / 3, -2 / 3)])
    def test_stationary_pair(self, eta, x1, nu):
        land = lagrangian(eta)
        np.testing.assert_allclose(land.known_saddle, [x1, 0.0, nu], atol=1e-12)
        res = run_known_space(land, KnownSpaceSpec.from_lagrangian(land), NoiseModel("gaussian_additive", scale=0.1),
                              StepSchedule.power(4.0, 40.0), (0.0, 0.0, 0.0), max_outer=20_000, eps=1e-12,
                              stop_at_tolerance=False)
        assert np.sum((res.state.x - land.known_saddle) ** 2) <= 1e-4

    def test_saddle_start_stationary(self):
        land = lagrangian(0.5)
        res = run_known_space(land, KnownSpaceSpec.from_lagrangian(land), NoiseModel("exact"),
                              StepSchedule.power(1.0, 10.0), land.known_saddle, max_outer=100,
                              stop_at_tolerance=False, grad_check_period=10)
        np.testing.assert_allclose(res.state.x, land.known_saddle, atol=1e-15)

    def test_update_is_reflected_step(self):
        land = lagrangian(0.0)
        spec = KnownSpaceSpec.from_lagrangian(land)
        z0 = np.array([0.3, -0.2, 0.5])
        res = run_known_space(land, spec, NoiseModel("exact"), StepSchedule.constant(0.1), z0, max_outer=1,
                              stop_at_tolerance=False, grad_check_period=1)
        g = land.gradient(z0)
        np.testing.assert_allclose(res.state.x, z0 - 0.1 * reflect(g, spec.basis), atol=1e-15)

    def test_basis_must_be_orthonormal(self):
        with pytest.raises(SearchError):
            KnownSpaceSpec(np.array([[1.0, 1.0, 0.0]]))

    def test_batch_matches_single(self):
        land = lagrangian(0.5)
        spec = KnownSpaceSpec.from_lagrangian(land)
        noise = NoiseModel("gaussian_additive", scale=0.3)
        kw = dict(max_outer=200, grad_check_period=20, stop_at_tolerance=False)
        batch = run_known_space_batch(land, spec, noise, StepSchedule.power(1.0, 10.0), np.zeros(3), range(3), **kw)
        single = run_known_space(land, spec, noise, StepSchedule.power(1.0, 10.0), np.zeros(3), seed=2, **kw)
        assert single.trace.same_records(batch[2].trace)


class TestDeterministic:
    def test_quadratic_monotone_after_first_step(self):
        q = build_landscape(QUAD)
        res = run_deterministic_hisd(q, quad_cfg(x_schedule=StepSchedule.constant(0.2), dense=True,
                                                 max_outer=100, eps_x=1e-30), (1.0, 1.0))
        norms = np.linalg.norm(res.trace.points, axis=1)
        assert np.all(np.diff(norms[1:]) <= 0)
        assert norms[-1] < 1e-3

    def test_saddle_with_exact_frame_stationary(self):
        q = build_landscape(QUAD)
        res = run_deterministic_hisd(q, quad_cfg(), np.zeros(2), frame0=np.array([[1.0, 0.0]]))
        np.testing.assert_array_equal(res.state.x, [0.0, 0.0])
        assert res.status == "converged"

    def test_butterfly_does_not_reach_target(self):
        bf = build_landscape({"name": "butterfly"})
        eig = EigenSearchConfig(eps_v=1e-3, lipschitz=20.0, schedule=StepSchedule.power(0.5, 10.0),
                                max_inner=5000, max_restarts=0)
        cfg = SaddleSearchConfig(k=1, x_schedule=StepSchedule.power(0.5, 0.0, offset=1), eigen=eig, eps_x=1e-6,
                                 lipschitz=1.0, max_outer=10_000, grad_check_period=10, divergence_bound=1e3)
        res = run_deterministic_hisd(bf, cfg, (0.9, -0.1))
        assert res.status != "converged"


class TestContinuousDynamics:
    def test_closed_form(self):
        q = build_landscape(QUAD)
        path = integrate_saddle_dynamics(q, (1.0, 1.0), np.array([[1.0, 0.0]]), 1.0, 0.01)
        exact = np.array([np.exp(-path.times), np.exp(-2 * path.times)]).T
        np.testing.assert_allclose(path.points, exact, atol=1e-9)

    def test_fourth_order(self):
        q = build_landscape(QUAD)
        exact = np.array([np.exp(-2.0), np.exp(-4.0)])
        errs = [np.linalg.norm(integrate_saddle_dynamics(q, (1.0, 1.0), np.array([[1.0, 0.0]]), 2.0, dt).points[-1]
                               - exact) for dt in (0.2, 0.1)]
        assert 12.0 <= errs[0] / errs[1] <= 20.0

    def test_direction_fixed_point(self):
        q = build_landscape(QUAD)
        path = integrate_saddle_dynamics(q, (1.0, 1.0), np.array([[1.0, 0.0]]), 1.0, 0.1)
        np.testing.assert_array_equal(path.frames[-1], [[1.0, 0.0]])

    def test_direction_rotates_to_unstable(self):
        q = build_landscape(QUAD)
        v0 = np.array([[0.6, 0.8]])
        path = integrate_saddle_dynamics(q, (1.0, 1.0), v0, 10.0, 0.01)
        np.testing.assert_allclose(np.abs(path.frames[-1]), [[1.0, 0.0]], atol=1e-8)

    def test_bad_step(self):
        with pytest.raises(SearchError):
            integrate_saddle_dynamics(build_landscape(QUAD), (1.0, 1.0), None, 0.1, 1.0)


class TestInterpolation:
    def test_two_point_example(self):
        path = interpolate_trace(np.array([[0.0, 0.0], [1.0, 0.0]]), [1.0])
        np.testing.assert_array_equal(path(0.25), [0.25, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 2 ** 31))
    def test_knots_and_midpoints(self, N, seed):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((N + 1, 3))
        alphas = rng.uniform(0.01, 1.0, N)
        path = interpolate_trace(pts, alphas)
        t = np.concatenate([[0.0], np.cumsum(alphas)])
        for n in range(N + 1):
            np.testing.assert_array_equal(path(t[n]), pts[n])
        for n in range(N):
            np.testing.assert_allclose(path(0.5 * (t[n] + t[n + 1])), 0.5 * (pts[n] + pts[n + 1]), atol=1e-12)

    def test_outside_domain(self):
        path = interpolate_trace(np.zeros((3, 2)), [0.5, 0.5])
        with pytest.raises(SearchError):
            path(1.5)
        with pytest.raises(SearchError):
            path(-0.1)

    def test_needs_dense_trace(self):
        with pytest.raises(SearchError):
            interpolate_trace(Trace(k=1))

    def test_dense_trace(self):
        q = build_landscape(QUAD)
        o = build_oracles(q, NoiseModel("gaussian_additive", scale=0.5))
        res = run_saddle_search(q, o, quad_cfg(max_outer=50, dense=True, stop_at_tolerance=False), (1.0, 1.0))
        path = interpolate_trace(res.trace)
        np.testing.assert_array_equal(path(path.t_max), res.state.x)
        assert path.t_max == pytest.approx(sum(StepSchedule.power(2.0, 10.0)(n) for n in range(50)))


class TestStatisticalInvariants:
    def test_descent_recursion(self):
        ok, detail = invariant_checks.descent_recursion()
        assert ok, detail

    def test_supermartingale(self):
        ok, detail = invariant_checks.supermartingale()
        assert ok, detail

    def test_pseudo_trajectory(self):
        ok, detail = invariant_checks.pseudo_trajectory()
        assert ok, detail
