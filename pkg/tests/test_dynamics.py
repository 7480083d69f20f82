import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad, solve_ivp

from shearlab import dynamics
from shearlab.dynamics import (FlowState, Schedule, ScheduleError, dissipation_integral, leray_project_moving,
                               linear_rhs, nonlinear_rhs, pressure_linear, pressure_nonlinear, simulate, step)
from shearlab.grid import FOURIER_NORM, SpectralField, convolve_direct, make_grid, symmetry_error
from shearlab.params import ParameterError, PhysicalParams

from conftest import random_state


def single_mode_state(grid, k, j, u1=0.0, u2=0.0, th=0.0, t=0.0):
    U = np.zeros((3,) + grid.shape, dtype=complex)
    i, m = k + grid.K, j + grid.J
    U[:, i, m] = (u1, u2, th)
    U[:, 2 * grid.K - i, 2 * grid.J - m] = np.conj(U[:, i, m])
    return FlowState.from_packed(t, grid, U)


def mode_ode(k, xi, nu, mu, gamma):
    def rhs(t, y):
        u1, u2, th = y[0] + 1j * y[1], y[2] + 1j * y[3], y[4] + 1j * y[5]
        eta = xi - k * t
        lap = k * k + eta * eta
        d1 = -nu * lap * u1 + u2 * (k * k - eta * eta) / lap + gamma ** 2 * th * k * eta / lap
        d2 = -nu * lap * u2 + u2 * 2 * k * eta / lap - gamma ** 2 * th * k * k / lap
        d3 = -mu * lap * th + u2
        return [d1.real, d1.imag, d2.real, d2.imag, d3.real, d3.imag]
    return rhs


class TestParams:
    def test_derived(self):
        p = PhysicalParams(nu=1e-3, mu=2e-3, gamma=1.0, eps=0.5)
        assert p.kappa == 1e-3
        assert p.C_gamma == 2.0
        assert p.eps_small == 0.5 / 16
        assert p.T0 == pytest.approx(1e-3 ** (-1 / 6))

    @pytest.mark.parametrize("kw", [dict(gamma=0.5), dict(gamma=0.4), dict(eps=0.0), dict(gamma=1.0, eps=1.0),
                                    dict(s=1.5), dict(delta=0.0), dict(delta=0.5), dict(s=1.7, delta=0.25),
                                    dict(nu=-1.0), dict(mu=float("nan"))])
    def test_rejects(self, kw):
        with pytest.raises(ParameterError):
            PhysicalParams(**kw)

    def test_ratio_condition_warns(self):
        with pytest.warns(RuntimeWarning):
            PhysicalParams(nu=1.0, mu=1e-4, gamma=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            PhysicalParams(nu=1e-3, mu=1e-3)
            PhysicalParams()

    def test_gamma_message_names_coercivity(self):
        with pytest.raises(ParameterError, match="coercivity"):
            PhysicalParams(gamma=0.4)


class TestPressure:
    def test_linear_zero(self, small_grid):
        assert not pressure_linear(FlowState.zeros(small_grid), PhysicalParams()).coeffs.any()

    def test_linear_k1(self):
        g = make_grid(2, 2, 2 * math.pi)
        st_ = single_mode_state(g, 1, 0, u2=1.0)
        assert pressure_linear(st_, PhysicalParams()).at(1, 0) == pytest.approx(2j)

    def test_linear_k0(self):
        g = make_grid(2, 2, 2 * math.pi)
        st_ = single_mode_state(g, 0, 1, th=1.0)
        assert pressure_linear(st_, PhysicalParams(gamma=1.0)).at(0, 1) == pytest.approx(1j)

    def test_origin_pinned(self):
        g = make_grid(2, 2, 2 * math.pi)
        st_ = single_mode_state(g, 0, 0, u1=1.0, th=1.0)
        assert pressure_linear(st_, PhysicalParams()).at(0, 0) == 0

    def test_nonlinear_zero_cases(self, small_grid, rng):
        assert not pressure_nonlinear(FlowState.zeros(small_grid)).coeffs.any()
        U = random_state(small_grid, rng).packed()
        U[1] = 0.0
        st_ = FlowState.from_packed(0.0, small_grid, U)
        assert np.max(np.abs(pressure_nonlinear(st_).coeffs)) < 1e-15

    @pytest.mark.parametrize("t", [0.0, 0.7])
    def test_nonlinear_brute_force(self, t, rng):
        g = make_grid(2, 3, 2 * math.pi)
        st_ = random_state(g, rng, t=t)
        k, xi = g.mesh
        eta = xi - k * t
        f = lambda c: SpectralField(g, c)
        u1, u2 = st_.u1.coeffs, st_.u2.coeffs
        P1 = convolve_direct(f(u2), f(1j * eta * u1)).coeffs * FOURIER_NORM
        P2 = convolve_direct(f(u2), f(1j * eta * u2)).coeffs * FOURIER_NORM
        lap = k * k + eta * eta
        ref = np.where(lap == 0, 0, 2j * (k * P1 + eta * P2) / np.where(lap == 0, 1, lap))
        got = pressure_nonlinear(st_).coeffs
        assert np.max(np.abs(got - ref)) <= 1e-10 * np.max(np.abs(ref))


class TestLinearRhs:
    def test_zero(self, small_grid):
        assert not linear_rhs(FlowState.zeros(small_grid), PhysicalParams(nu=1e-2, mu=1e-2)).total.any()

    def test_zero_mode_heat(self):
        g = make_grid(2, 2, 2 * math.pi)
        p = PhysicalParams(nu=0.3, mu=0.2)
        st_ = leray_project_moving(single_mode_state(g, 0, 1, u1=0.7, u2=0.4, th=0.5))
        assert st_.u2.at(0, 1) == 0
        tend = linear_rhs(st_, p)
        assert tend.du1.at(0, 1) == pytest.approx(-0.3 * 0.7)
        assert tend.du2.at(0, 1) == 0
        assert tend.dtheta.at(0, 1) == pytest.approx(-0.2 * 0.5)

    def test_hand_computation(self):
        g = make_grid(2, 2, 2 * math.pi)
        st_ = single_mode_state(g, 1, 0, u1=0.0, u2=1.0, th=0.0)
        tend = linear_rhs(st_, PhysicalParams(gamma=1.0))
        assert tend.du1.at(1, 0) == pytest.approx(1.0)
        assert tend.du2.at(1, 0) == pytest.approx(0.0)
        assert tend.dtheta.at(1, 0) == pytest.approx(1.0)

    @given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0, 20), gamma=st.floats(0.6, 3))
    def test_matches_quoted_system(self, seed, t, gamma):
        g = make_grid(2, 3, 5.0)
        p = PhysicalParams(nu=0.01, mu=0.01, gamma=gamma, eps=0.2)
        st_ = random_state(g, np.random.default_rng(seed), t=t)
        tend = linear_rhs(st_, p).total
        U = st_.packed()
        ode = None
        for i, k in enumerate(g.k):
            for m, xi in enumerate(g.xi):
                if k == 0 and xi == 0:
                    continue
                y = U[:, i, m]
                ode = mode_ode(k, xi, p.nu, p.mu, gamma)
                d = ode(t, [y[0].real, y[0].imag, y[1].real, y[1].imag, y[2].real, y[2].imag])
                ref = np.array([d[0] + 1j * d[1], d[2] + 1j * d[3], d[4] + 1j * d[5]])
                assert np.allclose(tend[:, i, m], ref, rtol=1e-12, atol=1e-12)

    def test_parts_symmetric(self, small_grid, rng):
        st_ = random_state(small_grid, rng, t=1.3)
        for part in (linear_rhs(st_, PhysicalParams(nu=0.1, mu=0.1)), nonlinear_rhs(st_)):
            for arr in (part.linear_stiff, part.linear_soft, part.nonlinear):
                for c in arr:
                    assert symmetry_error(c) < 1e-12


class TestNonlinearRhs:
    def test_no_velocity(self, small_grid, rng):
        U = random_state(small_grid, rng).packed()
        U[:2] = 0
        assert not np.any(np.abs(nonlinear_rhs(FlowState.from_packed(0, small_grid, U)).total) > 1e-300)

    @pytest.mark.parametrize("t", [0.0, 2.5])
    def test_direct_assembly(self, rng, t):
        g = make_grid(3, 3, 4.0)
        st_ = random_state(g, rng, t=t)
        k, xi = g.mesh
        eta = xi - k * t
        f = lambda c: SpectralField(g, c)
        conv = lambda a, b: convolve_direct(f(a), f(b)).coeffs * FOURIER_NORM
        u1, u2, th = st_.packed()
        adv = [conv(u1, 1j * k * v) + conv(u2, 1j * eta * v) for v in (u1, u2, th)]
        lap = k * k + eta * eta
        P = 2j * (k * conv(u2, 1j * eta * u1) + eta * conv(u2, 1j * eta * u2))
        p = np.where(lap == 0, 0, P / np.where(lap == 0, 1, lap))
        ref = np.stack([-adv[0] - 1j * k * p, -adv[1] - 1j * eta * p, -adv[2]])
        got = nonlinear_rhs(st_).total
        assert np.max(np.abs(got - ref)) <= 1e-10 * np.max(np.abs(ref))

    @given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0, 10))
    def test_divergence_free_forcing(self, seed, t):
        g = make_grid(3, 4, 6.0)
        st_ = random_state(g, np.random.default_rng(seed), t=t)
        F = nonlinear_rhs(st_).total
        k, xi = g.mesh
        eta = xi - k * t
        div = np.abs(k * F[0] + eta * F[1])
        scale = np.sqrt(k * k + eta * eta) * np.sqrt(np.abs(F[0]) ** 2 + np.abs(F[1]) ** 2)
        assert np.all(div <= 1e-8 * (scale + np.max(scale) * 1e-6))


class TestDissipationIntegral:
    @pytest.mark.parametrize("args,expected", [((0, 2, 0, 3), 12.0), ((1, 0, 0, 1), 4 / 3), ((1, 1, 0, 1), 4 / 3)])
    def test_examples(self, args, expected):
        assert dissipation_integral(*args) == pytest.approx(expected, rel=1e-15)

    def test_against_quadrature(self, rng):
        for _ in range(1000):
            k = float(rng.integers(-20, 21))
            xi = rng.uniform(-100, 100)
            t0 = rng.uniform(0, 50)
            t1 = t0 + rng.uniform(0, 5)
            ref, _ = quad(lambda s: k * k + (xi - k * s) ** 2, t0, t1, epsabs=0, epsrel=1e-13)
            assert dissipation_integral(k, xi, t0, t1) == pytest.approx(ref, rel=1e-12, abs=1e-300)

    def test_cubic_form(self):
        k, xi, t0, t1 = 3.0, -2.0, 1.5, 4.0
        F = lambda s: k * k * s + xi * xi * s - xi * k * s * s + k * k * s ** 3 / 3
        assert dissipation_integral(k, xi, t0, t1) == pytest.approx(F(t1) - F(t0), rel=1e-13)


class TestProjection:
    def test_example(self):
        g = make_grid(2, 2, 2 * math.pi)
        out = leray_project_moving(single_mode_state(g, 1, 1, u1=1.0))
        assert out.u1.at(1, 1) == pytest.approx(0.5)
        assert out.u2.at(1, 1) == pytest.approx(-0.5)

    def test_zero_mode(self):
        g = make_grid(2, 2, 2 * math.pi)
        out = leray_project_moving(single_mode_state(g, 0, 2, u1=0.3, u2=0.9))
        assert out.u1.at(0, 2) == 0.3
        assert out.u2.at(0, 2) == 0

    @given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0, 30))
    def test_idempotent_and_exact(self, seed, t):
        g = make_grid(3, 3, 3.0)
        r = np.random.default_rng(seed)
        U = r.standard_normal((3,) + g.shape) + 1j * r.standard_normal((3,) + g.shape)
        once = leray_project_moving(FlowState.from_packed(t, g, U))
        twice = leray_project_moving(once)
        assert np.max(np.abs(twice.packed() - once.packed())) <= 1e-15 * np.max(np.abs(U)) * 10
        assert once.constraint_residual() < 1e-12
        assert once.u2.at(0, 0) == 0


class TestStep:
    def test_zero(self, small_grid):
        out = step(FlowState.zeros(small_grid, 1.0), PhysicalParams(nu=0.1, mu=0.1), 0.25)
        assert out.t == 1.25
        assert not out.packed().any()

    def test_rejects_nonpositive_dt(self, small_grid):
        with pytest.raises(ValueError):
            step(FlowState.zeros(small_grid), PhysicalParams(), 0.0)

    def test_heat_mode_exact(self):
        g = make_grid(2, 3, 2 * math.pi)
        p = PhysicalParams(nu=0.3, mu=0.2)
        st_ = single_mode_state(g, 0, 2, u1=1.0 + 0.5j, th=-0.25)
        out = step(st_, p, 0.7, linear_only=True)
        assert out.u1.at(0, 2) == pytest.approx((1.0 + 0.5j) * math.exp(-0.3 * 4 * 0.7), rel=1e-14)
        assert out.theta.at(0, 2) == pytest.approx(-0.25 * math.exp(-0.2 * 4 * 0.7), rel=1e-14)

    @pytest.mark.parametrize("nu", [0.0, 0.01])
    def test_single_mode_vs_ode(self, nu):
        g = make_grid(1, 1, 2 * math.pi)
        p = PhysicalParams(nu=nu, mu=nu, gamma=1.0)
        st_ = single_mode_state(g, 1, 0, u1=0.0, u2=1.0, th=0.5j)
        res = simulate(st_, p, Schedule(dt=1e-3, t_end=10.0, sample_every=10000, linear_only=True,
                                        diagnostics="none"))
        sol = solve_ivp(mode_ode(1.0, 0.0, nu, nu, 1.0), (0, 10), [0, 0, 1, 0, 0, 0.5], method="DOP853",
                        rtol=1e-13, atol=1e-15)
        y = sol.y[:, -1]
        ref = np.array([y[0] + 1j * y[1], y[2] + 1j * y[3], y[4] + 1j * y[5]])
        got = res.final_state.packed()[:, 2, 1]
        assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-6

    def test_time_reversible(self):
        g = make_grid(1, 1, 2 * math.pi)
        p = PhysicalParams()
        integ = dynamics._Integrator(g, p, True)
        U0 = single_mode_state(g, 1, 0, u2=1.0, th=0.3).packed()
        U, t = U0, 0.0
        for _ in range(200):
            U = integ.step(t, U, 0.01)
            t += 0.01
        for _ in range(200):
            U = integ.step(t, U, -0.01)
            t -= 0.01
        assert np.max(np.abs(U - U0)) < 1e-6

    @given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-2, 2), b=st.floats(-2, 2))
    def test_linearity(self, seed, a, b):
        g = make_grid(2, 3, 5.0)
        r = np.random.default_rng(seed)
        p = PhysicalParams(nu=0.05, mu=0.02)
        x, y = random_state(g, r), random_state(g, r)
        comb = FlowState.from_packed(0.0, g, a * x.packed() + b * y.packed())
        adv = lambda s: step(s, p, 0.3, linear_only=True).packed()
        lhs, rhs = adv(comb), a * adv(x) + b * adv(y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    def test_constraint_before_projection(self, rng, monkeypatch):
        g = make_grid(4, 8, 8.0)
        p = PhysicalParams(nu=1e-3, mu=1e-3)
        st_ = random_state(g, rng, scale=1e-2)
        projected = step(st_, p, 0.05)
        monkeypatch.setattr(dynamics, "_project", lambda U, k, eta: U.copy())
        raw = step(st_, p, 0.05)
        assert raw.constraint_residual() < 1e-8
        change = np.linalg.norm(raw.packed() - projected.packed()) / np.linalg.norm(projected.packed())
        assert change < 1e-8


class TestSimulate:
    def test_t_end_zero(self, small_grid, rng):
        res = simulate(random_state(small_grid, rng, scale=1e-3), PhysicalParams(nu=1e-3, mu=1e-3),
                       Schedule(dt=0.1, t_end=0.0))
        assert len(res.rows) == 1 and res.rows[0].t == 0.0 and res.status == "completed"

    def test_zero_mode_closed_form(self):
        g = make_grid(2, 4, 2 * math.pi)
        p = PhysicalParams(nu=0.05, mu=0.03)
        U = np.zeros((3,) + g.shape, dtype=complex)
        U[0, 2, :] = np.arange(1, 10)
        U[2, 2, :] = np.arange(1, 10)[::-1] * 0.1
        U[0, 2, :] = 0.5 * (U[0, 2, :] + np.conj(U[0, 2, ::-1]))
        U[2, 2, :] = 0.5 * (U[2, 2, :] + np.conj(U[2, 2, ::-1]))
        res = simulate(FlowState.from_packed(0, g, U), p, Schedule(dt=0.25, t_end=5.0, linear_only=True,
                                                                   diagnostics="none"))
        xi = g.xi
        out = res.final_state.packed()
        np.testing.assert_allclose(out[0, 2], U[0, 2] * np.exp(-p.nu * xi ** 2 * 5.0), rtol=1e-13)
        np.testing.assert_allclose(out[2, 2], U[2, 2] * np.exp(-p.mu * xi ** 2 * 5.0), rtol=1e-13)
        assert not out[1, 2].any()

    def test_schedule_validation(self):
        for kw in (dict(dt=0.0, t_end=1.0), dict(dt=0.1, t_end=-1.0), dict(dt=0.1, t_end=1.0, sample_every=0),
                   dict(dt=0.1, t_end=1.0, diagnostics="all"), dict(dt=0.1, t_end=1.0, stop_factor=1.0),
                   dict(dt=0.1, t_end=1.0, max_substeps=0)):
            with pytest.raises(ScheduleError):
                Schedule(**kw)
        with pytest.raises(ScheduleError):
            Schedule(dt=0.3, t_end=1.0).n_steps(0.0)

    def test_desk_scale_nonlinear_keeps_symmetry(self):
        from shearlab.experiments import initial_state

        g = make_grid(16, 128, 8 * math.pi)
        p = PhysicalParams(nu=1e-3, mu=1e-3)
        init = initial_state(g, p, 1e-2, seed=3)
        checks = {"sym": lambda s: max(symmetry_error(c) for c in s.packed()),
                  "div": lambda s: s.constraint_residual()}
        res = simulate(init, p, Schedule(dt=0.05, t_end=2.0, sample_every=5, diagnostics="none"), observers=checks)
        assert res.status == "completed"
        assert max(res.extras["sym"]) < 1e-12
        assert max(res.extras["div"]) < 1e-8

    def test_huge_amplitude_diverges(self):
        from shearlab.experiments import initial_state

        g = make_grid(4, 16, 4 * math.pi)
        p = PhysicalParams(nu=1e-3, mu=1e-3)
        res = simulate(initial_state(g, p, 1e6, seed=1), p, Schedule(dt=0.1, t_end=5.0, sample_every=5))
        assert res.status == "diverged"
        assert res.rows[-1].flag == "diverged"
        assert res.t_diverged is not None

    def test_stop_factor_and_unresolved(self):
        from shearlab.experiments import initial_state

        g = make_grid(4, 16, 4 * math.pi)
        p = PhysicalParams(nu=1e-3, mu=1e-3)
        init = initial_state(g, p, 100.0, seed=1)
        res = simulate(init, p, Schedule(dt=0.1, t_end=50.0, diagnostics="none", max_substeps=2))
        assert res.status == "unresolved"
        assert res.rows[-1].flag == "unresolved"

    def test_checkpoint_callback(self, small_grid, rng):
        seen = []
        simulate(random_state(small_grid, rng, scale=1e-3), PhysicalParams(nu=1e-2, mu=1e-2),
                 Schedule(dt=0.1, t_end=1.0, diagnostics="none"), checkpoint=lambda s, i: seen.append((i, s.t)),
                 checkpoint_every=3)
        assert [i for i, _ in seen] == [3, 6, 9]
        assert seen[0][1] == pytest.approx(0.3)
