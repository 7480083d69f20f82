"""Boussinesq perturbation of Couette flow in the moving frame X = x - y t.

In Fourier variables ``(k, xi)`` with ``eta = xi - k t`` and ``|.|^2 = k^2 + eta^2``::

    d u1 = -nu |.|^2 u1 + u2 (k^2 - eta^2)/|.|^2 + gamma^2 theta k eta/|.|^2 + F1
    d u2 = -nu |.|^2 u2 + u2 2 k eta/|.|^2     - gamma^2 theta k^2/|.|^2  + F2
    d th = -mu |.|^2 th + u2 + G

subject to ``k u1 + eta u2 = 0``. Dissipation is integrated exactly through
the factor ``exp(-nu * int |.|^2 dtau)``; everything else goes through RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import FOURIER_NORM, SpectralField, SpectralGrid, from_physical, to_physical
from .params import PhysicalParams


class BlowUpError(RuntimeError):
    def __init__(self, t: float, message: str = "non-finite values"):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


class ScheduleError(ValueError):
    pass


@dataclass
class FlowState:
    t: float
    u1: SpectralField
    u2: SpectralField
    theta: SpectralField

    @property
    def grid(self) -> SpectralGrid:
        return self.u1.grid

    def packed(self) -> np.ndarray:
        return np.stack([self.u1.coeffs, self.u2.coeffs, self.theta.coeffs])

    @classmethod
    def from_packed(cls, t: float, grid: SpectralGrid, U: np.ndarray) -> "FlowState":
        return cls(float(t), SpectralField(grid, U[0]), SpectralField(grid, U[1]), SpectralField(grid, U[2]))

    @classmethod
    def zeros(cls, grid: SpectralGrid, t: float = 0.0) -> "FlowState":
        return cls.from_packed(t, grid, np.zeros((3,) + grid.shape, dtype=complex))

    def constraint_residual(self) -> float:
        """Largest relative defect of k u1 + eta u2 = 0 over the lattice."""
        k, eta = symbols(self.grid, self.t)
        u1, u2 = self.u1.coeffs, self.u2.coeffs
        defect = np.abs(k * u1 + eta * u2)
        scale = np.sqrt(k * k + eta * eta) * np.sqrt(np.abs(u1) ** 2 + np.abs(u2) ** 2) + 1e-300
        return float(np.max(defect / scale))


@dataclass
class Tendency:
    """Right-hand side split by origin; each part is a packed (3, nk, nj) array."""

    grid: SpectralGrid
    linear_stiff: np.ndarray
    linear_soft: np.ndarray
    nonlinear: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.linear_stiff + self.linear_soft + self.nonlinear

    @property
    def du1(self) -> SpectralField:
        return SpectralField(self.grid, self.total[0])

    @property
    def du2(self) -> SpectralField:
        return SpectralField(self.grid, self.total[1])

    @property
    def dtheta(self) -> SpectralField:
        return SpectralField(self.grid, self.total[2])


def symbols(grid: SpectralGrid, t: float) -> tuple[np.ndarray, np.ndarray]:
    k, xi = grid.mesh
    return np.broadcast_to(k, grid.shape), xi - k * t


def _inv_lap(k: np.ndarray, eta: np.ndarray) -> np.ndarray:
    lap = k * k + eta * eta
    with np.errstate(divide="ignore"):
        inv = np.where(lap == 0, 0.0, 1.0 / np.where(lap == 0, 1.0, lap))
    return inv


def dissipation_integral(k, xi, t0, t1):
    """Integral of k^2 + (xi - k tau)^2 over [t0, t1].

    Uses k^2 (t1 - t0) + (t1 - t0)(a^2 + a b + b^2)/3 with a = xi - k t0 and
    b = xi - k t1, which equals the cubic polynomial in tau without its
    cancellation at large times.
    """
    k = np.asarray(k, dtype=float)
    xi = np.asarray(xi, dtype=float)
    dt = t1 - t0
    a = xi - k * t0
    b = xi - k * t1
    return k * k * dt + dt * (a * a + a * b + b * b) / 3.0


def _soft(U: np.ndarray, k: np.ndarray, eta: np.ndarray, gamma: float) -> np.ndarray:
    inv = _inv_lap(k, eta)
    u2, th = U[1], U[2]
    g2 = gamma * gamma
    out = np.empty_like(U)
    out[0] = u2 * ((k * k - eta * eta) * inv) + g2 * th * (k * eta * inv)
    out[1] = u2 * (2.0 * k * eta * inv) - g2 * th * (k * k * inv)
    out[2] = np.where(inv == 0, 0.0, u2)
    return out


def _stiff(U: np.ndarray, k: np.ndarray, eta: np.ndarray, nu: float, mu: float) -> np.ndarray:
    lap = k * k + eta * eta
    return np.stack([-nu * lap * U[0], -nu * lap * U[1], -mu * lap * U[2]])


def _products(grid: SpectralGrid, U: np.ndarray, k: np.ndarray, eta: np.ndarray) -> dict[str, np.ndarray]:
    """Fourier coefficients of the quadratic products (already normalized)."""
    ik, ie = 1j * k, 1j * eta
    u1, u2, th = U
    phys = to_physical(np.stack([u1, u2, ik * u1, ie * u1, ik * u2, ie * u2, ik * th, ie * th]), grid)
    p_u1, p_u2, d1u1, d2u1, d1u2, d2u2, d1th, d2th = phys
    a2u1 = p_u2 * d2u1
    a2u2 = p_u2 * d2u2
    prods = np.stack([p_u1 * d1u1 + a2u1, p_u1 * d1u2 + a2u2, p_u1 * d1th + p_u2 * d2th, a2u1, a2u2])
    hat = from_physical(prods, grid) * (grid.dxi * FOURIER_NORM)
    return {"adv_u1": hat[0], "adv_u2": hat[1], "adv_th": hat[2], "p1": hat[3], "p2": hat[4]}


def _pressure_nl(prods, k, eta) -> np.ndarray:
    return 2j * (k * prods["p1"] + eta * prods["p2"]) * _inv_lap(k, eta)


def _nonlinear(grid: SpectralGrid, U: np.ndarray, k: np.ndarray, eta: np.ndarray) -> np.ndarray:
    prods = _products(grid, U, k, eta)
    p = _pressure_nl(prods, k, eta)
    return np.stack([-prods["adv_u1"] - 1j * k * p, -prods["adv_u2"] - 1j * eta * p, -prods["adv_th"]])


def _project(U: np.ndarray, k: np.ndarray, eta: np.ndarray) -> np.ndarray:
    s = (k * U[0] + eta * U[1]) * _inv_lap(k, eta)
    out = U.copy()
    out[0] = U[0] - k * s
    out[1] = U[1] - eta * s
    out[1][(k == 0) & (eta == 0)] = 0.0
    return out


def pressure_linear(state: FlowState, params: PhysicalParams) -> SpectralField:
    k, eta = symbols(state.grid, state.t)
    val = (2j * k * state.u2.coeffs + 1j * params.gamma ** 2 * eta * state.theta.coeffs) * _inv_lap(k, eta)
    return SpectralField(state.grid, val)


def pressure_nonlinear(state: FlowState) -> SpectralField:
    k, eta = symbols(state.grid, state.t)
    prods = _products(state.grid, state.packed(), k, eta)
    return SpectralField(state.grid, _pressure_nl(prods, k, eta))


def linear_rhs(state: FlowState, params: PhysicalParams) -> Tendency:
    k, eta = symbols(state.grid, state.t)
    U = state.packed()
    return Tendency(state.grid, _stiff(U, k, eta, params.nu, params.mu), _soft(U, k, eta, params.gamma),
                    np.zeros_like(U))


def nonlinear_rhs(state: FlowState, params: Optional[PhysicalParams] = None) -> Tendency:
    k, eta = symbols(state.grid, state.t)
    U = state.packed()
    zero = np.zeros_like(U)
    return Tendency(state.grid, zero, zero.copy(), _nonlinear(state.grid, U, k, eta))


def leray_project_moving(state: FlowState) -> FlowState:
    k, eta = symbols(state.grid, state.t)
    return FlowState.from_packed(state.t, state.grid, _project(state.packed(), k, eta))


class _Integrator:
    """Integrating-factor RK4 on packed arrays."""

    def __init__(self, grid: SpectralGrid, params: PhysicalParams, linear_only: bool):
        self.grid = grid
        self.params = params
        self.linear_only = linear_only
        k, xi = grid.mesh
        self.k = np.broadcast_to(k, grid.shape)
        self.xi = np.broadcast_to(xi, grid.shape)
        self.rates = np.array([params.nu, params.nu, params.mu])[:, None, None]

    def factor(self, t0: float, t1: float) -> np.ndarray:
        if self.params.nu == 0 and self.params.mu == 0:
            return np.ones((3, 1, 1))
        return np.exp(-self.rates * dissipation_integral(self.k, self.xi, t0, t1)[None])

    def rhs(self, t: float, U: np.ndarray) -> np.ndarray:
        eta = self.xi - self.k * t
        out = _soft(U, self.k, eta, self.params.gamma)
        if not self.linear_only:
            out += _nonlinear(self.grid, U, self.k, eta)
        return out

    def step(self, t: float, U: np.ndarray, h: float) -> np.ndarray:
        th = t + 0.5 * h
        e_half = self.factor(t, th)
        e_half2 = self.factor(th, t + h)
        e_full = e_half * e_half2
        k1 = self.rhs(t, U)
        k2 = self.rhs(th, e_half * (U + 0.5 * h * k1))
        k3 = self.rhs(th, e_half * U + 0.5 * h * k2)
        k4 = self.rhs(t + h, e_full * U + h * e_half2 * k3)
        new = e_full * (U + h / 6.0 * k1) + h / 6.0 * (2.0 * e_half2 * (k2 + k3) + k4)
        return _project(new, self.k, self.xi - self.k * (t + h))

    def sup_estimate(self, U: np.ndarray) -> float:
        return float(np.sum(np.abs(U[:2]), axis=(1, 2)).max()) * self.grid.dxi * FOURIER_NORM

    def guard(self, t: float, U: np.ndarray) -> float:
        if self.linear_only:
            return math.inf
        kmax = self.grid.K
        emax = max(abs(self.grid.J * self.grid.dxi) + kmax * abs(t), kmax)
        return 0.5 / max(1.0, math.hypot(kmax, emax) * self.sup_estimate(U))


def step(state: FlowState, params: PhysicalParams, dt: float, linear_only: bool = False,
         allow_reverse: bool = False) -> FlowState:
    """Advance by one integrating-factor RK4 step and re-project the constraint.

    ``allow_reverse`` permits ``dt < 0`` for dissipation-free round trips.
    """
    if not dt > 0:
        if not (allow_reverse and dt != 0 and params.nu == 0 and params.mu == 0):
            raise ValueError(f"dt must be positive, got {dt}")
    integ = _Integrator(state.grid, params, linear_only)
    U = integ.step(state.t, state.packed(), dt)
    if not np.all(np.isfinite(U)):
        raise BlowUpError(state.t + dt)
    return FlowState.from_packed(state.t + dt, state.grid, U)


@dataclass(frozen=True)
class Schedule:
    dt: float
    t_end: float
    sample_every: int = 1
    linear_only: bool = False
    #: "basic" skips the long-time weighted quantities, "full" computes them when t >= kappa^(-1/6)
    diagnostics: str = "full"
    #: stop once the tracked weighted norm exceeds this multiple of its initial value
    stop_factor: Optional[float] = None
    #: give up (status "unresolved") when the advective guard needs more substeps than this
    max_substeps: Optional[int] = None
    #: a step needing more substeps than this is a step-size collapse and counts as divergence
    collapse_substeps: int = 10_000

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ScheduleError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ScheduleError(f"t_end must be nonnegative, got {self.t_end}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ScheduleError(f"sample_every must be a positive integer, got {self.sample_every}")
        if self.diagnostics not in ("basic", "full", "none"):
            raise ScheduleError(f"unknown diagnostics level {self.diagnostics!r}")
        if self.stop_factor is not None and not self.stop_factor > 1:
            raise ScheduleError(f"stop_factor must exceed 1, got {self.stop_factor}")
        if self.max_substeps is not None and self.max_substeps < 1:
            raise ScheduleError(f"max_substeps must be positive, got {self.max_substeps}")
        if self.collapse_substeps < 1:
            raise ScheduleError(f"collapse_substeps must be positive, got {self.collapse_substeps}")

    def n_steps(self, t_start: float) -> int:
        span = self.t_end - t_start
        if span < -1e-12:
            raise ScheduleError(f"t_end={self.t_end} lies before the initial time {t_start}")
        n = span / self.dt
        m = int(round(n))
        if abs(n - m) > 1e-6 * max(1.0, n):
            raise ScheduleError(f"t_end - t0 = {span} is not a multiple of dt = {self.dt}")
        return max(m, 0)


@dataclass
class SimulationResult:
    rows: list
    status: str
    final_state: FlowState
    t_diverged: Optional[float] = None
    states: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def simulate(initial: FlowState, params: PhysicalParams, schedule: Schedule, *, mparams=None,
             observers: Optional[dict[str, Callable[[FlowState], float]]] = None, keep_states: bool = False,
             checkpoint: Optional[Callable[[FlowState, int], None]] = None, checkpoint_every: int = 0,
             ) -> SimulationResult:
    """Run the schedule from ``initial`` and collect one diagnostics row per sample.

    ``observers`` map names to scalar functions of the state evaluated at each
    sample (results in ``extras``). ``checkpoint(state, sample_index)`` is called
    every ``checkpoint_every`` samples.
    """
    from .energy import diagnostics_row, fill_rates
    from .multipliers import MultiplierParams

    if mparams is None:
        mparams = MultiplierParams.from_physical(params)
    grid = initial.grid
    integ = _Integrator(grid, params, schedule.linear_only)
    n_steps = schedule.n_steps(initial.t)
    observers = observers or {}
    extras = {name: [] for name in observers}
    rows, states = [], []
    t = float(initial.t)
    U = initial.packed()
    status, t_div = "completed", None
    ref_norm = None
    n_samples = 0

    def record(t_now, U_now, flag="stable"):
        nonlocal ref_norm, n_samples
        st = FlowState.from_packed(t_now, grid, U_now)
        row = diagnostics_row(st, params, mparams, level=schedule.diagnostics, flag=flag)
        rows.append(row)
        for name, fn in observers.items():
            extras[name].append(float(fn(st)))
        if keep_states:
            states.append(st)
        if ref_norm is None:
            ref_norm = row.hs_half_norm
        if checkpoint is not None and checkpoint_every and n_samples % checkpoint_every == 0 and n_samples > 0:
            checkpoint(st, n_samples)
        n_samples += 1
        return row

    record(t, U)
    for n in range(1, n_steps + 1):
        h_goal = schedule.dt
        g = integ.guard(t, U)
        if not g > 0 or h_goal / g > schedule.collapse_substeps:
            status, t_div = "diverged", t
            break
        sub = max(1, math.ceil(h_goal / g - 1e-12))
        if schedule.max_substeps is not None and sub > schedule.max_substeps:
            status = "unresolved"
            if rows:
                rows[-1].flag = "unresolved"
            break
        h = h_goal / sub
        t_target = t + h_goal
        try:
            for i in range(sub):
                t_next = t_target if i == sub - 1 else t + h
                U = integ.step(t, U, t_next - t)
                t = t_next
                if not np.all(np.isfinite(U)):
                    raise BlowUpError(t)
        except (BlowUpError, FloatingPointError, OverflowError):
            status, t_div = "diverged", t
            break
        if n % schedule.sample_every == 0 or n == n_steps:
            row = record(t, U)
            if not math.isfinite(row.hs_half_norm):
                status, t_div = "diverged", t
                row.flag = "diverged"
                break
            if schedule.stop_factor is not None and ref_norm and row.hs_half_norm > schedule.stop_factor * ref_norm:
                status = "unstable"
                row.flag = "unstable"
                break
    if status == "diverged" and (not rows or rows[-1].flag != "diverged"):
        from .energy import diverged_row

        rows.append(diverged_row(t_div))
    fill_rates(rows)
    final = FlowState.from_packed(t, grid, U) if status != "diverged" else FlowState.from_packed(
        t, grid, np.where(np.isfinite(U), U, np.nan))
    return SimulationResult(rows, status, final, t_div, states, extras)
