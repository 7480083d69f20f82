"""Energy functionals, damping norms and trajectory checks of the energy inequalities.

For a weight ``W`` the energy is::

    sum_k int W^2 (|u|^2 + gamma^2 |theta|^2 + Re(theta conj(u1))) dxi

which is a positive form in ``(u1, theta)`` exactly when ``gamma > 1/2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .dynamics import FlowState
from .multipliers import MultiplierParams, a_k, big_m, upsilon
from .params import ParameterError, PhysicalParams

CSV_COLUMNS = (
    "t", "E", "D", "Estar", "u1neq_L2", "u2_L2", "u2hat_L1", "thetaneq_L2", "hs_half_norm",
    "diss_visc", "diss_u2_weighted", "diss_k13", "diss_upsilon", "diss_t3", "dEstar_dt_fd", "flag",
)

NAN = float("nan")


@dataclass
class DiagnosticsRow:
    """One time sample.

    Dissipation entries are squared weighted norms of the long-time weight
    ``M`` applied to ``(u, theta)``; quantities outside their regime are NaN.
    """

    t: float
    E: float = NAN
    D: float = NAN
    Estar: float = NAN
    u1neq_L2: float = NAN
    u2_L2: float = NAN
    u2hat_L1: float = NAN
    thetaneq_L2: float = NAN
    hs_half_norm: float = NAN
    diss_visc: float = NAN
    diss_u2_weighted: float = NAN
    diss_k13: float = NAN
    diss_upsilon: float = NAN
    diss_t3: float = NAN
    dEstar_dt_fd: float = NAN
    flag: str = "stable"


class RegimeError(ValueError):
    pass


def coercivity_margin(gamma: float) -> float:
    """Smallest eigenvalue of [[1, 1/2], [1/2, gamma^2]]."""
    g2 = gamma * gamma
    return 0.5 * ((1.0 + g2) - math.hypot(1.0 - g2, 1.0))


def coercivity_bounds(gamma: float) -> tuple[float, float]:
    """Constants (c, C) with c |v|^2 <= form(v) <= C |v|^2 for v = (u1, u2, theta)."""
    g2 = gamma * gamma
    lam_min = coercivity_margin(gamma)
    lam_max = 0.5 * ((1.0 + g2) + math.hypot(1.0 - g2, 1.0))
    return min(lam_min, 1.0), max(lam_max, 1.0)


def coercivity_constant(gamma: float) -> float:
    """A single C(gamma) with C^-1 |v|^2 <= form(v) <= C |v|^2."""
    m = coercivity_margin(gamma)
    if m <= 0:
        raise ParameterError("no coercivity for gamma <= 1/2")
    lo, hi = coercivity_bounds(gamma)
    return max((1.0 + m) / m, hi, 1.0 / lo)


def _form(W: np.ndarray, U: np.ndarray, gamma: float, dxi: float) -> float:
    u1, u2, th = U
    w2 = W * W
    dens = np.abs(u1) ** 2 + np.abs(u2) ** 2 + gamma * gamma * np.abs(th) ** 2 + np.real(th * np.conj(u1))
    return float(np.sum(w2 * dens) * dxi)


def _require_gamma(gamma: float) -> None:
    if not gamma > 0.5:
        raise ParameterError(f"gamma={gamma} violates coercivity (gamma > 1/2 required)")


def _mparams(params) -> MultiplierParams:
    return params if isinstance(params, MultiplierParams) else MultiplierParams.from_physical(params)


def weight_energy(state: FlowState, W: np.ndarray, gamma: float) -> float:
    _require_gamma(gamma)
    return _form(W, state.packed(), gamma, state.grid.dxi)


def energy_E(state: FlowState, params) -> float:
    mp = _mparams(params)
    _require_gamma(mp.gamma)
    k, xi = state.grid.mesh
    return _form(a_k(state.t, k, xi, mp), state.packed(), mp.gamma, state.grid.dxi)


def energy_Estar(state: FlowState, params) -> float:
    mp = _mparams(params)
    _require_gamma(mp.gamma)
    if mp.kappa <= 0 or state.t < mp.T0 * (1 - 1e-12):
        raise RegimeError(f"long-time energy requires t >= kappa^(-1/6) = {mp.T0:.6g}, got t={state.t:.6g}")
    k, xi = state.grid.mesh
    return _form(big_m(state.t, k, xi, mp), state.packed(), mp.gamma, state.grid.dxi)


def energy_D(state: FlowState, params) -> float:
    mp = _mparams(params)
    return energy_E(state, mp) if state.t <= mp.T0 else energy_Estar(state, mp)


def damping_norms(state: FlowState) -> tuple[float, float, float, float]:
    g = state.grid
    nz = g.k != 0
    dxi = g.dxi
    u1, u2, th = state.u1.coeffs, state.u2.coeffs, state.theta.coeffs
    return (
        math.sqrt(float(np.sum(np.abs(u1[nz]) ** 2)) * dxi),
        math.sqrt(float(np.sum(np.abs(u2) ** 2)) * dxi),
        float(np.sum(np.abs(u2))) * dxi,
        math.sqrt(float(np.sum(np.abs(th[nz]) ** 2)) * dxi),
    )


def hs_half_weight(t: float, k, xi, s: float):
    """<k, xi - k t>^(1/2) <k, xi>^s."""
    eta = xi - k * t
    return (1.0 + k * k + eta * eta) ** 0.25 * (1.0 + k * k + xi * xi) ** (0.5 * s)


def hs_half_norm(state: FlowState, s: float, nonzero_only: bool = False) -> float:
    k, xi = state.grid.mesh
    w2 = hs_half_weight(state.t, k, xi, s) ** 2
    if nonzero_only:
        w2 = w2 * (k != 0)
    dens = np.sum(np.abs(state.packed()) ** 2, axis=0)
    return math.sqrt(float(np.sum(w2 * dens)) * state.grid.dxi)


def sobolev_norm(state: FlowState, a: float) -> float:
    """||(u, theta)||_{H^a}."""
    k, xi = state.grid.mesh
    w2 = (1.0 + k * k + xi * xi) ** a
    return math.sqrt(float(np.sum(w2 * np.sum(np.abs(state.packed()) ** 2, axis=0))) * state.grid.dxi)


@dataclass
class LongTimeTerms:
    """Squared weighted norms of M (u, theta) entering the long-time inequality."""

    Estar: float
    norm_M: float
    u2_weighted: float
    k13: float
    upsilon: float
    t3: float
    visc: float
    grad: float
    Mu_sq: float


def long_time_terms(state: FlowState, params: PhysicalParams, mparams: Optional[MultiplierParams] = None,
                    ) -> LongTimeTerms:
    mp = mparams or MultiplierParams.from_physical(params)
    t = state.t
    if mp.kappa <= 0 or t < mp.T0 * (1 - 1e-12):
        raise RegimeError(f"long-time terms require t >= kappa^(-1/6) = {mp.T0:.6g}")
    g = state.grid
    k, xi = g.mesh
    kk = np.broadcast_to(k, g.shape)
    xx = np.broadcast_to(xi, g.shape)
    M = big_m(t, kk, xx, mp)
    ups = upsilon(t, kk, xx, mp)
    U = state.packed()
    dxi = g.dxi
    Mu2 = M * M * (np.abs(U[0]) ** 2 + np.abs(U[1]) ** 2)
    Mt2 = M * M * np.abs(U[2]) ** 2
    both = Mu2 + Mt2
    eta = xx - kk * t
    lap = kk * kk + eta * eta
    nz = kk != 0
    shift = np.where(nz, xx / np.where(nz, kk, 1.0) - t, 0.0)
    c = mp.kappa ** (1.0 / 3.0)
    return LongTimeTerms(
        Estar=_form(M, U, mp.gamma, dxi),
        norm_M=math.sqrt(float(np.sum(both)) * dxi),
        u2_weighted=float(np.sum(nz * (1.0 + shift * shift) ** (0.5 * mp.delta) * M * M * np.abs(U[1]) ** 2)) * dxi,
        k13=c * float(np.sum(np.abs(kk) ** (2.0 / 3.0) * both)) * dxi,
        upsilon=float(np.sum(ups * both)) * dxi,
        t3=float(np.sum(both)) * dxi * t ** -3.0 / c,
        visc=float(np.sum(lap * (params.nu * Mu2 + params.mu * Mt2))) * dxi,
        grad=float(np.sum(lap * both)) * dxi,
        Mu_sq=float(np.sum(Mu2)) * dxi,
    )


def diagnostics_row(state: FlowState, params: PhysicalParams, mparams: Optional[MultiplierParams] = None,
                    level: str = "full", flag: str = "stable") -> DiagnosticsRow:
    mp = mparams or MultiplierParams.from_physical(params)
    row = DiagnosticsRow(t=float(state.t), flag=flag)
    row.u1neq_L2, row.u2_L2, row.u2hat_L1, row.thetaneq_L2 = damping_norms(state)
    row.hs_half_norm = hs_half_norm(state, params.s)
    if level == "none":
        return row
    row.E = energy_E(state, mp)
    long_ok = mp.kappa > 0 and state.t >= mp.T0
    if not long_ok:
        row.D = row.E
    elif level == "full":
        lt = long_time_terms(state, params, mp)
        row.Estar = row.D = lt.Estar
        row.diss_visc = lt.visc
        row.diss_u2_weighted = lt.u2_weighted
        row.diss_k13 = lt.k13
        row.diss_upsilon = lt.upsilon
        row.diss_t3 = lt.t3
    return row


def diverged_row(t: float) -> DiagnosticsRow:
    return DiagnosticsRow(t=float(t), flag="diverged")


def _centered(ts: Sequence[float], vs: Sequence[float]) -> list[float]:
    """Three-point derivative on a possibly nonuniform grid; NaN at ends and gaps."""
    out = [NAN] * len(ts)
    for i in range(1, len(ts) - 1):
        t0, t1, t2 = ts[i - 1], ts[i], ts[i + 1]
        v0, v1, v2 = vs[i - 1], vs[i], vs[i + 1]
        if not all(math.isfinite(v) for v in (v0, v1, v2)):
            continue
        h0, h1 = t1 - t0, t2 - t1
        if h0 <= 0 or h1 <= 0:
            continue
        out[i] = (-h1 / (h0 * (h0 + h1)) * v0 + (h1 - h0) / (h0 * h1) * v1 + h0 / (h1 * (h0 + h1)) * v2)
    return out


def fill_rates(rows: list[DiagnosticsRow]) -> None:
    rates = _centered([r.t for r in rows], [r.Estar for r in rows])
    for r, d in zip(rows, rates):
        r.dEstar_dt_fd = d


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".12g")


def write_csv(rows: Sequence[DiagnosticsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


def read_csv(path) -> list[DiagnosticsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}")
        for rec in reader:
            kw = {f.name: (rec[f.name] if f.name == "flag" else float(rec[f.name])) for f in fields(DiagnosticsRow)}
            rows.append(DiagnosticsRow(**kw))
    return rows


# trajectory checks --------------------------------------------------------


@dataclass
class SmallTimeReport:
    times: list
    lhs: list
    rhs: list
    max_ratio: float
    max_rel_lhs: float
    C_fit: Optional[float]
    violated: bool


def _sample_spacing_ok(states: Sequence[FlowState], max_spacing: float) -> None:
    ts = [s.t for s in states]
    if len(ts) >= 2 and max(b - a for a, b in zip(ts, ts[1:])) > max_spacing + 1e-12:
        raise ValueError(f"trajectory sampled too coarsely (spacing above {max_spacing})")


def small_time_terms(state: FlowState, params: PhysicalParams, mp: MultiplierParams) -> tuple[float, float, float]:
    """(energy, dissipation sum, ||A (u, theta)||) at one sample."""
    g = state.grid
    k, xi = g.mesh
    A = a_k(state.t, k, xi, mp)
    U = state.packed()
    gam = params.gamma
    eta = xi - k * state.t
    lap = k * k + eta * eta
    ratio = np.where(lap == 0, 0.0, k * k / np.where(lap == 0, 1.0, lap))
    Au = A * A * (np.abs(U[0]) ** 2 + np.abs(U[1]) ** 2)
    At = A * A * np.abs(U[2]) ** 2
    diss = (gam * np.sum(ratio * At) + 2.0 / gam * np.sum(A * A * np.abs(U[1]) ** 2)
            + params.eps * np.sum(lap * (params.nu * Au + params.mu * gam * gam * At))) * g.dxi
    norm = math.sqrt(float(np.sum(Au + At)) * g.dxi)
    return _form(A, U, gam, g.dxi), float(diss), norm


def check_prop_smalltime(trajectory: Sequence[FlowState], params: PhysicalParams, C_fit: Optional[float] = None,
                         tol: float = 1e-8, max_spacing: float = 0.1) -> SmallTimeReport:
    """Evaluate d/dt E + dissipation against <t> ||A (u, theta)||^3 along sampled states.

    ``max_rel_lhs`` is the largest LHS divided by the energy, to compare with
    ``tol`` for dissipation-dominated (e.g. linear) trajectories.
    """
    _sample_spacing_ok(trajectory, max_spacing)
    mp = MultiplierParams.from_physical(params)
    terms = [small_time_terms(s, params, mp) for s in trajectory]
    ts = [s.t for s in trajectory]
    dE = _centered(ts, [e for e, _, _ in terms])
    times, lhs, rhs = [], [], []
    max_ratio, max_rel = 0.0, -math.inf
    violated = False
    for i in range(1, len(ts) - 1):
        e, diss, norm = terms[i]
        L = dE[i] + diss
        R = math.sqrt(1.0 + ts[i] ** 2) * norm ** 3
        times.append(ts[i])
        lhs.append(L)
        rhs.append(R)
        if e > 0:
            max_rel = max(max_rel, L / e)
        if R > 0:
            max_ratio = max(max_ratio, L / R)
        if C_fit is not None and L > 0 and L > C_fit * R:
            violated = True
    if not times:
        max_rel = 0.0
    return SmallTimeReport(times, lhs, rhs, max_ratio, max_rel, C_fit, violated)


@dataclass
class LongTimeReport:
    times: list
    dEstar: list
    Estar: list
    monotone: Optional[bool]
    worst_rel_rate: float
    hypothesis_met: bool
    lhs: list
    rhs: list
    max_ratio: float
    smallness: list


def check_prop_longtime(trajectory: Sequence[FlowState], params: PhysicalParams, c2: float = 1.0,
                        mparams: Optional[MultiplierParams] = None, rel_tol: float = 1e-10,
                        abs_tol: float = 1e-14) -> LongTimeReport:
    """Monotonicity of E_* and the aggregate long-time inequality along sampled states.

    When the smallness ``||M (u, theta)|| <= c2 kappa^(1/3)`` fails at some
    sample the report states the hypothesis as unmet and ``monotone`` carries
    no verdict.
    """
    mp = mparams or MultiplierParams.from_physical(params)
    for s in trajectory:
        if s.t < mp.T0 * (1 - 1e-12):
            raise RegimeError(f"sample at t={s.t:.6g} precedes kappa^(-1/6) = {mp.T0:.6g}")
    terms = [long_time_terms(s, params, mp) for s in trajectory]
    ts = [s.t for s in trajectory]
    Es = [lt.Estar for lt in terms]
    dE = _centered(ts, Es)
    c = mp.kappa ** (1.0 / 3.0)
    eps1 = params.eps / 4.0
    smallness = [lt.norm_M / c for lt in terms]
    hyp = all(v <= c2 for v in smallness)
    monotone, worst = True, -math.inf
    lhs, rhs = [], []
    max_ratio = 0.0
    times, rates = [], []
    for i in range(1, len(ts) - 1):
        lt = terms[i]
        times.append(ts[i])
        rates.append(dE[i])
        if lt.Estar > 0:
            worst = max(worst, dE[i] / lt.Estar)
        if dE[i] > rel_tol * lt.Estar + abs_tol:
            monotone = False
        L = dE[i] + eps1 * (lt.u2_weighted + lt.k13 + lt.upsilon + lt.t3 + params.nu * lt.grad)
        R = lt.norm_M * (lt.k13 / c + c * c * lt.grad + lt.Mu_sq * ts[i] ** -3.0 / (c * c)
                         + lt.u2_weighted / c + lt.upsilon / c)
        lhs.append(L)
        rhs.append(R)
        if R > 0:
            max_ratio = max(max_ratio, L / R)
    if not times:
        worst = 0.0
    return LongTimeReport(times, rates, [Es[i] for i in range(1, len(ts) - 1)], monotone if hyp else None,
                          worst, hyp, lhs, rhs, max_ratio, smallness)
