"""Decay fits, enhanced-dissipation scaling, Gronwall envelopes and threshold scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import FlowState, Schedule, SimulationResult, leray_project_moving, simulate
from .energy import hs_half_norm, sobolev_norm
from .grid import SpectralGrid, symmetrize
from .params import PhysicalParams

FAMILIES = ("band_limited", "phase_mixed")


class RunDiverged(RuntimeError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by the seed and a stream path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def _envelope(grid: SpectralGrid, family: str, band_limits) -> np.ndarray:
    k, xi = grid.mesh
    kmax, ximax = band_limits if band_limits is not None else (grid.K / 2.0, grid.J * grid.dxi / 2.0)
    band = (np.abs(k) <= kmax) & (np.abs(xi) <= ximax)
    if family == "band_limited":
        return band.astype(float)
    if family == "phase_mixed":
        # nonzero modes already past their critical time, weighted log-uniformly in |xi/k|
        ratio = np.where(k != 0, xi / np.where(k == 0, 1.0, k), 0.0)
        keep = band & (k != 0) & (ratio <= -1.0)
        return np.where(keep, 1.0 / np.maximum(np.abs(ratio), 1.0), 0.0)
    raise ValueError(f"unknown initial-data family {family!r}; expected one of {FAMILIES}")


def initial_state(grid: SpectralGrid, params: PhysicalParams, amplitude: float, seed: int,
                  family: str = "band_limited", band_limits=None) -> FlowState:
    """Random reality-symmetric, constraint-satisfying data with ||(u, theta)||_{H^{s+1/2}} = amplitude."""
    if not amplitude > 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    env = _envelope(grid, family, band_limits)
    rng = make_rng(seed, 0)
    raw = rng.standard_normal((3, 2) + grid.shape)
    U = np.stack([symmetrize((raw[i, 0] + 1j * raw[i, 1]) * env) for i in range(3)])
    st = leray_project_moving(FlowState.from_packed(0.0, grid, U))
    norm = sobolev_norm(st, params.s + 0.5)
    if norm == 0:
        raise ValueError("band limits leave no modes")
    return FlowState.from_packed(0.0, grid, st.packed() * (amplitude / norm))


@dataclass
class RunConfig:
    grid: SpectralGrid
    params: PhysicalParams
    amplitude: float
    seed: int
    schedule: Schedule
    family: str = "band_limited"
    band_limits: Optional[tuple] = None
    T_max: Optional[float] = None
    stability_factor: float = 10.0
    J_sum: int = 2000

    def __post_init__(self) -> None:
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown initial-data family {self.family!r}")
        if self.T_max is not None and self.params.kappa > 0 and not self.T_max > self.params.T0:
            raise ValueError(f"T_max={self.T_max} must exceed kappa^(-1/6)={self.params.T0:.6g}")
        if not self.stability_factor > 1:
            raise ValueError("stability_factor must exceed 1")

    def initial(self) -> FlowState:
        return initial_state(self.grid, self.params, self.amplitude, self.seed, self.family, self.band_limits)


@dataclass
class FitResult:
    value: float
    window: tuple
    residual: float
    half_width: float
    n_points: int
    ok: bool = True
    extra: dict = field(default_factory=dict)


def _window(series, window):
    t = np.asarray([p[0] for p in series], dtype=float)
    v = np.asarray([p[1] for p in series], dtype=float)
    lo, hi = window
    m = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    t, v = t[m], v[m]
    if t.size < 3:
        raise ValueError(f"fewer than 3 samples inside the window {window}")
    if np.any(~(v > 0)):
        raise ValueError("fit requires positive values inside the window")
    return t, v


def _lstsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return coef, float(np.sqrt(np.mean(res * res)))


def _jackknife(X: np.ndarray, y: np.ndarray, col: int, blocks: int = 5) -> float:
    n = y.size
    if n < blocks * 2:
        blocks = max(2, n // 2)
    edges = np.linspace(0, n, blocks + 1).astype(int)
    est = []
    for b in range(blocks):
        keep = np.ones(n, dtype=bool)
        keep[edges[b]:edges[b + 1]] = False
        if keep.sum() < X.shape[1] + 1:
            continue
        est.append(_lstsq(X[keep], y[keep])[0][col])
    est = np.asarray(est)
    if est.size < 2:
        return 0.0
    se = math.sqrt((est.size - 1) / est.size * float(np.sum((est - est.mean()) ** 2)))
    return 2.0 * se


def fit_power_decay(series: Sequence[tuple], window=(10.0, 100.0)) -> FitResult:
    """Least-squares slope of log(value) against log(t)."""
    t, v = _window(series, window)
    X = np.column_stack([np.ones_like(t), np.log(t)])
    y = np.log(v)
    coef, res = _lstsq(X, y)
    return FitResult(float(coef[1]), tuple(window), res, _jackknife(X, y, 1), int(t.size))


def fit_exp_rate(series: Sequence[tuple], window, max_residual: float = 0.05) -> FitResult:
    """Fit log v = a + b log t - r t and return the rate r.

    ``ok`` is False when the rms log-residual exceeds ``max_residual``, i.e.
    the data are not a single power-law-modulated exponential.
    """
    t, v = _window(series, window)
    X = np.column_stack([np.ones_like(t), np.log(t), -t])
    y = np.log(v)
    coef, res = _lstsq(X, y)
    return FitResult(float(coef[2]), tuple(window), res, _jackknife(X, y, 2), int(t.size),
                     ok=res <= max_residual, extra={"power": float(coef[1])})


@dataclass
class ScalingResult:
    slope: float
    intercept: float
    kappas: list
    rates: list
    half_width: float


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([np.ones_like(lx), lx])
    coef, _ = _lstsq(A, ly)
    return float(coef[1]), float(coef[0])


def leave_one_out(x, y) -> list[float]:
    out = []
    for i in range(len(x)):
        xs = [v for j, v in enumerate(x) if j != i]
        ys = [v for j, v in enumerate(y) if j != i]
        if len(xs) >= 2:
            out.append(loglog_slope(xs, ys)[0])
    return out


def measure_ed_rate(config: RunConfig, kappa: float, T_max: Optional[float] = None) -> FitResult:
    """Linear run with nu = mu = kappa; rate of the nonzero-mode weighted norm over [kappa^(-1/6), T_max]."""
    params = replace(config.params, nu=kappa, mu=kappa)
    T_max = T_max if T_max is not None else 3.0 * kappa ** (-1.0 / 3.0)
    dt = config.schedule.dt
    n = max(1, int(round(T_max / dt)))
    sched = Schedule(dt=dt, t_end=n * dt, sample_every=config.schedule.sample_every, linear_only=True,
                     diagnostics="none")
    init = initial_state(config.grid, params, config.amplitude, config.seed, config.family, config.band_limits)
    res = simulate(init, params, sched, observers={"hs_neq": lambda st: hs_half_norm(st, params.s, True)})
    if res.status != "completed":
        raise RunDiverged(f"linear run at kappa={kappa} ended with status {res.status}")
    series = list(zip([r.t for r in res.rows], res.extras["hs_neq"]))
    return fit_exp_rate(series, (kappa ** (-1.0 / 6.0), n * dt), max_residual=math.inf)


def ed_rate_scaling(kappas: Sequence[float], measure: Optional[Callable[[float], object]] = None,
                    config: Optional[RunConfig] = None) -> ScalingResult:
    """Regress log(rate) on log(kappa); ``measure(kappa)`` returns a rate or a FitResult."""
    kappas = [float(k) for k in kappas]
    if len(kappas) < 4:
        raise ValueError("need at least 4 kappa values")
    if min(kappas) <= 0 or math.log10(max(kappas) / min(kappas)) < 3 - 1e-9:
        raise ValueError("kappa values must be positive and span at least 3 decades")
    if measure is None:
        if config is None:
            raise ValueError("either measure or config is required")
        measure = lambda kap: measure_ed_rate(config, kap)
    rates = []
    for kap in kappas:
        r = measure(kap)
        r = r.value if isinstance(r, FitResult) else float(r)
        if not r > 0:
            raise ValueError(f"nonpositive rate {r} at kappa={kap}")
        rates.append(r)
    slope, icpt = loglog_slope(kappas, rates)
    loo = leave_one_out(kappas, rates)
    hw = max(abs(s - slope) for s in loo) if loo else 0.0
    return ScalingResult(slope, icpt, kappas, rates, hw)


@dataclass
class GronwallReport:
    C_required: float
    C_min: float
    holds: bool
    tightness: float
    times: list
    envelope: list


def gronwall_envelope(times: Sequence[float], energies: Sequence[float], C: Optional[float] = None) -> GronwallReport:
    """Smallest C for which sqrt(E) <= sqrt(E0)/(1 - C (t + t^2) sqrt(E0)) along the samples.

    ``C_required`` is the supremum over samples of the pointwise requirement
    (negative when E decreases throughout); ``C_min = max(C_required, 0)``.
    """
    ts = np.asarray(times, float)
    Es = np.asarray(energies, float)
    E0 = float(Es[0])
    if E0 <= 0:
        return GronwallReport(0.0, 0.0, bool(np.all(Es <= 0)), 0.0, ts.tolist(), [0.0] * ts.size)
    r0 = math.sqrt(E0)
    m = ts > ts[0]
    tt = ts[m] - ts[0]
    req = (1.0 - r0 / np.sqrt(np.maximum(Es[m], 1e-300))) / ((tt + tt * tt) * r0)
    c_req = float(req.max()) if req.size else 0.0
    c_use = max(c_req, 0.0) if C is None else C
    tt_all = ts - ts[0]
    denom = 1.0 - c_use * (tt_all + tt_all ** 2) * r0
    env = np.where(denom > 0, r0 / np.where(denom > 0, denom, 1.0), np.inf)
    holds = bool(np.all(np.sqrt(Es) <= env * (1 + 1e-12)))
    tight = float(np.max(np.sqrt(Es) / env)) if np.all(np.isfinite(env)) else 0.0
    return GronwallReport(c_req, max(c_req, 0.0), holds, tight, ts.tolist(), env.tolist())


@dataclass
class BisectionResult:
    kappa: float
    a_star: float
    verdict: str
    tested: list
    monotone: bool


@dataclass
class ThresholdReport:
    alpha: float
    intercept: float
    jackknife: tuple
    results: list
    monotone_in_kappa: bool
    censored: list


def bisect_threshold(kappa: float, classifier: Callable[[float, float], bool], a_lo: float, a_hi: float,
                     depth: int) -> BisectionResult:
    """Geometric bisection for the largest stable amplitude in [a_lo, a_hi]."""
    if depth < 1:
        raise ValueError("bisection depth must be positive")
    tested = []

    def run(a):
        ok = bool(classifier(kappa, a))
        tested.append((a, ok))
        return ok

    lo_ok = run(a_lo)
    hi_ok = run(a_hi)
    if lo_ok and hi_ok:
        return BisectionResult(kappa, a_hi, "censored_all_stable", tested, True)
    if not lo_ok and not hi_ok:
        return BisectionResult(kappa, a_lo, "censored_all_unstable", tested, True)
    if not lo_ok:
        return BisectionResult(kappa, a_lo, "censored_inverted", tested, False)
    lo, hi = a_lo, a_hi
    for _ in range(depth):
        mid = math.sqrt(lo * hi)
        if run(mid):
            lo = mid
        else:
            hi = mid
    stable = [a for a, ok in tested if ok]
    unstable = [a for a, ok in tested if not ok]
    monotone = not unstable or not stable or max(stable) < min(unstable)
    return BisectionResult(kappa, math.sqrt(lo * hi), "resolved", tested, monotone)


def threshold_scan(kappas: Sequence[float], classifier: Callable[[float, float], bool], a_lo: float, a_hi: float,
                   depth: int = 6) -> ThresholdReport:
    """Bisect a*(kappa) for each kappa and regress log a* on log kappa."""
    if not kappas:
        raise ValueError("no kappa values given")
    results = [bisect_threshold(k, classifier, a_lo, a_hi, depth) for k in kappas]
    good = [r for r in results if r.verdict == "resolved"]
    censored = [r.kappa for r in results if r.verdict != "resolved"]
    if len(good) >= 2:
        alpha, icpt = loglog_slope([r.kappa for r in good], [r.a_star for r in good])
        loo = leave_one_out([r.kappa for r in good], [r.a_star for r in good])
        jk = (min(loo), max(loo)) if loo else (alpha, alpha)
    else:
        alpha, icpt, jk = math.nan, math.nan, (math.nan, math.nan)
    ordered = sorted(good, key=lambda r: r.kappa)
    mono = all(a.a_star <= b.a_star for a, b in zip(ordered, ordered[1:]))
    return ThresholdReport(alpha, icpt, jk, results, mono, censored)


def nonlinear_classifier(config: RunConfig, T_max_factor: float = 5.0,
                         max_substeps: Optional[int] = 64) -> Callable[[float, float], bool]:
    """Stable iff the weighted H^s norm stays within stability_factor of its initial value up to T_max.

    T_max is ``config.T_max`` when set, else ``T_max_factor * kappa^(-1/3)``.
    Runs whose advective step restriction exceeds ``max_substeps`` count as unstable.
    """

    def classify(kappa: float, amplitude: float) -> bool:
        params = replace(config.params, nu=kappa, mu=kappa)
        T_max = config.T_max if config.T_max is not None else T_max_factor * kappa ** (-1.0 / 3.0)
        dt = config.schedule.dt
        n = max(1, int(math.ceil(T_max / dt)))
        sched = Schedule(dt=dt, t_end=n * dt, sample_every=config.schedule.sample_every, linear_only=False,
                         diagnostics="none", stop_factor=config.stability_factor,
                         max_substeps=max_substeps)
        init = initial_state(config.grid, params, amplitude, config.seed, config.family, config.band_limits)
        return simulate(init, params, sched).status == "completed"

    return classify
