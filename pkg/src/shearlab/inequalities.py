"""Randomized train/held-out checks of the multiplier inequalities.

Each check draws a training batch and a held-out batch from a seeded
counter-based generator, evaluates the ratio LHS/RHS of every display with
all constants set to one, fits ``C_fit = margin * max(train)`` and passes
when every held-out ratio is at most ``C_fit``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from numba import types
from scipy import LowLevelCallable
from scipy.integrate import IntegrationWarning, quad

from .experiments import make_rng
from .multipliers import a_k, big_m, m0, m1, m2, m3, upsilon
from .params import MultiplierParams, ParameterError

LEMMAS = ("poisson", "damping", "m0_gradient", "m0_difference", "ak_commutator", "m_lipschitz", "m_commutator",
          "trilinear")


@dataclass(frozen=True)
class SampleSpec:
    n_train: int = 10_000
    n_heldout: int = 10_000
    seed: int = 0
    t_range: tuple = (0.0, 1e3)
    k_max: int = 64
    xi_max: float = 1e3
    heavy_fraction: float = 0.5
    lams: tuple = (0.5, 1.0, 2.0)
    kappas: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    gamma: float = 1.0
    s: float = 2.0
    delta: float = 0.25
    eps: float = 0.5
    J_sum: int = 2000
    #: held-out ranges are the training ranges scaled by this factor
    heldout_widen: float = 1.0
    margin: float = 1.05
    grid_K: int = 6
    grid_J: int = 6
    grid_dxi: float = 0.5
    trilinear_kappa: float = 1e-3
    trilinear_times: tuple = (4.0, 10.0, 40.0)
    #: local ascent from the largest training ratios (0 starts disables it)
    ascent_starts: int = 32
    ascent_rounds: int = 60
    ascent_proposals: int = 8

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_heldout < 1:
            raise ValueError("sample counts must be positive")
        lo, hi = self.t_range
        if not 0 <= lo < hi:
            raise ValueError(f"empty or negative t range {self.t_range}")
        if self.k_max < 1 or not self.xi_max > 0:
            raise ValueError("k and xi ranges must be nonempty")
        if not 0 <= self.heavy_fraction <= 1:
            raise ValueError("heavy_fraction must lie in [0, 1]")
        if not self.lams or min(self.lams) <= 0:
            raise ValueError("lambda values must be positive")
        if not self.kappas or min(self.kappas) <= 0 or max(self.kappas) >= 1:
            raise ValueError("kappa values must lie in (0, 1)")
        if not self.heldout_widen >= 1:
            raise ValueError("heldout_widen must be at least 1")
        if not self.margin >= 1:
            raise ValueError("margin must be at least 1")
        if self.grid_K > 6 or self.grid_J > 6 or self.grid_K < 1 or self.grid_J < 1:
            raise ValueError("trilinear grids are limited to 1 <= K, J <= 6")
        MultiplierParams(self.gamma, self.trilinear_kappa, self.eps / 16.0, self.s, self.delta, self.J_sum)
        if not 0 < self.delta < min(self.s - 1.5, 0.5):
            raise ParameterError("delta must satisfy 0 < delta < min(s - 3/2, 1/2)")

    def mparams(self, kappa: float) -> MultiplierParams:
        return MultiplierParams(self.gamma, kappa, self.eps / 16.0, self.s, self.delta, self.J_sum)


@dataclass
class RatioReport:
    lemma: str
    max_train: float
    C_fit: float
    heldout_ratio: float
    worst_point: dict
    n_train: int
    n_heldout: int
    passed: bool
    extra: dict = field(default_factory=dict)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        line = (f"{self.lemma:<24} {verdict}  C_fit={self.C_fit:.6g}  heldout/C_fit={self.heldout_ratio:.6g}"
                f"  n={self.n_train}+{self.n_heldout}")
        if not self.passed:
            line += "  worst=" + ", ".join(f"{k}={v:.6g}" for k, v in self.worst_point.items())
        return line


def fit_constant(ratios, margin: float = 1.05) -> float:
    r = np.asarray(ratios, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("cannot fit a constant to an empty sample")
    if not np.all(np.isfinite(r)):
        raise ValueError("ratios must be finite")
    return float(r.max()) * margin


def _point(points: dict, i: int) -> dict:
    return {k: float(np.asarray(v).ravel()[i]) for k, v in points.items()}


def make_report(lemma: str, train: np.ndarray, held: np.ndarray, train_pts: dict, held_pts: dict,
                margin: float = 1.05, extra: Optional[dict] = None) -> RatioReport:
    train = np.asarray(train, float)
    held = np.asarray(held, float)
    C = fit_constant(train, margin)
    if not np.all(np.isfinite(held)):
        i = int(np.nonzero(~np.isfinite(held))[0][0])
        return RatioReport(lemma, float(train.max()), C, math.inf, _point(held_pts, i), train.size, held.size,
                           False, dict(extra or {}))
    ih = int(np.argmax(held))
    hmax = float(held[ih])
    if C > 0:
        rel = hmax / C
    else:
        rel = 0.0 if hmax == 0 else math.inf
    it = int(np.argmax(train))
    worst = _point(held_pts, ih) if hmax >= train[it] else _point(train_pts, it)
    worst["ratio"] = max(hmax, float(train[it]))
    return RatioReport(lemma, float(train[it]), C, rel, worst, train.size, held.size, rel <= 1.0,
                       dict(extra or {}))


# -- samplers ---------------------------------------------------------------

def _reals(rng, n, scale, heavy):
    """Mixture of uniform on [-scale, scale] and a clipped Cauchy law."""
    u = rng.uniform(-scale, scale, n)
    c = np.clip(rng.standard_cauchy(n), -scale, scale)
    return np.where(rng.random(n) < heavy, c, u)


def _times(rng, n, lo, hi):
    """Half uniform, half log-uniform on [max(lo, 1e-3), hi]."""
    u = rng.uniform(lo, hi, n)
    llo = math.log(max(lo, 1e-3))
    g = np.exp(rng.uniform(llo, math.log(hi), n))
    return np.where(rng.random(n) < 0.5, u, g)


def _ints(rng, n, kmax):
    return rng.integers(-kmax, kmax + 1, n).astype(float)


def _pairs(rng, n, spec: SampleSpec, widen: float, t_lo: Optional[float] = None, near_kmin: int = 0):
    """Stratified (k, xi), (l, eta) pairs: half independent, half close to the diagonal.

    ``near_kmin`` pushes the near-diagonal half to |k| >= near_kmin with l = k more often.
    """
    lo, hi = spec.t_range
    t = _times(rng, n, max(lo, t_lo or 0.0), hi * widen)
    kmax = int(round(spec.k_max * widen))
    xmax = spec.xi_max * widen
    k = _ints(rng, n, kmax)
    xi = _reals(rng, n, xmax, spec.heavy_fraction)
    near = rng.random(n) < 0.5
    l_far = _ints(rng, n, kmax)
    eta_far = _reals(rng, n, xmax, spec.heavy_fraction)
    if near_kmin:
        k = np.where(near, rng.choice([-1.0, 1.0], n) * rng.integers(near_kmin, kmax + 1, n), k)
        off = np.where(rng.random(n) < 0.6, 0, rng.integers(-2, 3, n))
    else:
        off = rng.integers(-2, 3, n)
    l_near = np.clip(k + off, -kmax, kmax)
    d = np.exp(rng.uniform(math.log(1e-3), math.log(10.0), n)) * rng.choice([-1.0, 1.0], n)
    eta_near = xi + d
    l = np.where(near, l_near, l_far)
    eta = np.where(near, eta_near, eta_far)
    return dict(t=t, k=k, xi=xi, l=l, eta=eta)


def _jap(*xs):
    acc = 1.0
    for x in xs:
        acc = acc + np.asarray(x, float) ** 2
    return np.sqrt(acc)


def _abs2(*xs):
    acc = 0.0
    for x in xs:
        acc = acc + np.asarray(x, float) ** 2
    return np.sqrt(acc)


def _safe_div(num, den):
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    out = np.zeros(np.broadcast(num, den).shape)
    nz = den != 0
    out[nz] = (num * np.ones_like(out))[nz] / (den * np.ones_like(out))[nz]
    return out


@dataclass(frozen=True)
class Box:
    """Coordinate bounds for the ascent; integer coordinates move by unit steps."""

    bounds: dict
    integer: tuple = ()
    fix: Optional[Callable] = None

    def perturb(self, rng, pts: dict) -> dict:
        n = next(iter(pts.values())).size
        out = {}
        for name, v in pts.items():
            if name not in self.bounds:
                out[name] = v
                continue
            lo, hi = self.bounds[name]
            if name in self.integer:
                step = rng.integers(-1, 2, n) * (rng.random(n) < 0.4)
                out[name] = np.clip(v + step, lo, hi)
            else:
                sig = np.exp(rng.uniform(math.log(1e-4), math.log(0.3), n))
                out[name] = np.clip(v + sig * np.maximum(np.abs(v), 1.0) * rng.standard_normal(n), lo, hi)
        return self.fix(out) if self.fix else out


def _ascend(pts: dict, vals: np.ndarray, lid: str, ratios: Callable, box: Box, rng, spec: SampleSpec) -> dict:
    ok = np.nonzero(np.isfinite(vals))[0]
    if ok.size == 0 or spec.ascent_starts == 0:
        return {k: v[:0] for k, v in pts.items()}
    top = ok[np.argsort(vals[ok])[::-1][:spec.ascent_starts]]
    cur = {k: v[top].copy() for k, v in pts.items()}
    best = vals[top].copy()
    m = top.size
    for _ in range(spec.ascent_rounds):
        rep = {k: np.repeat(v, spec.ascent_proposals) for k, v in cur.items()}
        prop = box.perturb(rng, rep)
        r = ratios(prop)[lid].reshape(m, spec.ascent_proposals)
        r = np.where(np.isfinite(r), r, -np.inf)
        j = np.argmax(r, axis=1)
        gain = r[np.arange(m), j] > best
        idx = np.arange(m) * spec.ascent_proposals + j
        for k in cur:
            cur[k] = np.where(gain, prop[k][idx], cur[k])
        best = np.where(gain, r[np.arange(m), j], best)
    return cur


def _draw(lemma_ids, spec: SampleSpec, stream: int, side: int, sample: Callable, ratios: Callable, n: int,
          widen: float, prepend: Optional[dict] = None) -> tuple[dict, dict]:
    """Sample until every id has at least ``n`` non-excluded ratios (excluded ratios are NaN)."""
    pts = sample(make_rng(spec.seed, stream, side), n, widen)
    if prepend:
        pts = {k: np.concatenate([np.asarray(prepend[k], float), v]) for k, v in pts.items()}
    vals = ratios(pts)
    for extra_round in range(1, 50):
        short = max(n - int(np.sum(~np.isnan(vals[lid]))) for lid in lemma_ids)
        if short <= 0:
            break
        more = sample(make_rng(spec.seed, stream, side, 100 + extra_round), 2 * short + 16, widen)
        mv = ratios(more)
        pts = {k: np.concatenate([v, more[k]]) for k, v in pts.items()}
        vals = {k: np.concatenate([v, mv[k]]) for k, v in vals.items()}
    return pts, vals


def _run(lemma_ids, spec: SampleSpec, stream: int, sample: Callable, ratios: Callable,
         prepend: Optional[dict] = None, extra_fn: Optional[Callable] = None,
         box: Optional[Box] = None) -> list[RatioReport]:
    train_pts, tr = _draw(lemma_ids, spec, stream, 0, sample, ratios, spec.n_train, 1.0, prepend)
    held_pts, he = _draw(lemma_ids, spec, stream, 1, sample, ratios, spec.n_heldout, spec.heldout_widen)
    extra = extra_fn(train_pts) if extra_fn else {}
    reports = []
    for n, lid in enumerate(lemma_ids):
        tpts, tvals = train_pts, tr[lid]
        n_ascent = 0
        if box is not None:
            found = _ascend(train_pts, tr[lid], lid, ratios, box, make_rng(spec.seed, stream, 2, n), spec)
            n_ascent = next(iter(found.values())).size
            if n_ascent:
                tpts = {k: np.concatenate([v, found[k]]) for k, v in train_pts.items()}
                tvals = np.concatenate([tr[lid], ratios(found)[lid]])
        keep_t = ~np.isnan(tvals)
        keep_h = ~np.isnan(he[lid])
        ex = dict(extra)
        ex["excluded_train"] = int((~keep_t).sum())
        ex["excluded_heldout"] = int((~keep_h).sum())
        ex["ascent_points"] = n_ascent
        reports.append(make_report(lid, tvals[keep_t], he[lid][keep_h], {k: v[keep_t] for k, v in tpts.items()},
                                   {k: v[keep_h] for k, v in held_pts.items()}, spec.margin, ex))
    return reports


def _pair_box(spec: SampleSpec, fix: Optional[Callable] = None) -> Box:
    lo, hi = spec.t_range
    K, X = spec.k_max, spec.xi_max
    return Box({"t": (lo, hi), "k": (-K, K), "l": (-K, K), "xi": (-X, X), "eta": (-X, X)}, ("k", "l"), fix)


# -- Poisson-type integral --------------------------------------------------

@numba.cfunc(types.double(types.intc, types.CPointer(types.double)))
def _poisson_integrand(n, xx):
    eta = xx[0]
    a = xx[1]
    b = xx[2]
    z = xx[3]
    p = -0.5 * (1.0 + xx[4])
    d = z - eta
    return (a * a + eta * eta) ** p * (b * b + d * d) ** p


_POISSON = LowLevelCallable(_poisson_integrand.ctypes, signature="double (int, double *)")


def poisson_lhs(a: float, b: float, z: float, lam: float, tol: float = 1e-9) -> tuple[float, float]:
    """Integral over the real line of |a,eta|^(-1-lam) |b,z-eta|^(-1-lam); returns (value, error estimate).

    The line is split at the two peaks and at twenty peak widths on either side of each;
    the outer pieces use the infinite-range rule.
    """
    args = (a, b, z, lam)
    total, err = 0.0, 0.0
    cuts = sorted({0.0, -20.0 * a, 20.0 * a, z, z - 20.0 * b, z + 20.0 * b})
    pieces = [(-np.inf, cuts[0])] + list(zip(cuts[:-1], cuts[1:])) + [(cuts[-1], np.inf)]
    for p, q in pieces:
        # the requested relative tolerance sits near roundoff for sharp peaks; the error estimate is returned instead
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            v, e = quad(_POISSON, p, q, args=args, epsabs=0.0, epsrel=tol, limit=200)
        total += v
        err += e
    return total, err


def poisson_ratio(a, b, z, lam, tol: float = 1e-9, return_error: bool = False):
    a, b, z = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(z, float))
    out = np.empty(a.shape)
    err = np.empty(a.shape)
    for i in np.ndindex(a.shape):
        out[i], err[i] = poisson_lhs(float(a[i]), float(b[i]), float(z[i]), lam, tol)
    rhs = (a + b) ** lam / ((a * b) ** lam * _abs2(a + b, z) ** (1.0 + lam))
    if return_error:
        return out / rhs, err / np.where(out == 0, 1.0, out)
    return out / rhs


def check_poisson_bound(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    """One report per lambda; the training batch starts with a = b = 1, z = 0."""
    reports = []
    for n, lam in enumerate(spec.lams):
        def sample(rng, m, widen):
            hi = spec.k_max * widen
            a = np.exp(rng.uniform(math.log(1e-2), math.log(hi), m))
            b = np.exp(rng.uniform(math.log(1e-2), math.log(hi), m))
            z = _reals(rng, m, spec.xi_max * widen, spec.heavy_fraction)
            return dict(a=a, b=b, z=z)

        def ratios(p, lam=lam):
            return {f"poisson[lam={lam:g}]": poisson_ratio(p["a"], p["b"], p["z"], lam)}

        def extra(p, lam=lam):
            _, rel = poisson_ratio(p["a"], p["b"], p["z"], lam, return_error=True)
            return {"quad_rel_err_max": float(rel.max()), "quad_rel_err_above_1e-6": int((rel > 1e-6).sum())}

        box = Box({"a": (1e-2, spec.k_max), "b": (1e-2, spec.k_max), "z": (-spec.xi_max, spec.xi_max)})
        reports += _run([f"poisson[lam={lam:g}]"], spec, 10 + n, sample, ratios,
                        prepend=dict(a=[1.0], b=[1.0], z=[0.0]), extra_fn=extra, box=box)
    return reports


# -- decay of the damped components ---------------------------------------------

def _damping_fields(rng, m, K, J, dxi, s, t, mode=None):
    """Random fields; rows with ``mode >= 0`` carry a single lattice mode (flat index) instead."""
    k = np.arange(-K, K + 1, dtype=float)[:, None]
    xi = (np.arange(-J, J + 1) * dxi)[None, :]
    p = rng.uniform(0.0, s + 1.0, (m, 1, 1))
    keep = rng.random((m, 1, 1))
    keep = np.where(keep < 1 / 3, 1.0, np.where(keep < 2 / 3, 0.1, 0.02))
    env = _jap(k, xi)[None] ** (-p) * (rng.random((m, 2 * K + 1, 2 * J + 1)) < keep)
    if mode is not None:
        mode = np.asarray(mode, int)
        single = mode >= 0
        if single.any():
            env = env.reshape(m, -1)
            env[single] = 0.0
            env[np.nonzero(single)[0], mode[single]] = 1.0
            env = env.reshape(m, 2 * K + 1, 2 * J + 1)
    phi = (rng.standard_normal(env.shape) + 1j * rng.standard_normal(env.shape)) * env
    th = (rng.standard_normal(env.shape) + 1j * rng.standard_normal(env.shape)) * env
    eta = xi[None] - k[None] * t[:, None, None]
    lap = np.sqrt(k[None] ** 2 + eta ** 2)
    nz = np.broadcast_to(k[None] != 0, env.shape)
    safe = np.where(lap == 0, 1.0, lap)
    u1 = np.where(nz, -eta / safe * phi, phi)
    u2 = np.where(nz, k[None] / safe * phi, 0.0)
    return k, xi, u1, u2, th


def damping_ratios(t, u1, u2, th, k, xi, s, dxi):
    """Ratios of both damping displays for batched fields of shape (m, 2K+1, 2J+1)."""
    t = np.asarray(t, float)
    jt = np.sqrt(1.0 + t * t)
    eta = xi[None] - k[None] * t[:, None, None]
    w = _jap(k, eta) ** 0.5 * _jap(k, xi)[None] ** s
    nz = np.broadcast_to(k[None] != 0, u1.shape)
    l2 = lambda f: np.sqrt(np.sum(np.abs(f) ** 2, axis=(1, 2)) * dxi)
    lhs_u = l2(u1 * nz) + jt * l2(u2) + jt * np.sum(np.abs(u2), axis=(1, 2)) * dxi
    rhs_u = jt ** -0.5 * np.sqrt(np.sum(w ** 2 * (np.abs(u1) ** 2 + np.abs(u2) ** 2) * nz, axis=(1, 2)) * dxi)
    lhs_t = l2(th * nz)
    rhs_t = jt ** -0.5 * l2(w * th * nz)
    return _safe_div(lhs_u, rhs_u), _safe_div(lhs_t, rhs_t)


def worst_damping_modes(t, K, J, dxi, s) -> np.ndarray:
    """Flat index of the lattice mode maximizing the theta ratio at each time."""
    k = np.arange(-K, K + 1, dtype=float)[:, None]
    xi = (np.arange(-J, J + 1) * dxi)[None, :]
    t = np.asarray(t, float)
    eta = xi[None] - k[None] * t[:, None, None]
    w = _jap(k, eta) ** 0.5 * _jap(k, xi)[None] ** s
    inv = np.where(np.broadcast_to(k[None] != 0, w.shape), 1.0 / w, -np.inf)
    return np.argmax(inv.reshape(t.size, -1), axis=1)


def check_damping_bound(spec: SampleSpec = SampleSpec(), K: int = 4, J: int = 32, dxi: float = 1.0,
                        chunk: int = 2000, single_fraction: float = 0.25) -> list[RatioReport]:
    """Mixes random fields with single-mode fields; training starts from the worst mode on a time grid."""
    ids = ("damping[velocity]", "damping[theta]")
    n_modes = (2 * K + 1) * (2 * J + 1)
    lo, hi = spec.t_range

    def sample(rng, m, widen):
        single = rng.random(m) < single_fraction
        mode = np.where(single, rng.integers(0, n_modes, m), -1).astype(float)
        return dict(t=_times(rng, m, lo, hi * widen), seed=rng.integers(0, 2 ** 62, m).astype(float), mode=mode)

    def ratios(p):
        ru, rt = [], []
        for c0 in range(0, p["t"].size, chunk):
            tt = p["t"][c0:c0 + chunk]
            rng = make_rng(int(p["seed"][c0]) if tt.size else 0, c0)
            k, xi, u1, u2, th = _damping_fields(rng, tt.size, K, J, dxi, spec.s, tt, p["mode"][c0:c0 + chunk])
            a, b = damping_ratios(tt, u1, u2, th, k, xi, spec.s, dxi)
            ru.append(a)
            rt.append(b)
        return {ids[0]: np.concatenate(ru), ids[1]: np.concatenate(rt)}

    grid_t = np.concatenate([[lo], np.geomspace(max(lo, 1e-3), hi, 400)])
    prepend = dict(t=grid_t, seed=np.zeros_like(grid_t), mode=worst_damping_modes(grid_t, K, J, dxi, spec.s))
    box = Box({"t": (lo, hi), "mode": (0, n_modes - 1)}, ("mode",))
    return _run(ids, spec, 20, sample, ratios, prepend=prepend, box=box)


# -- small-time weight ------------------------------------------------------

def m0_gradient(t, k, xi, C_gamma: float):
    """(d/dk, d/dxi) of M0 for k != 0 by the closed form; zero at k == 0."""
    t, k, xi = np.broadcast_arrays(np.asarray(t, float), np.asarray(k, float), np.asarray(xi, float))
    eta = xi - k * t
    d0 = k * k + xi * xi
    d1 = k * k + eta * eta
    s0 = np.where(d0 == 0, 1.0, d0)
    s1 = np.where(d1 == 0, 1.0, d1)
    gk = C_gamma * (xi / s0 - xi / s1)
    gx = C_gamma * (k / s1 - k / s0)
    zero = (k == 0) | (d0 == 0) | (d1 == 0)
    return np.where(zero, 0.0, gk), np.where(zero, 0.0, gx)


def check_m0_gradient(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    mp = spec.mparams(spec.kappas[0])
    lid = "m0_gradient"

    def sample(rng, m, widen):
        lo, hi = spec.t_range
        k = _ints(rng, m, int(round(spec.k_max * widen)))
        xi = _reals(rng, m, spec.xi_max * widen, spec.heavy_fraction)
        xi = np.where((k == 0) & (xi == 0), 1.0, xi)
        return dict(t=_times(rng, m, lo, hi * widen), k=k, xi=xi)

    def ratios(p):
        gk, gx = m0_gradient(p["t"], p["k"], p["xi"], mp.C_gamma)
        eta = p["xi"] - p["k"] * p["t"]
        return {lid: np.hypot(gk, gx) * _abs2(p["k"], eta) / _jap(p["t"])}

    box = Box({"t": spec.t_range, "k": (-spec.k_max, spec.k_max), "xi": (-spec.xi_max, spec.xi_max)}, ("k",))
    return _run([lid], spec, 30, sample, ratios, box=box)


def m0_difference_cases(p) -> np.ndarray:
    """True where the frequency difference dominates (first case of the proof)."""
    t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
    d = _abs2(k - l, xi - eta - (k - l) * t)
    return d >= (_abs2(k, xi - k * t) + _abs2(l, eta - l * t)) / 4.0


def check_m0_difference(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    mp = spec.mparams(spec.kappas[0])
    lid = "m0_difference"

    def ratios(p):
        t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
        lhs = np.abs(np.asarray(m0(t, k, xi, mp)) - np.asarray(m0(t, l, eta, mp)))
        rhs = _jap(t) * _abs2(k - l, xi - eta) / (_jap(k, xi - k * t) + _jap(l, eta - l * t))
        return {lid: _safe_div(lhs, rhs)}

    def extra(p):
        c1 = m0_difference_cases(p)
        return {"case1_fraction": float(c1.mean()), "case2_fraction": float(1 - c1.mean())}

    return _run([lid], spec, 31, lambda r, m, w: _pairs(r, m, spec, w), ratios, extra_fn=extra, box=_pair_box(spec))


def ak_commutator_cases(p) -> np.ndarray:
    k, xi, l, eta = p["k"], p["xi"], p["l"], p["eta"]
    return _jap(k - l, xi - eta) >= (_jap(k, xi) + _jap(l, eta)) / 4.0


def ak_commutator_ratios(p, mp: MultiplierParams) -> dict:
    t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
    s = mp.s
    Ak = np.asarray(a_k(t, k, xi, mp))
    Al = np.asarray(a_k(t, l, eta, mp))
    Akl = np.asarray(a_k(t, k - l, xi - eta, mp))
    ek, el = xi - k * t, eta - l * t
    tri = _jap(t) * Ak * Al * Akl
    base = _jap(k, xi) ** (0.5 - s) + _jap(l, eta) ** (0.5 - s) + _jap(k - l, xi - eta) ** (0.5 - s)
    lhs1 = np.abs(l * Ak ** 2 - k * Al ** 2) + np.abs(el * Ak ** 2 - ek * Al ** 2)
    rhs1 = tri * (base + _jap(k - l, xi - eta - (k - l) * t) ** (0.5 - s))
    lk = k * k + ek * ek
    ll = l * l + el * el
    lhs2 = (_jap(l, el) * Ak ** 2 * _safe_div(np.abs(k) * np.abs(k - l), lk)
            + _jap(k, ek) * Al ** 2 * _safe_div(np.abs(l) * np.abs(k - l), ll))
    rhs2 = tri * base
    return {"ak_commutator[first]": _safe_div(lhs1, rhs1), "ak_commutator[pressure]": _safe_div(lhs2, rhs2)}


def check_ak_commutators(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    mp = spec.mparams(spec.kappas[0])

    def extra(p):
        c1 = ak_commutator_cases(p)
        return {"case1_fraction": float(c1.mean()), "case2_fraction": float(1 - c1.mean())}

    return _run(("ak_commutator[first]", "ak_commutator[pressure]"), spec, 32, lambda r, m, w: _pairs(r, m, spec, w),
                lambda p: ak_commutator_ratios(p, mp), extra_fn=extra, box=_pair_box(spec))


# -- long-time weight -------------------------------------------------------

def _by_kappa(p, fn):
    """Apply fn(mask, MultiplierParams-kappa) per distinct kappa value and scatter."""
    out = {}
    for kap in np.unique(p["kappa"]):
        mask = p["kappa"] == kap
        part = fn({k: v[mask] for k, v in p.items()}, float(kap))
        for name, vals in part.items():
            out.setdefault(name, np.full(p["kappa"].size, np.nan))[mask] = vals
    return out


def lipschitz_guard(k, l) -> np.ndarray:
    return _jap(k - l) <= (np.abs(k) + np.abs(l)) / 20.0


def check_m_lipschitz(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    """Four reports (M1, M2, M3, M0); pairs outside the hypothesis region are excluded."""
    ids = ("m_lipschitz[M1]", "m_lipschitz[M2]", "m_lipschitz[M3]", "m_lipschitz[M0]")
    kaps = np.asarray(spec.kappas, float)

    def sample(rng, m, widen):
        lo, hi = spec.t_range
        kmax = int(round(spec.k_max * widen))
        sign = rng.choice([-1.0, 1.0], m)
        k = sign * rng.integers(15, kmax + 1, m)
        l = k + rng.integers(-2, 3, m)
        xi = _reals(rng, m, spec.xi_max * widen, spec.heavy_fraction)
        near = rng.random(m) < 0.5
        d = np.exp(rng.uniform(math.log(1e-3), math.log(10.0), m)) * rng.choice([-1.0, 1.0], m)
        eta = np.where(near, xi + d, _reals(rng, m, spec.xi_max * widen, spec.heavy_fraction))
        return dict(t=_times(rng, m, lo, hi * widen), k=k, xi=xi, l=l, eta=eta,
                    kappa=kaps[rng.integers(0, kaps.size, m)])

    def part(p, kap):
        mp = spec.mparams(kap)
        t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
        at_k = [np.asarray(f(t, k, xi, mp)) for f in (m1, m2, m3)]
        at_l = [np.asarray(f(t, l, eta, mp)) for f in (m1, m2, m3)]
        dm = [np.abs(a - b) for a, b in zip(at_k, at_l)]
        d0 = np.abs(sum(at_k) - sum(at_l))
        moving = _abs2(k - l, xi - eta - (k - l) * t)
        plain = _abs2(k - l, xi - eta)
        c = (kap / np.abs(k)) ** (1 / 3) + 1 / np.abs(k)
        guard = np.where(lipschitz_guard(k, l), 1.0, np.nan)
        return {
            ids[0]: guard * _safe_div(dm[0], c * moving),
            ids[1]: guard * _safe_div(dm[1], moving / np.abs(k)),
            ids[2]: guard * _safe_div(dm[2], plain / np.abs(k)),
            ids[3]: guard * _safe_div(d0, c * (moving + plain)),
        }

    box = Box({"t": spec.t_range, "k": (-spec.k_max, spec.k_max), "l": (-spec.k_max, spec.k_max),
               "xi": (-spec.xi_max, spec.xi_max), "eta": (-spec.xi_max, spec.xi_max)}, ("k", "l"))
    return _run(ids, spec, 40, sample, lambda p: _by_kappa(p, part), box=box)


def commutator_cases(p) -> np.ndarray:
    t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
    d = _jap(k - l, xi - eta - (k - l) * t) + _jap(k - l, xi - eta)
    return d >= (np.abs(k) + np.abs(l)) / 10.0


def m_commutator_ratios(p, mp: MultiplierParams) -> dict:
    t, k, xi, l, eta = p["t"], p["k"], p["xi"], p["l"], p["eta"]
    s, d = mp.s, mp.delta
    kap = mp.kappa
    Mk = np.asarray(big_m(t, k, xi, mp))
    Ml = np.asarray(big_m(t, l, eta, mp))
    Mkl = np.asarray(big_m(t, k - l, xi - eta, mp))
    tri = Mk * Ml * Mkl
    ek, el = xi - k * t, eta - l * t
    ak, al, akl = np.abs(k), np.abs(l), np.abs(k - l)
    base = _jap(k, xi) ** (0.5 - s) + _jap(l, eta) ** (0.5 - s) + _jap(k - l, xi - eta) ** (0.5 - s)
    freq = (ak * akl) ** (1 / 3) + (al * akl) ** (1 / 3) + (ak * al) ** (1 / 3) + kap ** (2 / 3) * ak * al
    r1 = _safe_div(np.abs(l * Mk ** 2 - k * Ml ** 2), tri * base * freq)
    grow = np.exp(mp.eps_small * kap ** (1 / 3) * t) * (_abs2(l, el) + _abs2(k, ek)) * Mk * Ml
    gap = _abs2(k - l, xi - eta - (k - l) * t)
    inv_gap = _safe_div(1.0, np.sqrt(gap))
    r2 = _safe_div(np.abs(el) * Mk ** 2,
                   grow + (kap ** (1 / 6) * _abs2(l, el) + kap ** (-1 / 6) * (al ** (1 / 3) + ak ** (1 / 3)))
                   * tri * _jap(l, eta) ** (-s)
                   + kap ** (-1 / 3) * tri * _jap(l, eta) ** (-(1 + d) / 2) * inv_gap)
    r3 = _safe_div(np.abs(ek) * Ml ** 2,
                   grow + (kap ** (1 / 6) * _abs2(k, ek) + kap ** (-1 / 6) * (al ** (1 / 3) + ak ** (1 / 3)))
                   * tri * _jap(k, xi) ** (-s)
                   + kap ** (-1 / 3) * tri * _jap(k, xi) ** (-(1 + d) / 2) * inv_gap)
    distinct = k != l
    return {"m_commutator[first]": r1,
            "m_commutator[second]": np.where(distinct, r2, np.nan),
            "m_commutator[third]": np.where(distinct, r3, np.nan)}


def check_m_commutators(spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    """Three reports, one per display; times are drawn above kappa^(-1/6) for each kappa."""
    ids = ("m_commutator[first]", "m_commutator[second]", "m_commutator[third]")
    kaps = np.asarray(spec.kappas, float)

    def sample(rng, m, widen):
        p = _pairs(rng, m, spec, widen, near_kmin=min(20, spec.k_max))
        kap = kaps[rng.integers(0, kaps.size, m)]
        T0 = kap ** (-1 / 6)
        hi = spec.t_range[1] * widen
        # redraw times in [T0, hi] keeping the same mixture shape
        frac = (p["t"] - p["t"].min()) / max(np.ptp(p["t"]), 1e-300)
        p["t"] = T0 + frac * (hi - T0)
        p["kappa"] = kap
        return p

    def extra(p):
        c1 = commutator_cases(p)
        return {"case1_fraction": float(c1.mean()), "case2_fraction": float(1 - c1.mean())}

    def above_T0(p):
        p["t"] = np.maximum(p["t"], p["kappa"] ** (-1 / 6))
        return p

    return _run(ids, spec, 50, sample,
                lambda p: _by_kappa(p, lambda q, kap: m_commutator_ratios(q, spec.mparams(kap))), extra_fn=extra,
                box=_pair_box(spec, above_T0))


# -- trilinear forms on a small lattice --------------------------------------

@dataclass
class Lattice:
    K: int
    J: int
    dxi: float

    def __post_init__(self) -> None:
        kk, jj = np.meshgrid(np.arange(-self.K, self.K + 1), np.arange(-self.J, self.J + 1), indexing="ij")
        self.k = kk.ravel().astype(float)
        self.j = jj.ravel()
        self.xi = self.j * self.dxi
        n = self.k.size
        dk = kk.ravel()[:, None] - kk.ravel()[None, :]
        dj = self.j[:, None] - self.j[None, :]
        self.inside = (np.abs(dk) <= self.K) & (np.abs(dj) <= self.J)
        idx = (dk + self.K) * (2 * self.J + 1) + (dj + self.J)
        self.diff = np.where(self.inside, idx, 0)
        self.n = n


def trilinear_sum(lat: Lattice, F, G, H, W) -> np.ndarray:
    """sum over (k, xi), (l, eta) of |F(k-l, xi-eta)| |G(l, eta)| |H(k, xi)| W * dxi^2 for batched fields."""
    F, G, H = np.abs(F), np.abs(G), np.abs(H)
    Fd = F[:, lat.diff] * lat.inside[None]
    return np.einsum("nab,nb,na,ab->n", Fd, G, H, W, optimize=True) * lat.dxi ** 2


def _trilinear_weights(lat: Lattice, t: float, mp: MultiplierParams):
    k, xi = lat.k, lat.xi
    a, b = k[:, None], xi[:, None]
    l, e = k[None, :], xi[None, :]
    s, d = mp.s, mp.delta
    w34 = (_jap(a, b) ** (0.5 - s) + _jap(l, e) ** (0.5 - s) + _jap(a - l, b - e) ** (0.5 - s)
           + _jap(a - l, b - e - (a - l) * t) ** (0.5 - s))
    gap = _abs2(a - l, b - e - (a - l) * t)
    w54 = _jap(l, e) ** (-(1 + d) / 2) * np.abs(a - l) ** (d / 2) * _safe_div(1.0, gap ** ((1 + d) / 2))
    M = np.asarray(big_m(t, k, xi, mp))
    w55 = np.abs(e - l * t) * M[:, None] ** 2 + np.abs(b - a * t) * M[None, :] ** 2
    ups = np.asarray(upsilon(t, k, xi, mp))
    return w34, w54, w55, M, ups


def _lattice_fields(rng, m, lat: Lattice, s):
    p = rng.uniform(0.0, s, (m, 1))
    keep = np.where(rng.random((m, 1)) < 0.5, 1.0, 0.2)
    env = _jap(lat.k, lat.xi)[None] ** (-p) * (rng.random((m, lat.n)) < keep)
    return (rng.standard_normal((m, lat.n)) + 1j * rng.standard_normal((m, lat.n))) * env


def trilinear_ratios(lat: Lattice, t: float, mp: MultiplierParams, F, G, H) -> dict:
    w34, w54, w55, M, ups = _trilinear_weights(lat, t, mp)
    dxi = lat.dxi
    nrm = lambda X: np.sqrt(np.sum(np.abs(X) ** 2, axis=1) * dxi)
    k, xi = lat.k, lat.xi
    F0 = F * (k != 0)[None]
    r34 = _safe_div(trilinear_sum(lat, F, G, H, w34), nrm(F) * nrm(G) * nrm(H))
    r54 = _safe_div(trilinear_sum(lat, F0, G, H, w54), nrm(F0) * nrm(G) * nrm(H * np.sqrt(ups)[None]))
    kap = mp.kappa
    grad = _abs2(k, xi - k * t)[None]
    k13 = np.abs(k)[None] ** (1 / 3)
    shift = np.where(k != 0, xi / np.where(k == 0, 1.0, k) - t, 0.0)
    fw = _jap(shift)[None] ** (d2 := mp.delta / 2)
    Mf, Mg, Mh = M[None] * F0, M[None] * G, M[None] * H
    l1 = np.sum(np.abs(F0), axis=1) * dxi
    rhs = (np.exp(mp.eps_small * kap ** (1 / 3) * t) * l1 * (nrm(grad * Mg) * nrm(Mh) + nrm(Mg) * nrm(grad * Mh))
           + nrm(Mf) * (kap ** (1 / 6) * nrm(grad * Mg) + kap ** (-1 / 6) * nrm(k13 * Mg)) * nrm(Mh)
           + nrm(Mf) * nrm(Mg) * (kap ** (1 / 6) * nrm(grad * Mh) + kap ** (-1 / 6) * nrm(k13 * Mh))
           + kap ** (-1 / 3) * nrm(fw * Mf) * (nrm(Mg) * nrm(np.sqrt(ups)[None] * Mh)
                                                + nrm(Mh) * nrm(np.sqrt(ups)[None] * Mg)))
    r55 = _safe_div(trilinear_sum(lat, F0, G, H, w55), rhs)
    return {"trilinear[sobolev]": r34, "trilinear[nonzero_mode]": r54, "trilinear[weighted]": r55}


def check_trilinear_bounds(spec: SampleSpec = SampleSpec(), chunk: int = 500) -> list[RatioReport]:
    """Brute-force lattice sums for the three trilinear bounds at K, J <= 6."""
    lat = Lattice(spec.grid_K, spec.grid_J, spec.grid_dxi)
    mp = spec.mparams(spec.trilinear_kappa)
    times = np.asarray(spec.trilinear_times, float)
    if np.any(times < mp.T0):
        raise ValueError(f"trilinear times must be at least kappa^(-1/6) = {mp.T0:.6g}")
    ids = ("trilinear[sobolev]", "trilinear[nonzero_mode]", "trilinear[weighted]")

    def sample(rng, m, widen):
        return dict(t=times[rng.integers(0, times.size, m)], seed=rng.integers(0, 2 ** 62, m).astype(float))

    def ratios(p):
        out = {i: np.empty(p["t"].size) for i in ids}
        for tv in np.unique(p["t"]):
            idx = np.nonzero(p["t"] == tv)[0]
            for c0 in range(0, idx.size, chunk):
                sel = idx[c0:c0 + chunk]
                rng = make_rng(int(p["seed"][sel[0]]), int(tv * 1000), c0)
                F, G, H = (_lattice_fields(rng, sel.size, lat, spec.s) for _ in range(3))
                r = trilinear_ratios(lat, float(tv), mp, F, G, H)
                for i in ids:
                    out[i][sel] = r[i]
        return out

    return _run(ids, spec, 60, sample, ratios)


CHECKS = {
    "poisson": check_poisson_bound,
    "damping": check_damping_bound,
    "m0_gradient": check_m0_gradient,
    "m0_difference": check_m0_difference,
    "ak_commutator": check_ak_commutators,
    "m_lipschitz": check_m_lipschitz,
    "m_commutator": check_m_commutators,
    "trilinear": check_trilinear_bounds,
}


def run_checks(lemma: str = "all", spec: SampleSpec = SampleSpec()) -> list[RatioReport]:
    if lemma == "all":
        names = list(CHECKS)
    elif lemma in CHECKS:
        names = [lemma]
    else:
        raise KeyError(f"unknown lemma id {lemma!r}; expected 'all' or one of {', '.join(CHECKS)}")
    out = []
    for n in names:
        out += CHECKS[n](spec)
    return out
