"""Time-dependent Fourier weights used by the energy method.

Every evaluator takes ``(t, k, xi, params)`` with numpy broadcasting over
``t``, ``k`` and ``xi`` (``k`` integer valued unless stated otherwise) and
returns a float array (0-d arrays are returned as Python floats).

Small-time weight::

    A_k = |k_+, xi - k t|^(1/2) <k, xi>^s exp(M0),   k_+ = max(|k|, 1)

Long-time weight::

    M = |k_+, xi - k t|^(1/2) <k, xi>^s  A(t, k)  exp(M1 + M2 + M3)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numba
import numpy as np
from scipy import special

from .params import MultiplierParams, ParameterError

TABLE_STEP = 1e-3
TABLE_XMAX = 50.0
_TAIL_TERMS = 8


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def psi_inf(lam: float) -> float:
    """Limit of psi_lambda at +infinity, B(1/2, lam/2) / 2."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return 0.5 * float(special.beta(0.5, 0.5 * lam))


def psi_exact(lam: float, x) -> np.ndarray:
    """Closed form via the regularized incomplete beta function.

    With y = tan(theta) and u = sin(theta)^2 the integral of <y>^(-1-lam)
    becomes an incomplete beta integral with parameters (1/2, lam/2).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    if lam == 1.0:
        return np.arctan(x)
    x2 = x * x
    # the complementary form avoids cancellation once x^2/(1+x^2) is near 1
    inner = special.betainc(0.5, 0.5 * lam, x2 / (1.0 + x2))
    outer = special.betaincc(0.5 * lam, 0.5, 1.0 / (1.0 + x2))
    return np.sign(x) * psi_inf(lam) * np.where(x2 <= 1.0, inner, outer)


class PsiTable:
    """Cubic Hermite interpolant of psi_lambda on [0, TABLE_XMAX] with an asymptotic tail."""

    def __init__(self, lam: float, step: float = TABLE_STEP, xmax: float = TABLE_XMAX):
        self.lam = float(lam)
        self.step = step
        self.xmax = xmax
        n = int(round(xmax / step))
        knots = np.arange(n + 1) * step
        self.values = psi_exact(lam, knots)
        self.slopes = (1.0 + knots * knots) ** (-0.5 * (1.0 + lam)) * step
        self.limit = psi_inf(lam)
        a = 0.5 * (1.0 + lam)
        self.tail_coeffs = np.array(
            [special.binom(-a, m) / (lam + 2 * m) for m in range(_TAIL_TERMS)]
        )
        self.n = n

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        u = np.minimum(ax, self.xmax) / self.step
        i = np.minimum(u.astype(np.int64), self.n - 1)
        s = u - i
        s2 = s * s
        s3 = s2 * s
        p0 = self.values[i]
        p1 = self.values[i + 1]
        out = (p0 + (p1 - p0) * (3.0 * s2 - 2.0 * s3)
               + self.slopes[i] * (s3 - 2.0 * s2 + s) + self.slopes[i + 1] * (s3 - s2))
        far = ax > self.xmax
        if np.any(far):
            xf = ax[far]
            w = xf ** (-self.lam)
            inv2 = 1.0 / (xf * xf)
            acc = np.zeros_like(xf)
            for c in self.tail_coeffs:
                acc += c * w
                w = w * inv2
            out = np.where(far, 0.0, out)
            out[far] = self.limit - acc
        return np.copysign(out, x)


@lru_cache(maxsize=16)
def psi_table(lam: float) -> PsiTable:
    return PsiTable(lam)


def psi(lam: float, x):
    """psi_lambda(x), the odd antiderivative of <y>^(-1-lambda) vanishing at 0."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if lam == 1.0:
        return _out(np.arctan(x))
    return _out(psi_table(float(lam))(x))


def psi_quad(lam: float, x: float, tol: float = 1e-12) -> float:
    """Adaptive Simpson quadrature of psi_lambda (reference implementation)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    f = lambda y: (1.0 + y * y) ** (-0.5 * (1.0 + lam))
    sign = 1.0 if x >= 0 else -1.0
    x = abs(x)

    def simpson(a, fa, b, fb):
        m = 0.5 * (a + b)
        fm = f(m)
        return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, eps, depth):
        lm, flm, left = simpson(a, fa, m, fm)
        rm, frm, right = simpson(m, fm, b, fb)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, 0.5 * eps, depth - 1)
                + recurse(m, fm, b, fb, rm, frm, right, 0.5 * eps, depth - 1))

    total = 0.0
    a = 0.0
    # unit panels keep the recursion shallow for large arguments
    while a < x:
        b = min(a + 1.0, x)
        fa, fb = f(a), f(b)
        m, fm, whole = simpson(a, fa, b, fb)
        total += recurse(a, fa, b, fb, m, fm, whole, tol, 50)
        a = b
    return sign * total


def _japanese(*xs):
    acc = 1.0
    for x in xs:
        acc = acc + np.asarray(x, dtype=float) ** 2
    return np.sqrt(acc)


def _ratio_shift(t, k, xi):
    """(xi / k - t) with 0 where k == 0."""
    kk = np.where(k == 0, 1.0, k)
    return np.where(k == 0, 0.0, xi / kk - t)


def _bcast(t, k, xi):
    t, k, xi = np.broadcast_arrays(np.asarray(t, float), np.asarray(k, float), np.asarray(xi, float))
    return t, k, xi


def m0(t, k, xi, params: MultiplierParams):
    t, k, xi = _bcast(t, k, xi)
    kk = np.where(k == 0, 1.0, k)
    val = params.C_gamma * (np.arctan(xi / kk - t) - np.arctan(xi / kk))
    return _out(np.where(k == 0, 0.0, val))


def _base(t, k, xi, s):
    eta = xi - k * t
    kp = np.maximum(np.abs(k), 1.0)
    return (kp * kp + eta * eta) ** 0.25 * (1.0 + k * k + xi * xi) ** (0.5 * s)


def a_k(t, k, xi, params: MultiplierParams):
    t, k, xi = _bcast(t, k, xi)
    return _out(_base(t, k, xi, params.s) * np.exp(m0(t, k, xi, params)))


def q_small(t, k, xi, params: MultiplierParams):
    """Logarithmic time derivative of A_k."""
    t, k, xi = _bcast(t, k, xi)
    eta = xi - k * t
    lap = k * k + eta * eta
    safe = np.where(lap == 0, 1.0, lap)
    val = -k * eta / (2.0 * safe) - params.C_gamma * k * k / safe
    return _out(np.where(lap == 0, 0.0, val))


def m1(t, k, xi, params: MultiplierParams):
    t, k, xi = _bcast(t, k, xi)
    arg = params.kappa ** (1.0 / 3.0) * np.abs(k) ** (2.0 / 3.0) * _ratio_shift(t, k, xi)
    return _out(np.where(k == 0, 0.0, np.arctan(arg)))


def m2(t, k, xi, params: MultiplierParams):
    t, k, xi = _bcast(t, k, xi)
    val = params.C_gamma * psi_table(1.0 - params.delta)(_ratio_shift(t, k, xi))
    return _out(np.where(k == 0, 0.0, val))


@numba.njit(cache=True)
def _tail(ax, limit, tail, lam):
    w = ax ** (-lam)
    inv2 = 1.0 / (ax * ax)
    acc = 0.0
    for c in tail:
        acc += c * w
        w *= inv2
    return limit - acc


@numba.njit(cache=True)
def _group_sums(te, xe, j, D, c3, cu, delta, want_m3, want_ups,
                values, slopes, step, n, xmax, limit, tail):
    m = te.size
    m3v = np.zeros(m)
    upv = np.zeros(m)
    expo = -0.5 * (1.0 + delta)
    inv_step = 1.0 / step
    invD = 1.0 / D
    for e in range(m):
        acc3 = 0.0
        accu = 0.0
        t = te[e]
        xv = xe[e]
        if want_m3:
            for q in range(j.size):
                x = (xv - t * j[q]) * invD[q]
                ax = abs(x)
                if ax > xmax:
                    v = _tail(ax, limit, tail, delta)
                else:
                    u = ax * inv_step
                    i = min(int(u), n - 1)
                    s = u - i
                    s2 = s * s
                    s3 = s2 * s
                    p0 = values[i]
                    v = (p0 + (values[i + 1] - p0) * (3.0 * s2 - 2.0 * s3)
                         + slopes[i] * (s3 - 2.0 * s2 + s) + slopes[i + 1] * (s3 - s2))
                acc3 += c3[q] * (v if x >= 0 else -v)
        if want_ups:
            for q in range(j.size):
                num = xv - t * j[q]
                accu += cu[q] * (D[q] * D[q] + num * num) ** expo
        m3v[e] = acc3
        upv[e] = accu
    return m3v, upv


def _lattice_sum(t, k, xi, params: MultiplierParams, want_m3: bool, want_ups: bool):
    """Shared truncated sums over j != 0, |j| <= J_sum, grouped by distinct k."""
    t, k, xi = _bcast(t, k, xi)
    shape = k.shape
    tf, kf, xf = t.ravel(), k.ravel(), xi.ravel()
    m3v = np.zeros(kf.size)
    upv = np.zeros(kf.size)
    d = params.delta
    tb = psi_table(d)
    j = np.concatenate([np.arange(-params.J_sum, 0), np.arange(1, params.J_sum + 1)]).astype(float)
    uniq, inverse = np.unique(kf, return_inverse=True)
    for gi, kv in enumerate(uniq):
        idx = np.nonzero(inverse == gi)[0]
        jb = _japanese(kv - j)
        D = jb + np.abs(j)
        w = jb ** (-d)
        a, b = _group_sums(np.ascontiguousarray(tf[idx]), np.ascontiguousarray(xf[idx]), j, D, w / j,
                           w * D ** d, d, want_m3, want_ups, tb.values, tb.slopes, tb.step, tb.n,
                           tb.xmax, tb.limit, tb.tail_coeffs)
        m3v[idx] = a
        upv[idx] = b
    return m3v.reshape(shape), upv.reshape(shape)


def m3(t, k, xi, params: MultiplierParams):
    return _out(_lattice_sum(t, k, xi, params, True, False)[0])


def upsilon(t, k, xi, params: MultiplierParams):
    """Minus the time derivative of M3 (same truncation)."""
    return _out(_lattice_sum(t, k, xi, params, False, True)[1])


def m3_bound(k, params: MultiplierParams) -> float:
    """Termwise bound sum |j|^-1 <k-j>^-delta psi_delta(inf) under the truncation."""
    j = np.concatenate([np.arange(-params.J_sum, 0), np.arange(1, params.J_sum + 1)]).astype(float)
    return float(np.sum(np.abs(1.0 / j) * _japanese(k - j) ** (-params.delta)) * psi_inf(params.delta))


def _require_long(t, params: MultiplierParams):
    if params.kappa <= 0:
        raise ParameterError("the long-time weight requires kappa > 0")
    if np.any(np.asarray(t) <= 0):
        raise ValueError("the long-time weight requires t > 0")


def script_a(t, k, params: MultiplierParams):
    _require_long(t, params)
    t, k = np.broadcast_arrays(np.asarray(t, float), np.asarray(k, float))
    c = params.kappa ** (1.0 / 3.0)
    return _out(np.exp(params.eps_small * c * t * (k != 0) + t ** -2.0 / c))


def big_m0(t, k, xi, params: MultiplierParams):
    """M1 + M2 + M3."""
    m3v, _ = _lattice_sum(t, k, xi, params, True, False)
    return _out(m1(t, k, xi, params) + m2(t, k, xi, params) + m3v)


def big_m(t, k, xi, params: MultiplierParams):
    _require_long(t, params)
    t, k, xi = _bcast(t, k, xi)
    return _out(_base(t, k, xi, params.s) * script_a(t, k, params) * np.exp(big_m0(t, k, xi, params)))


def q_star(t, k, xi, params: MultiplierParams):
    """Logarithmic time derivative of M."""
    _require_long(t, params)
    t, k, xi = _bcast(t, k, xi)
    c = params.kappa ** (1.0 / 3.0)
    eta = xi - k * t
    kp = np.maximum(np.abs(k), 1.0)
    nz = k != 0
    ak = np.abs(k)
    first = -k * eta / (2.0 * (kp * kp + eta * eta))
    second = params.eps_small * c * nz
    third = -2.0 / c * t ** -3.0
    fourth = -np.where(nz, c * ak ** (4.0 / 3.0) / (ak ** (2.0 / 3.0) + c * c * eta * eta + (~nz)), 0.0)
    fifth = -np.where(nz, params.C_gamma * (1.0 + _ratio_shift(t, k, xi) ** 2) ** (-1.0 + 0.5 * params.delta), 0.0)
    _, ups = _lattice_sum(t, k, xi, params, False, True)
    return _out(first + second + third + fourth + fifth - ups)


def m_unified(t, k, xi, params: MultiplierParams):
    """A_k for t <= kappa^(-1/6), M afterwards."""
    if np.ndim(t) == 0:
        if float(t) <= params.T0:
            return a_k(t, k, xi, params)
        return big_m(t, k, xi, params)
    t, k, xi = _bcast(t, k, xi)
    out = np.empty(t.shape)
    small = t <= params.T0
    out[small] = a_k(t[small], k[small], xi[small], params)
    if np.any(~small):
        out[~small] = big_m(t[~small], k[~small], xi[~small], params)
    return out


def seam_values(k, xi, params: MultiplierParams) -> tuple[np.ndarray, np.ndarray]:
    """Both branch values at t = kappa^(-1/6)."""
    T0 = params.T0
    return np.asarray(a_k(T0, k, xi, params)), np.asarray(big_m(T0, k, xi, params))


@dataclass(frozen=True)
class WeightBundle:
    params: MultiplierParams

    def _bind(self, fn: Callable) -> Callable:
        return lambda t, k, xi: fn(t, k, xi, self.params)

    @property
    def A(self):
        return self._bind(a_k)

    @property
    def M(self):
        return self._bind(big_m)

    @property
    def m(self):
        return self._bind(m_unified)

    @property
    def q(self):
        return self._bind(q_small)

    @property
    def q_star(self):
        return self._bind(q_star)

    @property
    def upsilon(self):
        return self._bind(upsilon)

    @property
    def M0(self):
        return self._bind(m0)

    @property
    def M1(self):
        return self._bind(m1)

    @property
    def M2(self):
        return self._bind(m2)

    @property
    def M3(self):
        return self._bind(m3)

    @property
    def script_a(self):
        return lambda t, k: script_a(t, k, self.params)
