"""Truncated Fourier lattice on T x R with a periodic surrogate in Y.

Fields are stored as complex arrays of shape ``(2K+1, 2J+1)`` indexed by
``[k + K, j + J]`` with ``xi_j = j * dxi``. Real-valued physical fields
correspond to arrays with ``f[-k, -j] == conj(f[k, j])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import fft as sfft

#: Normalization of products: F(fg) = conv(f^, g^) * FOURIER_NORM.
FOURIER_NORM = 1.0 / (2.0 * math.pi)

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SpectralGrid:
    K: int
    J: int
    L_Y: float
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        if not isinstance(self.J, (int, np.integer)) or self.J < 1:
            raise ValueError(f"J must be a positive integer, got {self.J!r}")
        if not (self.L_Y > 0 and math.isfinite(self.L_Y)):
            raise ValueError(f"L_Y must be positive, got {self.L_Y!r}")
        if not (0.0 < self.dealias_fraction <= 1.0):
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def dxi(self) -> float:
        return 2.0 * math.pi / self.L_Y

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.K + 1, 2 * self.J + 1)

    @property
    def n_modes(self) -> int:
        return (2 * self.K + 1) * (2 * self.J + 1)

    @cached_property
    def k(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1, dtype=float)

    @cached_property
    def xi(self) -> np.ndarray:
        return np.arange(-self.J, self.J + 1, dtype=float) * self.dxi

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast-ready ``(k, xi)`` arrays of shape ``(2K+1, 1)`` and ``(1, 2J+1)``."""
        return self.k[:, None], self.xi[None, :]

    @cached_property
    def padded_shape(self) -> tuple[int, int]:
        nk, nj = self.shape
        px = max(nk, math.ceil(nk / self.dealias_fraction - 1e-12))
        py = max(nj, math.ceil(nj / self.dealias_fraction - 1e-12))
        return sfft.next_fast_len(px, real=True), sfft.next_fast_len(py, real=True)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=complex)


def make_grid(K: int, J: int, L_Y: float, dealias_fraction: float = 2.0 / 3.0) -> SpectralGrid:
    return SpectralGrid(K, J, float(L_Y), dealias_fraction)


def symmetrize(coeffs: np.ndarray) -> np.ndarray:
    """Average with the conjugate reflection so that f(-k,-xi) = conj f(k,xi)."""
    return 0.5 * (coeffs + np.conj(coeffs[::-1, ::-1]))


def symmetry_error(coeffs: np.ndarray) -> float:
    scale = float(np.max(np.abs(coeffs), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(coeffs - np.conj(coeffs[::-1, ::-1])))) / scale


@dataclass
class SpectralField:
    grid: SpectralGrid
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {self.coeffs.shape} does not match grid {self.grid.shape}")

    def check(self, tol: float = SYMMETRY_TOL) -> None:
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("field has non-finite coefficients")
        err = symmetry_error(self.coeffs)
        if err > tol:
            raise ValueError(f"reality symmetry violated (relative error {err:.3e})")

    def at(self, k: int, j: int) -> complex:
        return complex(self.coeffs[k + self.grid.K, j + self.grid.J])

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def _other(self, other: "SpectralField") -> np.ndarray:
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return other.coeffs

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + self._other(other))

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - self._other(other))

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class WeightFn:
    """Nonnegative weight w(t, k, xi) with a tag naming it."""

    evaluator: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    tag: str = field(default="weight")

    def __call__(self, t: float, k, xi) -> np.ndarray:
        return np.asarray(self.evaluator(t, k, xi), dtype=float)


UNIT_WEIGHT = WeightFn(lambda t, k, xi: np.ones(np.broadcast(k, xi).shape), "one")


def sobolev_weight(s: float) -> WeightFn:
    return WeightFn(lambda t, k, xi: (1.0 + k * k + xi * xi) ** (0.5 * s), f"<k,xi>^{s}")


def from_function(grid: SpectralGrid, sampler: Callable) -> SpectralField:
    """Sample ``sampler(k, xi)`` on the lattice (array arguments) and symmetrize."""
    k, xi = grid.mesh
    kk, xx = np.broadcast_arrays(k, xi)
    try:
        values = np.asarray(sampler(kk, xx), dtype=complex)
        if values.shape != grid.shape:
            values = np.broadcast_to(values, grid.shape).astype(complex)
    except (TypeError, ValueError):
        values = np.array([[complex(sampler(a, b)) for a, b in zip(rk, rx)] for rk, rx in zip(kk, xx)])
    if not np.all(np.isfinite(values)):
        raise ValueError("sampler returned non-finite values")
    return SpectralField(grid, symmetrize(values))


def _same_grid(f: SpectralField, g: SpectralField) -> SpectralGrid:
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    return f.grid


def convolve_direct(f: SpectralField, g: SpectralField) -> SpectralField:
    """Truncated dxi-weighted lattice convolution by explicit summation over shifts."""
    grid = _same_grid(f, g)
    nk, nj = grid.shape
    K, J = grid.K, grid.J
    out = np.zeros(grid.shape, dtype=complex)
    a = f.coeffs
    for li in range(nk):
        dl = li - K
        k_lo, k_hi = max(0, dl), min(nk, nk + dl)
        for mi in range(nj):
            gv = g.coeffs[li, mi]
            if gv == 0:
                continue
            dm = mi - J
            j_lo, j_hi = max(0, dm), min(nj, nj + dm)
            out[k_lo:k_hi, j_lo:j_hi] += gv * a[k_lo - dl:k_hi - dl, j_lo - dm:j_hi - dm]
    return SpectralField(grid, out * grid.dxi)


def to_physical(coeffs: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Real collocation values on the padded grid (leading axes are batched)."""
    K, J = grid.K, grid.J
    px, py = grid.padded_shape
    lead = coeffs.shape[:-2]
    half = np.zeros(lead + (px, py // 2 + 1), dtype=complex)
    src = coeffs[..., :, J:]
    half[..., :K + 1, :J + 1] = src[..., K:, :]
    half[..., px - K:, :J + 1] = src[..., :K, :]
    return sfft.irfft2(half, s=(px, py), norm="forward")


def from_physical(values: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Inverse of :func:`to_physical` followed by truncation to the lattice."""
    K, J = grid.K, grid.J
    px, _ = grid.padded_shape
    half = sfft.rfft2(values, norm="forward")
    lead = values.shape[:-2]
    out = np.empty(lead + grid.shape, dtype=complex)
    pos = np.concatenate([half[..., px - K:, :J + 1], half[..., :K + 1, :J + 1]], axis=-2)
    out[..., :, J:] = pos
    out[..., :, :J] = np.conj(pos[..., ::-1, :0:-1])
    return out


def convolve_fast(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pseudo-spectral convolution on the zero-padded collocation grid."""
    grid = _same_grid(f, g)
    phys = to_physical(np.stack([f.coeffs, g.coeffs]), grid)
    return SpectralField(grid, from_physical(phys[0] * phys[1], grid) * grid.dxi)


def weighted_norm(f: SpectralField, w: WeightFn = UNIT_WEIGHT, t: float = 0.0) -> float:
    k, xi = f.grid.mesh
    wv = w(t, k, xi)
    return float(math.sqrt(np.sum(wv * wv * np.abs(f.coeffs) ** 2) * f.grid.dxi))


def l1_norm_nonzero_modes(f: SpectralField, t: float = 0.0) -> float:
    mask = f.grid.k != 0
    return float(np.sum(np.abs(f.coeffs[mask])) * f.grid.dxi)
