import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shearlab.grid import (SpectralField, SpectralGrid, WeightFn, convolve_direct, convolve_fast, from_function,
                           l1_norm_nonzero_modes, make_grid, sobolev_weight, symmetry_error, weighted_norm)

from conftest import random_coeffs


def field(grid, values):
    return SpectralField(grid, values)


def delta(grid, k, j, value):
    c = grid.zeros()
    c[k + grid.K, j + grid.J] = value
    return field(grid, c)


def brute_convolution(f, g):
    grid = f.grid
    K, J = grid.K, grid.J
    out = grid.zeros()
    for k in range(-K, K + 1):
        for j in range(-J, J + 1):
            acc = 0j
            for l in range(-K, K + 1):
                for m in range(-J, J + 1):
                    if -K <= k - l <= K and -J <= j - m <= J:
                        acc += f.at(k - l, j - m) * g.at(l, m)
            out[k + K, j + J] = acc * grid.dxi
    return out


class TestMakeGrid:
    def test_unit_grid(self):
        g = make_grid(1, 1, 2 * math.pi)
        assert g.dxi == pytest.approx(1.0, rel=1e-15)
        assert g.n_modes == 9

    def test_desk_grid(self):
        assert make_grid(16, 256, 8 * math.pi).dxi == pytest.approx(0.25, rel=1e-15)

    @pytest.mark.parametrize("args", [(0, 1, 1.0), (1, 0, 1.0), (1, 1, 0.0), (1, 1, -2.0), (-3, 1, 1.0)])
    def test_rejects_nonpositive(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)

    def test_lattice(self):
        g = make_grid(2, 3, 4 * math.pi)
        assert g.k.tolist() == [-2, -1, 0, 1, 2]
        np.testing.assert_allclose(g.xi, np.arange(-3, 4) * 0.5)


class TestFromFunction:
    def test_zero(self, small_grid):
        f = from_function(small_grid, lambda k, xi: 0.0 * k)
        assert not f.coeffs.any()

    def test_single_mode_symmetrization(self):
        g = make_grid(2, 2, 2 * math.pi)
        f = from_function(g, lambda k, xi: np.where((k == 1) & (xi == 0), 1.0, 0.0))
        assert f.at(1, 0) == 0.5
        assert f.at(-1, 0) == 0.5
        assert np.count_nonzero(f.coeffs) == 2

    def test_gaussian_is_real_symmetric(self, small_grid):
        f = from_function(small_grid, lambda k, xi: np.exp(-(k * k + xi * xi)))
        assert symmetry_error(f.coeffs) == 0.0
        assert np.all(f.coeffs.imag == 0)
        k, xi = small_grid.mesh
        np.testing.assert_allclose(f.coeffs.real, np.exp(-(k * k + xi * xi)), rtol=1e-15)

    def test_scalar_sampler(self, small_grid):
        f = from_function(small_grid, lambda k, xi: complex(k, xi) if k == 2 else 0.0)
        assert f.at(2, 1) == pytest.approx(complex(1.0, 0.5))
        assert f.at(-2, -1) == pytest.approx(complex(1.0, -0.5))

    def test_rejects_nonfinite(self, small_grid):
        with pytest.raises(ValueError):
            from_function(small_grid, lambda k, xi: np.where(k == 1, np.nan, 0.0))


class TestConvolution:
    def test_identity_element(self, small_grid, rng):
        g = field(small_grid, random_coeffs(small_grid, rng))
        e = delta(small_grid, 0, 0, 1.0 / small_grid.dxi)
        np.testing.assert_allclose(convolve_direct(e, g).coeffs, g.coeffs, rtol=1e-14, atol=1e-14)

    def test_single_term(self):
        g = make_grid(3, 3, 4 * math.pi)
        f = delta(g, 1, 1, 1.0)
        out = convolve_direct(f, f)
        assert out.at(2, 2) == pytest.approx(g.dxi)
        assert np.count_nonzero(out.coeffs) == 1

    def test_truncation_drops_out_of_range(self):
        g = make_grid(2, 2, 2 * math.pi)
        f = delta(g, 2, 0, 1.0)
        assert not convolve_direct(f, f).coeffs.any()

    def test_direct_matches_brute_force(self, rng):
        g = make_grid(3, 3, 3.0)
        f = field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        h = field(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        np.testing.assert_allclose(convolve_direct(f, h).coeffs, brute_convolution(f, h), rtol=1e-12, atol=1e-12)

    def test_fast_zero(self, small_grid, rng):
        z = field(small_grid, small_grid.zeros())
        f = field(small_grid, random_coeffs(small_grid, rng))
        assert not np.any(np.abs(convolve_fast(z, f).coeffs) > 1e-300)

    def test_fast_k4(self, rng):
        g = make_grid(4, 4, 5.0)
        f, h = (field(g, random_coeffs(g, rng)) for _ in range(2))
        ref = convolve_direct(f, h).coeffs
        err = np.max(np.abs(convolve_fast(f, h).coeffs - ref)) / np.max(np.abs(ref))
        assert err < 1e-10

    @given(K=st.integers(1, 8), J=st.integers(1, 8), L=st.floats(0.5, 50.0), seed=st.integers(0, 2 ** 32 - 1))
    def test_fast_equals_direct(self, K, J, L, seed):
        g = make_grid(K, J, L)
        r = np.random.default_rng(seed)
        f, h = (field(g, random_coeffs(g, r)) for _ in range(2))
        ref = convolve_direct(f, h).coeffs
        err = np.max(np.abs(convolve_fast(f, h).coeffs - ref)) / max(np.max(np.abs(ref)), 1e-300)
        assert err < 1e-10

    @given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_bilinear_commutative_symmetric(self, seed, a, b):
        g = make_grid(3, 4, 7.0)
        r = np.random.default_rng(seed)
        f, h, w = (field(g, random_coeffs(g, r)) for _ in range(3))
        lhs = convolve_direct(f * a + h * b, w).coeffs
        rhs = a * convolve_direct(f, w).coeffs + b * convolve_direct(h, w).coeffs
        scale = 1.0 + np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * scale
        fw, wf = convolve_direct(f, w).coeffs, convolve_direct(w, f).coeffs
        assert np.max(np.abs(fw - wf)) < 1e-12 * (1 + np.max(np.abs(fw)))
        assert symmetry_error(fw) < 1e-12
        assert symmetry_error(convolve_fast(f, w).coeffs) < 1e-12
        assert symmetry_error((f * a + h * b).coeffs) < 1e-12

    def test_grid_mismatch(self):
        a, b = make_grid(2, 2, 1.0), make_grid(2, 2, 2.0)
        with pytest.raises(ValueError):
            convolve_direct(field(a, a.zeros()), field(b, b.zeros()))
        with pytest.raises(ValueError):
            convolve_fast(field(a, a.zeros()), field(b, b.zeros()))

    @pytest.mark.slow
    def test_fast_path_speedup(self, rng):
        import time

        g = make_grid(32, 32, 20.0)
        k, xi = g.mesh
        f = field(g, np.exp(-0.05 * (k * k + xi * xi)) + 0j)
        t0 = time.perf_counter()
        convolve_direct(f, f)
        direct = time.perf_counter() - t0
        t0 = time.perf_counter()
        for _ in range(10):
            convolve_fast(f, f)
        fast = (time.perf_counter() - t0) / 10
        assert direct / fast >= 20


class TestNorms:
    def test_zero(self, small_grid):
        z = field(small_grid, small_grid.zeros())
        assert weighted_norm(z) == 0.0
        assert l1_norm_nonzero_modes(z) == 0.0

    def test_two_symmetric_modes(self):
        g = make_grid(2, 2, 2 * math.pi)
        c = g.zeros()
        c[1 + 2, 2] = c[-1 + 2, 2] = 1.0
        assert weighted_norm(field(g, c)) == pytest.approx(math.sqrt(2.0), rel=1e-15)

    def test_sobolev_weight_hand_sum(self):
        g = make_grid(1, 1, 2 * math.pi)
        c = g.zeros()
        c[1, 1] = 2.0        # (0, 0): weight 1
        c[2, 1] = 1.0j       # (1, 0): weight 2 for s=2
        c[0, 1] = -1.0j      # (-1, 0)
        c[1, 2] = 0.5        # (0, 1): weight 2
        c[1, 0] = 0.5
        expected = math.sqrt(4.0 + 2 * 4.0 + 2 * 4.0 * 0.25)
        assert weighted_norm(field(g, c), sobolev_weight(2.0)) == pytest.approx(expected, rel=1e-14)

    def test_l1_excludes_zero_mode(self, small_grid):
        c = small_grid.zeros()
        c[small_grid.K, :] = 3.0
        assert l1_norm_nonzero_modes(field(small_grid, c)) == 0.0

    def test_l1_direct_sum(self):
        g = make_grid(2, 2, 4 * math.pi)
        c = g.zeros()
        c[3, 2] = 1.0
        c[1, 2] = -1j
        assert g.dxi == 0.5
        assert l1_norm_nonzero_modes(field(g, c)) == pytest.approx(1.0)

    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_parallelogram_and_subadditivity(self, seed):
        g = make_grid(3, 5, 9.0)
        r = np.random.default_rng(seed)
        f, h = (field(g, random_coeffs(g, r)) for _ in range(2))
        n = weighted_norm
        lhs = n(f + h) ** 2 + n(f - h) ** 2
        rhs = 2 * n(f) ** 2 + 2 * n(h) ** 2
        assert abs(lhs - rhs) <= 1e-12 * rhs
        assert l1_norm_nonzero_modes(f + h) <= l1_norm_nonzero_modes(f) + l1_norm_nonzero_modes(h) + 1e-12

    def test_weight_fn_tag(self):
        w = WeightFn(lambda t, k, xi: t + 0 * k * xi, "time")
        assert w.tag == "time"
        assert float(w(2.0, np.array(1.0), np.array(0.0))) == 2.0


def test_field_checks(small_grid):
    c = small_grid.zeros()
    c[0, 0] = 1.0
    with pytest.raises(ValueError, match="symmetry"):
        field(small_grid, c).check()
    c[0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        field(small_grid, c).check()
    with pytest.raises(ValueError):
        SpectralField(small_grid, np.zeros((2, 2)))
