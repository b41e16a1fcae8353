import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from scdsplit.errors import InvalidInput
from scdsplit.grid_density import GridDensity, YGrid, normalize_values
from scdsplit.smoothing import (
    SmoothParams,
    SmoothPath,
    convolve_values,
    fourier_smooth,
    fourier_values,
    gaussian_convolve,
    gaussian_kernel,
    randomized_smooth,
    sign_variations,
)

GRID = YGrid(-10, 10, 1024)


def mixture(grid=GRID):
    v = norm.pdf(grid.points, -2, 0.7) + 0.6 * norm.pdf(grid.points, 2.5, 0.4)
    v += 0.3 * (np.abs(grid.points - 0.5) < 0.8)
    return normalize_values(v, grid)


class TestParams:
    def test_negative_sigma(self):
        with pytest.raises(InvalidInput):
            SmoothParams(-0.1)

    def test_short_truncation(self):
        with pytest.raises(InvalidInput):
            SmoothParams(1.0, truncation=2.0)

    def test_kernel_sums_to_one(self):
        k = gaussian_kernel(0.3, 0.01)
        assert k.sum() == pytest.approx(1.0)
        assert k.size == 2 * math.ceil(6 * 0.3 / 0.01) + 1


class TestIdentity:
    def test_zero_sigma_returns_input(self):
        d = GridDensity.from_values(GRID, mixture())
        assert gaussian_convolve(d, SmoothParams(0.0)) is d
        assert fourier_smooth(d, SmoothParams(0.0)) is d

    def test_zero_sigma_raw_paths(self):
        f = mixture()
        np.testing.assert_array_equal(fourier_values(f, GRID, SmoothParams(0.0)), f)
        np.testing.assert_array_equal(convolve_values(f, GRID, SmoothParams(0.0)), f)


class TestAgainstAnalytic:
    def test_point_mass_becomes_gaussian(self):
        g = YGrid(-10, 10, 2001)
        v = np.zeros(g.n_points)
        v[1000] = 1.0
        d = GridDensity.from_values(g, v)
        out = gaussian_convolve(d, SmoothParams(0.5, path=SmoothPath.SPATIAL))
        assert np.abs(out.values - norm.pdf(g.points, 0, 0.5)).max() <= 1e-3

    def test_constant_interior_preserved(self):
        g = YGrid(0, 10, 1001)
        sigma = 0.2
        out = convolve_values(np.ones(g.n_points), g, SmoothParams(sigma, path=SmoothPath.SPATIAL))
        edge = math.ceil(6 * sigma / g.step)
        interior = out[edge:-edge]
        np.testing.assert_allclose(interior, interior.mean(), atol=1e-6)

    @pytest.mark.parametrize("w0", [0.5, 1.0, 2.0])
    def test_cosine_attenuation(self, w0):
        # period-aligned grid so that the cosine is a single DFT bin away from the edges
        g = YGrid(-20, 20, 4001)
        sigma = 0.3
        base = np.exp(-0.5 * (g.points / 6) ** 2)
        wave = 0.1 * np.cos(2 * np.pi * w0 * g.points) * base
        smooth_base = fourier_values(base, g, SmoothParams(sigma)) * g.integrate(base)
        smooth_all = fourier_values(base + wave, g, SmoothParams(sigma)) * g.integrate(base + wave)
        centre = np.abs(g.points) < 1
        ratio = (smooth_all - smooth_base)[centre] / wave[centre]
        expected = math.exp(-2 * math.pi**2 * sigma**2 * w0**2)
        # the slowly varying envelope makes the attenuation exact only to first order
        np.testing.assert_allclose(np.median(ratio), expected, rtol=2e-2)


class TestPaths:
    @pytest.mark.parametrize("mult", [0.1, 0.5, 1.0, 2.0])
    def test_spectral_matches_spatial(self, mult):
        sigma = mult * GRID.span / 20
        f = mixture()
        a = fourier_values(f, GRID, SmoothParams(sigma))
        b = convolve_values(f, GRID, SmoothParams(sigma, path=SmoothPath.SPATIAL))
        lo, hi = int(0.05 * GRID.n_points), int(0.95 * GRID.n_points)
        assert np.abs(a - b)[lo:hi].max() <= 1e-6

    @given(st.floats(0.01, 3.0), st.sampled_from(list(SmoothPath)))
    def test_mass_and_sign(self, sigma, path):
        p = SmoothParams(sigma, path=path)
        out = fourier_values(mixture(), GRID, p) if path is SmoothPath.SPECTRAL else convolve_values(mixture(), GRID, p)
        assert GRID.integrate(out) == pytest.approx(1.0, abs=1e-6)
        assert out.min() >= 0

    @given(st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_semigroup(self, s1, s2):
        f = mixture()
        twice = fourier_values(fourier_values(f, GRID, SmoothParams(s1)), GRID, SmoothParams(s2))
        once = fourier_values(f, GRID, SmoothParams(math.hypot(s1, s2)))
        assert np.abs(twice - once).max() <= 1e-5

    def test_stacked_rows_match_single_rows(self):
        rows = np.stack([mixture(), normalize_values(norm.pdf(GRID.points, 1, 2), GRID)])
        both = fourier_values(rows, GRID, SmoothParams(0.7))
        for r, out in zip(rows, both):
            np.testing.assert_allclose(out, fourier_values(r, GRID, SmoothParams(0.7)), atol=1e-15)


class TestRandomized:
    def test_constant_is_exact(self):
        g = YGrid(0, 1, 16)
        out = randomized_smooth(lambda y: np.full_like(y, 2.5), 0.3, 50, 0, g)
        np.testing.assert_array_equal(out, 2.5)

    def test_linear_is_unbiased(self):
        g = YGrid(-3, 3, 64)
        n, sigma = 100_000, 0.8
        out = randomized_smooth(lambda y: y, sigma, n, 1, g)
        # each point is a mean of n normals centred at the point: 4 sd = 4 sigma / sqrt(n)
        assert np.abs(out - g.points).max() <= 4 * sigma / math.sqrt(n) * 1.5

    def test_deterministic_given_seed(self):
        g = YGrid(-3, 3, 32)
        a = randomized_smooth(np.sin, 0.5, 1000, 7, g)
        b = randomized_smooth(np.sin, 0.5, 1000, 7, g)
        np.testing.assert_array_equal(a, b)

    def test_close_to_spectral(self):
        g = YGrid(-6, 6, 256)
        tri = lambda y: np.maximum(0.0, 2.0 - np.abs(y)) / 4.0
        mc = randomized_smooth(tri, 1.0, 100_000, 3, g)
        exact = fourier_values(tri(g.points), g, SmoothParams(1.0))
        assert np.abs(mc - exact).max() <= 0.02 * 0.25 * 1.0

    @pytest.mark.parametrize("sigma,n", [(0.0, 10), (1.0, 0)])
    def test_bad_arguments(self, sigma, n):
        with pytest.raises(InvalidInput):
            randomized_smooth(np.sin, sigma, n, 0, YGrid(0, 1, 16))


class TestSignVariations:
    @pytest.mark.parametrize("seq,expected", [([1, -1, 1], 2), ([1, 0, 0, 1], 0), ([0, 0, 0], 0), ([-2, 0, 3, 0, -1], 2)])
    def test_examples(self, seq, expected):
        assert sign_variations(seq) == expected

    @given(st.lists(st.floats(-5, 5, allow_nan=False), max_size=40))
    def test_bounded_by_nonzero_count(self, seq):
        nz = sum(1 for v in seq if v != 0)
        assert 0 <= sign_variations(seq) <= max(nz - 1, 0)

    def test_rejects_nan(self):
        with pytest.raises(InvalidInput):
            sign_variations([1.0, np.nan])
