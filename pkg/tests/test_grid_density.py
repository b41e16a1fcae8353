import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import find_peaks
from scipy.stats import norm

from scdsplit.datagen import gen_simple
from scdsplit.errors import InvalidInput, InvalidState
from scdsplit.grid_density import (
    BANDWIDTH_RULES,
    GridDensity,
    YGrid,
    density_cdf,
    eval_density,
    eval_density_batch,
    fit_cde,
    hpd_mass,
    make_grid,
)


def gaussian_density(grid, mu=0.0, sd=1.0):
    return GridDensity.from_values(grid, norm.pdf(grid.points, mu, sd))


class TestGrid:
    def test_step_and_points(self):
        g = YGrid(0.0, 15.0, 16)
        assert g.step == 1.0
        np.testing.assert_allclose(np.diff(g.points), 1.0)

    def test_rejects_few_points(self):
        with pytest.raises(InvalidInput):
            YGrid(0.0, 1.0, 3)

    def test_rejects_reversed_bounds(self):
        with pytest.raises(InvalidInput):
            YGrid(1.0, 0.0, 32)

    def test_make_grid_zero_margin(self):
        g = make_grid([0.0, 1.0, 2.0], n_points=16, margin_sds=0.0)
        assert (g.y_min, g.y_max) == (0.0, 2.0)

    def test_make_grid_margin_uses_sample_sd(self):
        # sd of {0, 10} with denominator n - 1 is sqrt(50)
        g = make_grid([0.0, 10.0], n_points=101, margin_sds=3.0)
        assert g.y_min == pytest.approx(-21.213203435596427)
        assert g.y_max == pytest.approx(31.213203435596427)

    @pytest.mark.parametrize("bad", [[], [0.0, np.nan], [np.inf]])
    def test_make_grid_rejects_bad_input(self, bad):
        with pytest.raises(InvalidInput):
            make_grid(bad)


class TestGridDensity:
    def test_from_values_normalises(self):
        g = YGrid(-1, 1, 64)
        d = GridDensity.from_values(g, np.ones(64) * 7)
        assert d.is_normalized
        np.testing.assert_allclose(d.values, 0.5)

    def test_rejects_negative_values(self):
        with pytest.raises(InvalidInput):
            GridDensity(YGrid(0, 1, 16), -np.ones(16))

    def test_values_are_read_only(self):
        d = GridDensity.from_values(YGrid(0, 1, 16), np.ones(16))
        with pytest.raises(ValueError):
            d.values[0] = 3.0


class TestCdf:
    def test_uniform_is_linear(self):
        g = YGrid(0, 2, 101)
        F = density_cdf(GridDensity.from_values(g, np.ones(101)))
        np.testing.assert_allclose(F, g.points / 2, atol=1e-12)

    def test_standard_normal_median(self):
        g = YGrid(-6, 6, 1024)
        F = density_cdf(gaussian_density(g))
        assert np.interp(0.0, g.points, F) == pytest.approx(0.5, abs=1e-3)
        assert F[-1] == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.diff(F) >= 0)

    def test_narrow_bump_steps_at_centre(self):
        g = YGrid(-1, 1, 201)
        v = np.zeros(201)
        v[100] = 1.0
        F = density_cdf(GridDensity.from_values(g, v))
        assert F[98] == 0.0 and F[102] == pytest.approx(1.0)

    def test_unnormalised_raises(self):
        g = YGrid(0, 1, 16)
        with pytest.raises(InvalidState):
            density_cdf(GridDensity(g, np.full(16, 3.0)))


class TestHpdMass:
    def test_gaussian_one_sd(self):
        g = YGrid(-6, 6, 1024)
        # P(|Z| <= 1) computed analytically
        assert hpd_mass(gaussian_density(g), 1.0) == pytest.approx(0.6826894921370859, abs=5e-3)

    def test_mode_has_small_mass(self):
        g = YGrid(-6, 6, 1024)
        assert hpd_mass(gaussian_density(g), g.points[np.argmax(gaussian_density(g).values)]) <= 2 * g.step

    def test_zero_density_point_has_full_mass(self):
        g = YGrid(0, 10, 101)
        v = np.where(g.points < 5, 1.0, 0.0)
        assert hpd_mass(GridDensity.from_values(g, v), 8.0) == pytest.approx(1.0, abs=1e-6)

    def test_outside_grid_raises(self):
        g = YGrid(-6, 6, 64)
        with pytest.raises(InvalidInput):
            hpd_mass(gaussian_density(g), 7.0)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_nonincreasing_in_density(self, y1, y2):
        g = YGrid(-6, 6, 512)
        d = GridDensity.from_values(g, norm.pdf(g.points, 0, 1) + 0.5 * norm.pdf(g.points, 2, 0.5))
        if d(y1) < d(y2):
            y1, y2 = y2, y1
        assert hpd_mass(d, y1) <= hpd_mass(d, y2) + g.step * d.values.max()


@pytest.fixture(scope="module")
def simple_data():
    return gen_simple(800, 0)


class TestCde:
    def test_rule_bandwidth_matches_formula(self, simple_data):
        g = make_grid(simple_data.y)
        cde = fit_cde(simple_data.X, simple_data.y, 100, g, seed=0, bandwidth="rule")
        # 1.06 * sd(y) * 800^(-1/5), evaluated independently for this sample
        assert cde.h_y == pytest.approx(0.25748566734612416, rel=1e-9)

    def test_cv_bandwidth_is_a_fraction_of_the_rule(self, simple_data):
        g = make_grid(simple_data.y)
        rule = fit_cde(simple_data.X, simple_data.y, 100, g, bandwidth="rule").h_y
        cv = fit_cde(simple_data.X, simple_data.y, 100, g, bandwidth="cv").h_y
        ratio = math.log2(rule / cv) * 2
        assert 0 <= cv <= rule and ratio == pytest.approx(round(ratio))

    def test_unknown_bandwidth_rule(self, simple_data):
        with pytest.raises(InvalidInput):
            fit_cde(simple_data.X, simple_data.y, 10, make_grid(simple_data.y), bandwidth="silverman")

    def test_degenerate_response_hits_floor(self):
        g = YGrid(-1, 1, 64)
        cde = fit_cde(np.array([[0.0], [1.0]]), np.zeros(2), 2, g)
        assert cde.h_y == pytest.approx(1e-3 * g.step)

    def test_repeated_covariate_hits_floor(self):
        g = YGrid(-5, 5, 64)
        cde = fit_cde(np.ones((10, 2)), np.arange(10.0) / 5, 3, g)
        assert cde.h_x == 1e-6

    def test_k_larger_than_n(self):
        with pytest.raises(InvalidInput):
            fit_cde(np.zeros((3, 1)), np.zeros(3), 5, YGrid(-1, 1, 16))

    def test_single_neighbour_is_one_gaussian(self):
        g = YGrid(-5, 5, 1001)
        x = np.array([[0.0], [10.0], [20.0]])
        cde = fit_cde(x, np.array([1.0, -2.0, 3.0]), 1, g, bandwidth="rule")
        d = eval_density(cde, np.array([0.1]))
        expected = norm.pdf(g.points, 1.0, cde.h_y)
        expected /= g.integrate(expected)
        np.testing.assert_allclose(d.values, expected, atol=1e-9)

    def test_identical_neighbours_give_plain_kde(self):
        g = YGrid(-5, 5, 501)
        y = np.array([-1.0, 0.5, 2.0])
        cde = fit_cde(np.zeros((3, 1)), y, 3, g, bandwidth="rule")
        d = eval_density(cde, np.zeros(1))
        kde = sum(norm.pdf(g.points, yi, cde.h_y) for yi in y)
        np.testing.assert_allclose(d.values, kde / g.integrate(kde), atol=1e-9)

    @pytest.mark.parametrize("bandwidth", BANDWIDTH_RULES)
    def test_recovers_three_modes(self, bandwidth):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3000, 2))
        y = rng.choice([0.0, 1.0, 2.0], size=3000) + 0.2 * rng.normal(size=3000)
        g = make_grid(y)
        cde = fit_cde(x, y, 300, g, bandwidth=bandwidth)
        v = eval_density(cde, np.zeros(2)).values
        peaks, _ = find_peaks(v, prominence=0.1 * v.max())
        np.testing.assert_allclose(g.points[peaks], [0, 1, 2], atol=0.15)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_simple_benchmark_three_modes_at_origin(self, seed):
        data = gen_simple(2000, seed)
        g = make_grid(data.y)
        cde = fit_cde(data.X, data.y, 100, g, bandwidth="rule")
        v = eval_density(cde, np.zeros(data.dim)).values
        peaks, _ = find_peaks(v, prominence=0.05 * v.max())
        np.testing.assert_allclose(g.points[peaks], [0, 1, 2], atol=0.2)

    def test_outputs_are_normalised(self, simple_data):
        g = make_grid(simple_data.y)
        cde = fit_cde(simple_data.X, simple_data.y, 50, g)
        rows = eval_density_batch(cde, simple_data.X[:50])
        np.testing.assert_allclose(g.integrate(rows), 1.0, atol=1e-6)
        assert rows.min() >= 0

    def test_permutation_invariant(self, simple_data):
        g = make_grid(simple_data.y)
        perm = np.random.default_rng(3).permutation(simple_data.n)
        a = fit_cde(simple_data.X, simple_data.y, 60, g, seed=4)
        b = fit_cde(simple_data.X[perm], simple_data.y[perm], 60, g, seed=4)
        q = simple_data.X[:20]
        np.testing.assert_allclose(eval_density_batch(a, q), eval_density_batch(b, q), atol=1e-12)

    def test_dimension_mismatch(self, simple_data):
        cde = fit_cde(simple_data.X, simple_data.y, 10, make_grid(simple_data.y))
        with pytest.raises(InvalidInput):
            eval_density(cde, np.zeros(3))
