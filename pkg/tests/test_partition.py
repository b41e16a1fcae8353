import numpy as np
import pytest
from hypothesis import given, strategies as st

from scdsplit.errors import InvalidInput
from scdsplit.grid_density import GridDensity, YGrid
from scdsplit.partition import (
    Partition,
    Profile,
    assign_cell,
    assign_cells,
    compute_profile,
    kmeanspp_fit,
    make_z_grid,
    profile_distance,
    profile_values,
)

GRID = YGrid(-5, 5, 501)
Z = make_z_grid(1.0, 201)


def step_profile(z_grid, at):
    return Profile(z_grid, (z_grid >= at).astype(float))


class TestProfile:
    def test_top_level_covers_everything(self):
        d = GridDensity.from_values(GRID, np.exp(-GRID.points**2))
        p = compute_profile(d, make_z_grid(d.values.max(), 64))
        assert p.h_values[-1] == pytest.approx(1.0, abs=1e-6)

    def test_zero_level_is_empty_for_positive_density(self):
        d = GridDensity.from_values(GRID, np.exp(-GRID.points**2 / 8) + 0.01)
        assert compute_profile(d, Z).h_values[0] == 0.0

    def test_uniform_is_a_step(self):
        g = YGrid(0, 4, 101)
        d = GridDensity.from_values(g, np.ones(101))  # height 0.25
        z = np.array([0.1, 0.2, 0.2499, 0.25, 0.3])
        np.testing.assert_allclose(compute_profile(d, z).h_values, [0, 0, 0, 1, 1], atol=1e-12)

    @given(st.lists(st.floats(0.0, 5.0), min_size=16, max_size=64).filter(lambda v: sum(v) > 0))
    def test_nondecreasing_and_bounded(self, raw):
        g = YGrid(0, 1, len(raw))
        d = GridDensity.from_values(g, np.array(raw))
        h = compute_profile(d, make_z_grid(d.values.max() * 1.05, 50)).h_values
        assert np.all(np.diff(h) >= -1e-12)
        assert h[0] >= 0 and h[-1] <= 1 + 1e-9

    def test_stacked_rows_match_single_rows(self, rng):
        vals = rng.uniform(0, 1, size=(5, GRID.n_points))
        z = make_z_grid(1.1, 40)
        stacked = profile_values(vals, GRID, z)
        for v, h in zip(vals, stacked):
            ref = [(v * GRID.weights)[v <= zz].sum() for zz in z]
            np.testing.assert_allclose(h, ref, atol=1e-12)


class TestDistance:
    def test_identity(self):
        p = step_profile(Z, 0.3)
        assert profile_distance(p, p) == 0.0

    def test_two_steps(self):
        d = profile_distance(step_profile(Z, 0.2), step_profile(Z, 0.7))
        assert d == pytest.approx(0.5, abs=2 * (Z[1] - Z[0]))

    def test_grid_mismatch(self):
        with pytest.raises(InvalidInput):
            profile_distance(step_profile(Z, 0.2), step_profile(make_z_grid(2.0, 201), 0.2))

    @given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
    def test_triangle_inequality_of_root(self, steps):
        a, b, c = (step_profile(Z, s) for s in steps)
        d = lambda p, q: np.sqrt(profile_distance(p, q))
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-9

    @given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
    def test_symmetric(self, a, b):
        pa, pb = step_profile(Z, a), step_profile(Z, b)
        assert profile_distance(pa, pb) == profile_distance(pb, pa)


def planted(rng, n_per=30):
    a = [step_profile(Z, 0.2 + rng.uniform(-0.03, 0.03)) for _ in range(n_per)]
    b = [step_profile(Z, 0.8 + rng.uniform(-0.03, 0.03)) for _ in range(n_per)]
    return a + b, np.repeat([0, 1], n_per)


class TestKMeans:
    def test_one_cell_is_the_mean(self, rng):
        profiles, _ = planted(rng)
        part = kmeanspp_fit(profiles, 1)
        np.testing.assert_allclose(part.centroids[0], np.mean([p.h_values for p in profiles], axis=0))

    def test_planted_clusters(self, rng):
        profiles, truth = planted(rng)
        part = kmeanspp_fit(profiles, 2, seed=5)
        labels = part.labels
        # labels are defined up to permutation
        if labels[0] != 0:
            labels = 1 - labels
        np.testing.assert_array_equal(labels, truth)
        h = np.stack([p.h_values for p in profiles])
        for j in range(2):
            np.testing.assert_allclose(part.centroids[j], h[part.labels == j].mean(axis=0))

    def test_every_point_its_own_cell(self, rng):
        profiles = [step_profile(Z, a) for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
        part = kmeanspp_fit(profiles, 5, seed=1)
        assert sorted(part.labels.tolist()) == [0, 1, 2, 3, 4]
        assert part.cost_history[-1] == 0.0

    def test_too_many_cells(self):
        with pytest.raises(InvalidInput):
            kmeanspp_fit([step_profile(Z, 0.5)] * 2, 3)

    def test_identical_points_still_fill_cells(self):
        part = kmeanspp_fit([step_profile(Z, 0.5)] * 6, 3, seed=2)
        assert np.bincount(part.labels, minlength=3).min() >= 1
        assert np.all(np.isfinite(part.centroids))

    def test_seeded(self, rng):
        profiles, _ = planted(rng)
        a = kmeanspp_fit(profiles, 4, seed=9)
        b = kmeanspp_fit(profiles, 4, seed=9)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_cost_never_increases(self, rng):
        h = np.cumsum(rng.uniform(0, 1, size=(200, 50)), axis=1)
        h /= h[:, -1:]
        part = kmeanspp_fit(h, 6, seed=3, z_grid=np.linspace(0, 1, 50))
        assert all(b <= a + 1e-12 for a, b in zip(part.cost_history, part.cost_history[1:]))


class TestAssign:
    def make(self):
        centroids = np.stack([(Z >= a).astype(float) for a in (0.1, 0.4, 0.6, 0.9)])
        return Partition(centroids, Z, np.arange(4))

    def test_exact_centroid(self):
        assert assign_cell(self.make(), step_profile(Z, 0.9)) == 3

    def test_each_centroid_maps_to_itself(self):
        part = self.make()
        for j, c in enumerate(part.centroids):
            assert assign_cell(part, Profile(Z, c)) == j

    def test_tie_goes_to_lowest_index(self):
        # a step at 0.5 is equidistant from steps at 0.4 and 0.6
        assert assign_cell(self.make(), step_profile(Z, 0.5)) == 1

    def test_planted_test_points(self, rng):
        profiles, truth = planted(rng)
        part = kmeanspp_fit(profiles, 2, seed=5)
        new, new_truth = planted(np.random.default_rng(99), n_per=10)
        got = assign_cells(part, np.stack([p.h_values for p in new]))
        mapping = {part.labels[0]: 0, part.labels[-1]: 1}
        assert [mapping[g] for g in got] == new_truth.tolist()

    def test_grid_mismatch(self):
        with pytest.raises(InvalidInput):
            assign_cell(self.make(), step_profile(make_z_grid(2.0, 201), 0.5))
