"""
Profile-distance partition of covariate space.

The profile of a density ``f`` is ``H(z) = integral of f over {f <= z}``,
sampled on a ``z`` grid. Points whose densities have similar profiles are
grouped by k-means++ under the squared L2 distance between profiles, and
new points are assigned to the nearest centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .grid_density import GridDensity, YGrid

DEFAULT_Z_POINTS = 256
Z_HEADROOM = 1.05


@dataclass(frozen=True)
class Profile:
    z_grid: np.ndarray
    h_values: np.ndarray


@dataclass(frozen=True)
class Partition:
    """Fitted k-means++ centroids over profiles."""

    centroids: np.ndarray  # (J, len(z_grid))
    z_grid: np.ndarray
    labels: np.ndarray = field(repr=False)  # training assignments
    cost_history: tuple = ()

    @property
    def n_cells(self) -> int:
        return self.centroids.shape[0]


def make_z_grid(z_max: float, n_points: int = DEFAULT_Z_POINTS) -> np.ndarray:
    if not np.isfinite(z_max) or z_max <= 0:
        raise InvalidInput("z_max must be positive")
    return np.linspace(0.0, z_max, n_points)


def z_grid_for(values: np.ndarray, n_points: int = DEFAULT_Z_POINTS) -> np.ndarray:
    """z grid from 0 to 1.05 times the largest density value in ``values``."""
    return make_z_grid(Z_HEADROOM * float(np.max(values)), n_points)


def _trapezoid_weights(z_grid: np.ndarray) -> np.ndarray:
    dz = np.diff(z_grid)
    w = np.zeros(z_grid.size)
    w[:-1] += 0.5 * dz
    w[1:] += 0.5 * dz
    return w


def profile_values(values: np.ndarray, grid: YGrid, z_grid: np.ndarray) -> np.ndarray:
    """
    Profiles of a stack of densities, shape ``(m, len(z_grid))``.

    ``H(z)`` is the trapezoid-weighted sum of ``f(y_j)`` over grid points
    with ``f(y_j) <= z``.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    m, n = values.shape
    order = np.argsort(values, axis=1, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=1)
    contrib = np.take_along_axis(values * grid.weights, order, axis=1)
    cum = np.concatenate([np.zeros((m, 1)), np.cumsum(contrib, axis=1)], axis=1)

    # Rows are sorted, so shifting row r by r * offset makes the flattened
    # array globally sorted and one searchsorted call serves every row.
    offset = max(float(sorted_vals[:, -1].max()), float(z_grid[-1])) + 1.0
    shift = (np.arange(m) * offset)[:, None]
    flat = (sorted_vals + shift).ravel()
    queries = (z_grid[None, :] + shift).ravel()
    counts = np.searchsorted(flat, queries, side="right").reshape(m, -1)
    counts -= (np.arange(m) * n)[:, None]
    return np.take_along_axis(cum, counts, axis=1)


def compute_profile(density: GridDensity, z_grid) -> Profile:
    z_grid = np.asarray(z_grid, dtype=float)
    h = profile_values(density.values[None, :], density.grid, z_grid)[0]
    return Profile(z_grid, h)


def profile_distances(h: np.ndarray, centroids: np.ndarray, z_grid: np.ndarray) -> np.ndarray:
    """Distances between each row of ``h`` and each centroid, shape ``(m, J)``."""
    w = _trapezoid_weights(z_grid)
    h = np.atleast_2d(h)
    out = np.empty((h.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = h - c
        out[:, j] = (diff * diff) @ w
    return out


def profile_distance(a: Profile, b: Profile) -> float:
    """Trapezoid integral of ``(H_a(z) - H_b(z))^2`` over the shared z grid."""
    if a.z_grid.shape != b.z_grid.shape or not np.array_equal(a.z_grid, b.z_grid):
        raise InvalidInput("profiles are on different z grids")
    diff = a.h_values - b.h_values
    return float((diff * diff) @ _trapezoid_weights(a.z_grid))


def _kmeanspp_seed(h, w, n_clusters, rng):
    n = h.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((h - h[chosen[0]]) ** 2) @ w
    for _ in range(1, n_clusters):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a centroid
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((h - h[nxt]) ** 2) @ w)
    return h[chosen].copy()


def kmeanspp_fit(profiles, n_clusters: int, n_iters: int = 100, seed=0, z_grid=None) -> Partition:
    """
    k-means++ over profiles under the profile distance.

    ``profiles`` is either a sequence of :class:`Profile` sharing one z grid
    or an ``(N, m_z)`` array together with ``z_grid``. Empty clusters are
    reseeded at the point farthest from its current centroid.
    """
    if z_grid is None:
        profiles = list(profiles)
        if not profiles:
            raise InvalidInput("no profiles given")
        z_grid = profiles[0].z_grid
        if any(not np.array_equal(p.z_grid, z_grid) for p in profiles):
            raise InvalidInput("profiles are on different z grids")
        h = np.stack([p.h_values for p in profiles])
    else:
        h = np.atleast_2d(np.asarray(profiles, dtype=float))
        z_grid = np.asarray(z_grid, dtype=float)
    n = h.shape[0]
    n_clusters = int(n_clusters)
    if n_clusters < 1 or n < n_clusters:
        raise InvalidInput(f"need 1 <= J <= N, got J={n_clusters}, N={n}")

    rng = np.random.default_rng(seed)
    w = _trapezoid_weights(z_grid)
    centroids = _kmeanspp_seed(h, w, n_clusters, rng)
    labels = None
    costs = []
    for _ in range(max(int(n_iters), 1)):
        d = profile_distances(h, centroids, z_grid)
        new_labels = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), new_labels]
        counts = np.bincount(new_labels, minlength=n_clusters)
        for j in np.flatnonzero(counts == 0):
            # farthest point among cells that can spare one
            donor = np.where(counts[new_labels] > 1, point_cost, -np.inf)
            far = int(np.argmax(donor))
            counts[new_labels[far]] -= 1
            counts[j] = 1
            new_labels[far] = j
            point_cost[far] = 0.0
        costs.append(float(point_cost.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(n_clusters):
            centroids[j] = h[labels == j].mean(axis=0)
    labels.setflags(write=False)
    centroids.setflags(write=False)
    return Partition(centroids, z_grid, labels, tuple(costs))


def assign_cells(partition: Partition, h: np.ndarray) -> np.ndarray:
    """Nearest-centroid index for each profile row; ties go to the lowest index."""
    d = profile_distances(h, partition.centroids, partition.z_grid)
    return np.argmin(d, axis=1)


def assign_cell(partition: Partition, profile: Profile) -> int:
    if not np.array_equal(profile.z_grid, partition.z_grid):
        raise InvalidInput("profile and partition use different z grids")
    return int(assign_cells(partition, profile.h_values[None, :])[0])
