"""
Gaussian low-pass smoothing of grid densities.

Two deterministic paths compute the same operator: ``fourier_smooth``
multiplies the zero-padded spectrum by ``exp(-2 pi^2 sigma^2 w^2)`` and
``gaussian_convolve`` convolves with a sampled, truncated Gaussian kernel.
``randomized_smooth`` is the Monte-Carlo estimate ``mean f(x + delta)`` with
``delta ~ N(0, sigma^2)``, which converges to the same function.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import InvalidInput
from .grid_density import GridDensity, YGrid, normalize_values

# Draws per chunk in randomized_smooth (bounds memory at ~64 MB).
_RS_CHUNK = 8_000_000


class SmoothPath(str, enum.Enum):
    SPECTRAL = "spectral"
    SPATIAL = "spatial"


@dataclass(frozen=True)
class SmoothParams:
    sigma: float
    truncation: float = 6.0
    path: SmoothPath = SmoothPath.SPECTRAL

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise InvalidInput(f"sigma must be a finite nonnegative number, got {self.sigma}")
        if self.truncation < 3:
            raise InvalidInput("kernel truncation must be at least 3 sigma")
        object.__setattr__(self, "path", SmoothPath(self.path))


def _pad_cells(sigma: float, truncation: float, step: float) -> int:
    return int(math.ceil(truncation * sigma / step))


def gaussian_kernel(sigma: float, step: float, truncation: float = 6.0) -> np.ndarray:
    """Sampled N(0, sigma^2) kernel on ``+-truncation * sigma``, summing to one."""
    half = _pad_cells(sigma, truncation, step)
    u = np.arange(-half, half + 1) * step
    k = np.exp(-0.5 * (u / sigma) ** 2)
    return k / k.sum()


def convolve_values(values: np.ndarray, grid: YGrid, params: SmoothParams) -> np.ndarray:
    """Spatial path on raw arrays; smooths along the last axis."""
    values = np.asarray(values, dtype=float)
    if params.sigma == 0:
        return values.copy()
    kernel = gaussian_kernel(params.sigma, grid.step, params.truncation)
    out = ndimage.convolve1d(values, kernel, axis=-1, mode="constant", cval=0.0)
    return normalize_values(np.maximum(out, 0.0), grid)


def fourier_values(values: np.ndarray, grid: YGrid, params: SmoothParams) -> np.ndarray:
    """Spectral path on raw arrays; smooths along the last axis."""
    values = np.asarray(values, dtype=float)
    if params.sigma == 0:
        return values.copy()
    pad = _pad_cells(params.sigma, params.truncation, grid.step)
    n = grid.n_points
    width = [(0, 0)] * (values.ndim - 1) + [(pad, pad)]
    padded = np.pad(values, width)
    # extra trailing zeros up to a fast FFT length only widen the padding
    n_pad = sfft.next_fast_len(padded.shape[-1], real=True)
    freqs = np.fft.rfftfreq(n_pad, d=grid.step)
    gain = np.exp(-2.0 * np.pi**2 * params.sigma**2 * freqs**2)
    out = sfft.irfft(sfft.rfft(padded, n=n_pad, axis=-1) * gain, n=n_pad, axis=-1)
    out = out[..., pad : pad + n]
    # round-off leaves values of order -1e-17 where the density vanishes
    out[out < 0] = 0.0
    return normalize_values(out, grid)


def smooth_values(values: np.ndarray, grid: YGrid, params: SmoothParams) -> np.ndarray:
    """Dispatch on ``params.path``."""
    if params.path is SmoothPath.SPATIAL:
        return convolve_values(values, grid, params)
    return fourier_values(values, grid, params)


def gaussian_convolve(density: GridDensity, params: SmoothParams) -> GridDensity:
    if params.sigma == 0:
        return density
    return GridDensity(density.grid, convolve_values(density.values, density.grid, params))


def fourier_smooth(density: GridDensity, params: SmoothParams) -> GridDensity:
    if params.sigma == 0:
        return density
    return GridDensity(density.grid, fourier_values(density.values, density.grid, params))


def randomized_smooth(f, sigma: float, n_samples: int, seed, grid: YGrid) -> np.ndarray:
    """
    Monte-Carlo Gaussian smoothing of a vectorised callable on ``grid``.

    Each grid point gets its own ``n_samples`` fresh perturbations. The
    result is returned as raw values (``f`` need not be a density).
    """
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInput("sigma must be positive")
    n_samples = int(n_samples)
    if n_samples < 1:
        raise InvalidInput("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = grid.points
    out = np.empty(pts.size)
    rows = max(1, _RS_CHUNK // n_samples)
    for start in range(0, pts.size, rows):
        block = pts[start : start + rows]
        delta = rng.normal(0.0, sigma, size=(block.size, n_samples))
        vals = np.asarray(f(block[:, None] + delta), dtype=float)
        out[start : start + rows] = vals.mean(axis=1)
    return out


def sign_variations(values) -> int:
    """Number of sign changes after discarding zero entries."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("values must be finite")
    s = np.sign(v[v != 0])
    if s.size < 2:
        return 0
    return int(np.count_nonzero(s[1:] != s[:-1]))
