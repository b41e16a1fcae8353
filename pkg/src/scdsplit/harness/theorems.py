"""
Numerical checks of the method's guarantees.

Each check returns a :class:`CheckResult` with the measured statistic and
the bound it is held to. Informational checks (``gating=False``) report on
behaviour outside the proven regime and never fail the suite.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .. import conformal as cf
from ..conformal import lower_quantile, superlevel_counts, superlevel_from_values, upper_quantile_conformal
from ..datagen import gen_complex, gen_simple, three_way_split
from ..grid_density import YGrid, eval_density_batch, fit_cde, make_grid, normalize_values
from ..scd import ScdConfig, fit_cd_split, fit_scd_split
from ..smoothing import SmoothParams, SmoothPath, convolve_values, fourier_values, randomized_smooth, sign_variations
from .metrics import covered_mask


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    statistic: str
    bound: str
    gating: bool = True
    seconds: float = 0.0

    @property
    def tag(self) -> str:
        if not self.gating:
            return "INFO"
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        return f"[{self.tag}] {self.name}: {self.statistic} (bound: {self.bound}) [{self.seconds:.1f}s]"


# ----------------------------------------------------------------------------
# Random test densities
# ----------------------------------------------------------------------------

VD_GRID = YGrid(-10.0, 10.0, 1024)


def random_density(rng, grid: YGrid = VD_GRID, max_parts: int = 6) -> np.ndarray:
    """
    Random piecewise-smooth density: a positive mixture of Gaussian bumps
    and boxes (discontinuous pieces). Every piece stays at least six sds
    inside the grid, so smoothing loses no measurable mass at the edges.
    """
    y = grid.points
    half = 0.2 * grid.span
    values = np.zeros(grid.n_points)
    for _ in range(int(rng.integers(1, max_parts + 1))):
        c = rng.uniform(-half, half)
        w = rng.uniform(0.2, 1.0)
        if rng.uniform() < 0.3:
            width = rng.uniform(0.3, 2.0)
            values += w * (np.abs(y - c) <= width / 2) / width
        else:
            s = rng.uniform(0.15, 1.0)
            values += w * norm.pdf(y, c, s)
    return normalize_values(values, grid)


def _case(rng):
    f = random_density(rng)
    t = rng.uniform(0.05, 0.95) * f.max()
    sigma = float(rng.uniform(0.05, 1.0))
    return f, t, sigma


def check_variation_diminishing(seed=0, n_cases=100) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    ok = 0
    for _ in range(n_cases):
        f, t, sigma = _case(rng)
        g = fourier_values(f, VD_GRID, SmoothParams(sigma))
        ok += sign_variations(g - t) <= sign_variations(f - t)
    return CheckResult("variation diminishing, S(smooth(f) - t) <= S(f - t)", ok == n_cases,
                       f"{ok}/{n_cases} cases", f"{n_cases}/{n_cases}")


def check_fixed_threshold_counts(seed=0, n_cases=100) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    ok = 0
    worst = 0
    for _ in range(n_cases):
        f, t, sigma = _case(rng)
        g = fourier_values(f, VD_GRID, SmoothParams(sigma))
        before = int(superlevel_counts(f, [t])[0])
        after = int(superlevel_counts(g, [t])[0])
        ok += after <= before
        worst = max(worst, after - before)
    return CheckResult("fixed-threshold count non-increase", ok == n_cases,
                       f"{ok}/{n_cases} cases, max increase {worst}", "count(after) <= count(before)")


# ----------------------------------------------------------------------------
# Narrow valley
# ----------------------------------------------------------------------------

VALLEY_STEP = 0.01


def two_plateaus(delta: float, width: float, floor: float, height: float, pad: float):
    """Plateaus of ``height`` on both sides of a centred valley of width ``delta`` at ``floor``."""
    half = delta / 2 + width + pad
    n_half = int(math.ceil(half / VALLEY_STEP))
    grid = YGrid(-n_half * VALLEY_STEP, n_half * VALLEY_STEP, 2 * n_half + 1)
    a = np.abs(grid.points)
    values = np.where(a < delta / 2 - 1e-9, floor, 0.0)
    values = np.where((a >= delta / 2 - 1e-9) & (a <= delta / 2 + width + 1e-9), height, values)
    return grid, values


def _smooth_raw(values, grid, sigma):
    """Gaussian smoothing without renormalisation (the valley shapes are not densities)."""
    scale = grid.integrate(values)
    return fourier_values(values, grid, SmoothParams(sigma)) * scale


def valley_lattice():
    """(delta, sigma, eps) triples; the valley floor is 0 and the threshold ``t = eps``."""
    for delta in (0.5, 1.0, 1.5, 2.0):
        for sigma in (0.5, 1.0, 1.5, 2.0):
            for eps_frac in (0.05, 0.1, 0.2, 0.3, 0.5):
                yield delta, sigma, eps_frac


def check_narrow_valley(seed=0) -> CheckResult:
    """
    Zero-floor valleys with ``t = eps``: the valley satisfies ``f <= t - eps``
    and the tail condition reads ``2 P(U >= delta/2) >= eps / H``.
    """
    height = 1.0
    valid = merged = 0
    for delta, sigma, eps_frac in valley_lattice():
        eps = eps_frac * height
        tail = 2.0 * norm.sf(delta / (2 * sigma))
        if tail < eps / height:
            continue
        valid += 1
        width = 10.0 * sigma
        grid, f = two_plateaus(delta, width, 0.0, height, pad=8.0 * sigma)
        t = eps
        g = _smooth_raw(f, grid, sigma)
        before = int(superlevel_counts(f, [t])[0])
        after = int(superlevel_counts(g, [t])[0])
        merged += after < before
    passed = valid >= 27 and merged == valid
    return CheckResult("narrow valley strict merge", passed, f"{merged}/{valid} valid configurations merge",
                       "all, with >= 27 valid")


def check_narrow_valley_positive_floor(seed=0) -> CheckResult:
    """
    Valleys whose floor sits above zero, with ``t`` strictly above the floor.
    The merge is not implied by the stated hypotheses in this regime: the
    smoothed valley centre is ``floor + (H - floor) * tail``, which can stay
    below ``t``. Reported for information only.
    """
    height = 1.0
    valid = merged = 0
    for delta, sigma, eps_frac in valley_lattice():
        for t in (0.6, 0.9):
            eps = eps_frac * height
            floor = t - eps
            if floor <= 0:
                continue
            tail = 2.0 * norm.sf(delta / (2 * sigma))
            if tail < eps / height:
                continue
            valid += 1
            grid, f = two_plateaus(delta, 10.0 * sigma, floor, height, pad=8.0 * sigma)
            g = _smooth_raw(f, grid, sigma)
            merged += int(superlevel_counts(g, [t])[0]) < int(superlevel_counts(f, [t])[0])
    return CheckResult("narrow valley, positive floor (outside proven regime)", True,
                       f"{merged}/{valid} configurations merge", "not asserted", gating=False)


# ----------------------------------------------------------------------------
# Length bound
# ----------------------------------------------------------------------------

LB_GRID = YGrid(-15.0, 15.0, 4096)


def _mass_threshold(order_values, weight_values, grid, coverage):
    """Level ``t`` with the ``weight`` mass of ``{order >= t}`` equal to ``coverage``."""
    order = np.argsort(-order_values, kind="stable")
    cum = np.cumsum((weight_values * grid.weights)[order])
    j = int(np.searchsorted(cum, coverage * cum[-1]))
    return float(order_values[order[min(j, order.size - 1)]])


def _crossing_slopes(values, grid, t):
    """|f'| interpolated at each crossing of level ``t``."""
    d = np.abs(np.gradient(values, grid.step))
    above = values >= t
    idx = np.flatnonzero(above[1:] != above[:-1])
    slopes = []
    for i in idx:
        w = (t - values[i]) / (values[i + 1] - values[i])
        slopes.append((1 - w) * d[i] + w * d[i + 1])
    return np.array(slopes)


def length_bound_case(f, sigma, alpha=0.1, grid=LB_GRID):
    """(observed |l~ - l|, bound, N, L, M) for one density and width."""
    g = fourier_values(f, grid, SmoothParams(sigma))
    t = _mass_threshold(f, f, grid, 1 - alpha)
    t_s = _mass_threshold(g, f, grid, 1 - alpha)
    before = superlevel_from_values(f, grid, t)
    after = superlevel_from_values(g, grid, t_s)
    lip = max(np.abs(np.gradient(f, grid.step)).max(), np.abs(np.gradient(g, grid.step)).max())
    slopes = np.concatenate([_crossing_slopes(f, grid, t), _crossing_slopes(g, grid, t_s)])
    m = float(slopes.min())
    n = before.count
    bound = 4 * n * lip * sigma / m * math.sqrt(2 / math.pi) + 2 * grid.step
    return abs(after.total_length - before.total_length), bound, n, lip, m


def check_length_bound(seed=0, n_cases=60) -> CheckResult:
    rng = np.random.default_rng([seed, 4])
    worst = 0.0
    ok = 0
    for _ in range(n_cases):
        k = int(rng.integers(1, 4))
        centres = np.sort(rng.uniform(-6, 6, k))
        sds = rng.uniform(0.4, 1.5, k)
        w = rng.uniform(0.3, 1.0, k)
        f = normalize_values(sum(wi * norm.pdf(LB_GRID.points, c, s) for wi, c, s in zip(w, centres, sds)), LB_GRID)
        sigma = float(rng.uniform(0.05, 0.5)) * float(sds.min())
        diff, bound, *_ = length_bound_case(f, sigma)
        ok += diff <= bound
        worst = max(worst, diff / bound)
    return CheckResult("interval length bound", ok == n_cases,
                       f"{ok}/{n_cases} cases, max |l~-l|/bound = {worst:.3f}", "ratio <= 1")


# ----------------------------------------------------------------------------
# Smoothing paths
# ----------------------------------------------------------------------------


def check_path_equivalence(seed=0, n_densities=10) -> CheckResult:
    rng = np.random.default_rng([seed, 5])
    grid = VD_GRID
    n = grid.n_points
    lo, hi = int(0.05 * n), int(0.95 * n)
    worst = 0.0
    for _ in range(n_densities):
        f = random_density(rng)
        for mult in (0.1, 0.5, 1.0, 2.0):
            sigma = mult * grid.span / 20
            a = fourier_values(f, grid, SmoothParams(sigma))
            b = convolve_values(f, grid, SmoothParams(sigma, path=SmoothPath.SPATIAL))
            worst = max(worst, float(np.abs(a - b)[lo:hi].max()))
    return CheckResult("spectral vs spatial smoothing", worst <= 1e-6, f"sup-norm {worst:.2e}", "1e-06")


def check_mass_and_sign(seed=0, n_densities=20) -> CheckResult:
    rng = np.random.default_rng([seed, 6])
    worst_mass = 0.0
    min_value = math.inf
    for _ in range(n_densities):
        f = random_density(rng)
        for path in SmoothPath:
            g = fourier_values(f, VD_GRID, SmoothParams(1.0)) if path is SmoothPath.SPECTRAL else \
                convolve_values(f, VD_GRID, SmoothParams(1.0, path=path))
            worst_mass = max(worst_mass, abs(VD_GRID.integrate(g) - 1))
            min_value = min(min_value, float(g.min()))
    return CheckResult("smoothing preserves mass and sign", worst_mass <= 1e-6 and min_value >= 0,
                       f"max |mass - 1| {worst_mass:.1e}, min value {min_value:.1e}", "1e-06, >= 0")


def check_semigroup(seed=0, n_densities=10) -> CheckResult:
    rng = np.random.default_rng([seed, 7])
    worst = 0.0
    for _ in range(n_densities):
        f = random_density(rng)
        s1, s2 = rng.uniform(0.1, 1.0, 2)
        twice = fourier_values(fourier_values(f, VD_GRID, SmoothParams(s1)), VD_GRID, SmoothParams(s2))
        once = fourier_values(f, VD_GRID, SmoothParams(math.hypot(s1, s2)))
        worst = max(worst, float(np.abs(twice - once).max()))
    return CheckResult("semigroup, s1 then s2 equals hypot(s1, s2)", worst <= 1e-5, f"sup-norm {worst:.2e}", "1e-05")


def triangle_density(y, half_width=2.0):
    """Triangular density on ``[-half_width, half_width]``; Lipschitz constant ``1 / half_width^2``."""
    return np.maximum(0.0, half_width - np.abs(y)) / half_width**2


def check_randomized_smoothing(seed=0, n_samples=100_000) -> CheckResult:
    grid = YGrid(-6.0, 6.0, 256)
    sigma = 1.0
    lip = 1 / 4
    mc = randomized_smooth(triangle_density, sigma, n_samples, [seed, 8], grid)
    exact = fourier_values(triangle_density(grid.points), grid, SmoothParams(sigma))
    gap = float(np.abs(mc - exact).max())
    bound = 0.02 * lip * sigma
    return CheckResult("randomized smoothing converges to the spectral path", gap <= bound,
                       f"sup-norm {gap:.2e} at n={n_samples}", f"0.02 L sigma = {bound:.2e}")


# ----------------------------------------------------------------------------
# Conformal primitives
# ----------------------------------------------------------------------------


def brute_lower(s, alpha):
    k = math.floor(alpha * (len(s) + 1) + 1e-9)
    return -math.inf if k == 0 else sorted(s)[k - 1]


def brute_upper(s, alpha):
    k = math.ceil((1 - alpha) * (len(s) + 1) - 1e-9)
    return math.inf if k > len(s) else sorted(s)[max(k, 1) - 1]


def check_quantile_oracles(seed=0, n_cases=1000) -> CheckResult:
    rng = np.random.default_rng([seed, 9])
    ok = 0
    edges = {"-inf": 0, "+inf": 0}
    for _ in range(n_cases):
        m = int(rng.integers(1, 60))
        alpha = float(rng.choice([0.05, 0.1, 0.2, 0.5, rng.uniform(0.01, 0.99)]))
        s = rng.normal(size=m)
        if rng.uniform() < 0.3:
            s = np.round(s, 1)  # ties
        lo, hi = lower_quantile(s, alpha), upper_quantile_conformal(s, alpha)
        ok += (lo == brute_lower(list(s), alpha)) and (hi == brute_upper(list(s), alpha))
        edges["-inf"] += lo == -math.inf
        edges["+inf"] += hi == math.inf
    return CheckResult("quantile operations match sorting", ok == n_cases,
                       f"{ok}/{n_cases} agree ({edges['-inf']} -inf and {edges['+inf']} +inf cases)",
                       f"{n_cases}/{n_cases}")


def check_superlevel_sets(seed=0, n_cases=50) -> CheckResult:
    """Fine-resolution scan of the interpolated density against each returned set, plus monotonicity in t."""
    rng = np.random.default_rng([seed, 10])
    grid = VD_GRID
    fine = np.linspace(grid.y_min, grid.y_max, 10 * (grid.n_points - 1) + 1)
    bad = 0
    for _ in range(n_cases):
        f = random_density(rng)
        t1, t2 = np.sort(rng.uniform(0.02, 0.98, 2) * f.max())
        fv = np.interp(fine, grid.points, f)
        for t in (t1, t2):
            s = superlevel_from_values(f, grid, t)
            inside = np.zeros(fine.size, dtype=bool)
            for lo, hi in s:
                inside |= (fine >= lo) & (fine <= hi)
            slack = 1e-9 * f.max()
            bad += np.any(inside & (fv < t - slack)) or np.any(~inside & (fv > t + slack))
        l1 = superlevel_from_values(f, grid, t1).total_length
        l2 = superlevel_from_values(f, grid, t2).total_length
        bad += l1 < l2
    return CheckResult("superlevel extraction and monotonicity", bad == 0, f"{bad} violations in {n_cases} densities", "0")


# ----------------------------------------------------------------------------
# End-to-end checks
# ----------------------------------------------------------------------------


def check_sigma_zero_reduction(seed=0) -> CheckResult:
    data = gen_simple(600, seed)
    cp, test = data.subset(np.arange(500)), data.subset(np.arange(500, 600))
    config = ScdConfig(sigma_grid=(0.0,), seed=seed)
    train, val, cal = three_way_split(cp, config.split_fractions, config.seed)
    scd = fit_scd_split(train, val, cal, config)
    cd = fit_cd_split(scd.cde, cal, config.alpha, seed=seed)
    same = sum(a == b for a, b in zip(scd.predict_many(test.X), cd.predict_many(test.X)))
    return CheckResult("sigma = 0 reduces to CD-split", same == test.n, f"{same}/{test.n} identical sets",
                       f"{test.n}/{test.n}")


def coverage_replicates(n_rep=200, n_cp=300, n_test=50, alpha=0.1, seed=0, methods=("scd_split",),
                        generator=gen_simple):
    """Mean test coverage of each method over independent replicates."""
    out = {m: [] for m in methods}
    for r in range(n_rep):
        rs = seed * 100_003 + r
        data = generator(n_cp + n_test, rs)
        cp, test = data.subset(np.arange(n_cp)), data.subset(np.arange(n_cp, n_cp + n_test))
        config = ScdConfig(alpha=alpha, seed=rs)
        train, val, cal = three_way_split(cp, config.split_fractions, rs)
        grid = make_grid(train.y, config.n_grid, config.margin_sds)
        cde = fit_cde(train.X, train.y, min(config.k_neighbors, train.n), grid, config.cde_seed)
        raw = {"train": eval_density_batch(cde, cde.x_train), "val": eval_density_batch(cde, val.X),
               "cal": eval_density_batch(cde, cal.X)}
        raw_test = eval_density_batch(cde, test.X)
        for m in methods:
            if m == "scd_split":
                sets = fit_scd_split(train, val, cal, config, cde=cde, raw=raw).predict_many(raw=raw_test)
            elif m == "cd_split":
                sets = fit_cd_split(cde, cal, alpha, seed=rs, raw_train=raw["train"],
                                    raw_cal=raw["cal"]).predict_many(raw=raw_test)
            elif m == "hpd_split":
                sets = cf.calibrate_hpd_split(cde, cal, alpha, raw["cal"], seed=rs).predict_many(raw=raw_test)
            elif m == "dist_split":
                sets = cf.calibrate_dist_split(cde, cal, alpha, raw["cal"]).predict_many(raw=raw_test)
            else:
                reg = cf.fit_knn_regressor(train.X, train.y, min(config.k_neighbors, train.n))
                fit = cf.calibrate_vanilla_cp if m == "vanilla_cp" else cf.calibrate_cqr
                sets = fit(reg, cal, alpha).predict_many(test.X)
            out[m].append(float(covered_mask(sets, test.y).mean()))
    return {m: np.array(v) for m, v in out.items()}


def check_coverage(seed=0, n_rep=200) -> CheckResult:
    """
    Marginal coverage of every predictor over independent draws. The band
    uses the Bernoulli standard error of ``n_rep`` single test points; the
    per-replicate averages over several test points only reduce variance.
    """
    methods = ("vanilla_cp", "cqr", "dist_split", "cd_split", "hpd_split", "scd_split")
    alpha = 0.1
    cov = coverage_replicates(n_rep, alpha=alpha, seed=seed, methods=methods)
    se = math.sqrt(alpha * (1 - alpha) / n_rep)
    means = {m: float(v.mean()) for m, v in cov.items()}
    passed = all(abs(v - (1 - alpha)) <= 3 * se for v in means.values())
    stat = ", ".join(f"{m} {v:.3f}" for m, v in means.items())
    return CheckResult(f"coverage over {n_rep} replicates", passed, stat, f"0.900 +- {3 * se:.3f}")


def check_count_monotone(seed=0, trials=3) -> CheckResult:
    """Mean interval count at the largest width does not exceed the count at 0 (complex benchmark)."""
    at0, atmax = [], []
    for tr in range(trials):
        data = gen_complex(1500, seed + tr)
        cp, test = data.subset(np.arange(1000)), data.subset(np.arange(1000, 1500))
        config = ScdConfig(seed=seed + tr)
        train, val, cal = three_way_split(cp, config.split_fractions, config.seed)
        base = fit_scd_split(train, val, cal, replace(config, sigma_grid=(0.0,)))
        raw_test = eval_density_batch(base.cde, test.X)
        big = fit_scd_split(train, val, cal, replace(config, sigma_grid=(10.0,)), cde=base.cde)
        at0.append(np.mean([s.count for s in base.predict_many(raw=raw_test)]))
        atmax.append(np.mean([s.count for s in big.predict_many(raw=raw_test)]))
    a, b = float(np.mean(at0)), float(np.mean(atmax))
    return CheckResult("mean count at sigma=10 <= at sigma=0", b <= a, f"{b:.2f} vs {a:.2f}", "<=")


CHECKS = (
    check_variation_diminishing,
    check_fixed_threshold_counts,
    check_narrow_valley,
    check_narrow_valley_positive_floor,
    check_length_bound,
    check_path_equivalence,
    check_mass_and_sign,
    check_semigroup,
    check_randomized_smoothing,
    check_quantile_oracles,
    check_superlevel_sets,
    check_sigma_zero_reduction,
    check_count_monotone,
    check_coverage,
)


def theorem_checks(seed=0, emit=None) -> list[CheckResult]:
    """Run every check; ``emit`` (e.g. ``print``) receives each line as it completes."""
    results = []
    for check in CHECKS:
        start = time.perf_counter()
        res = replace(check(seed=seed), seconds=time.perf_counter() - start)
        results.append(res)
        if emit is not None:
            emit(res.line())
    return results


def all_passed(results) -> bool:
    return all(r.passed for r in results if r.gating)
