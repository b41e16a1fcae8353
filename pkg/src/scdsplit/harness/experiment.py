"""
Multi-trial experiment runner.

A trial draws (or resamples) ``n_cp + n_test`` rows with seed
``master_seed + trial``, standardises the features of the pooled sample,
keeps the first ``n_cp`` rows for conformal prediction and the rest for
testing. The conformal block is split three ways (train, validation,
calibration). Every method shares that split and one fitted density
estimator; methods without a tuning step ignore the validation block.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .. import conformal as cf
from ..datagen import Dataset, gen_complex, gen_simple, load_csv, standardize, three_way_split
from ..errors import InvalidInput
from ..grid_density import eval_density_batch, fit_cde, make_grid
from ..scd import LossKind, ScdConfig, fit_cd_split, fit_scd_split
from .metrics import TrialMetrics, covered_mask, evaluate_sets

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

METHODS = ("vanilla_cp", "cqr", "dist_split", "cd_split", "hpd_split", "scd_split")
METHOD_LABELS = {
    "vanilla_cp": "Vanilla CP",
    "cqr": "CQR",
    "dist_split": "Dist-split",
    "cd_split": "CD-split",
    "hpd_split": "HPD-split",
    "scd_split": "SCD-split",
}
DATASET_KINDS = ("simple", "complex", "csv")
WORKERS_ENV = "SCDSPLIT_WORKERS"


class ConfigError(InvalidInput):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "complex"
    path: str | None = None
    target: str | None = None
    max_rows: int | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "csv" and not (self.path and self.target):
            raise ConfigError("csv datasets need 'path' and 'target'")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    methods: tuple = METHODS
    alpha: float = 0.1
    n_cp: int = 2000
    n_test: int = 5000
    trials: int = 10
    scd: ScdConfig = field(default_factory=ScdConfig)
    output: str | None = None
    seed: int = 0
    sigmas: tuple | None = None  # fixed widths for the ablations
    dump_points: bool = False
    name: str = "experiment"

    def __post_init__(self):
        methods = tuple(self.methods)
        unknown = [m for m in methods if m not in METHODS]
        if unknown or not methods:
            raise ConfigError(f"unknown methods {unknown}; valid names are {', '.join(METHODS)}")
        object.__setattr__(self, "methods", methods)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n_test < 1:
            raise ConfigError("n_test must be >= 1")
        if self.n_cp < 60:
            raise ConfigError("n_cp must be >= 60")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.sigmas is not None:
            sig = tuple(float(s) for s in self.sigmas)
            if not sig or any(s < 0 or not math.isfinite(s) for s in sig):
                raise ConfigError("sigmas must be a nonempty list of nonnegative numbers")
            object.__setattr__(self, "sigmas", tuple(sorted(set(sig))))
        # the experiment-level alpha is authoritative
        object.__setattr__(self, "scd", replace(self.scd, alpha=self.alpha))


def _check_keys(section: dict, allowed, where: str):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(extra)}")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """
    Build a config from parsed TOML with sections ``[experiment]``,
    ``[dataset]`` and ``[scd]``. A relative CSV path is resolved against
    ``base_dir`` (the config file's directory).
    """
    _check_keys(raw, ("experiment", "dataset", "scd"), "top level")
    exp = dict(raw.get("experiment", {}))
    ds = dict(raw.get("dataset", {}))
    sc = dict(raw.get("scd", {}))
    exp_keys = [f.name for f in fields(ExperimentConfig) if f.name not in ("dataset", "scd")]
    _check_keys(exp, exp_keys, "experiment")
    _check_keys(ds, [f.name for f in fields(DatasetSpec)], "dataset")
    _check_keys(sc, [f.name for f in fields(ScdConfig) if f.name != "alpha"], "scd")
    if ds.get("path") and base_dir is not None and not Path(ds["path"]).is_absolute():
        ds["path"] = str(base_dir / ds["path"])
    for key in ("sigma_grid", "split_fractions"):
        if key in sc:
            sc[key] = tuple(sc[key])
    for key in ("methods", "sigmas"):
        if key in exp:
            exp[key] = tuple(exp[key])
    try:
        return ExperimentConfig(dataset=DatasetSpec(**ds), scd=ScdConfig(**sc), **exp)
    except ConfigError:
        raise
    except (InvalidInput, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a TOML experiment file; keyword overrides that are not None win."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    config = config_from_dict(raw, path.parent)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        try:
            config = replace(config, **overrides)
        except (InvalidInput, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return config


# ----------------------------------------------------------------------------
# Per-trial work
# ----------------------------------------------------------------------------


def trial_seed(config: ExperimentConfig, trial: int) -> int:
    return config.seed + trial


def _source_data(config: ExperimentConfig) -> Dataset | None:
    spec = config.dataset
    if spec.kind != "csv":
        return None
    return load_csv(spec.path, spec.target, spec.max_rows, seed=config.seed)


def trial_data(config: ExperimentConfig, trial: int, source: Dataset | None = None):
    """(conformal block, test block) for one trial, features standardised jointly."""
    seed = trial_seed(config, trial)
    n = config.n_cp + config.n_test
    kind = config.dataset.kind
    if kind == "simple":
        data = gen_simple(n, seed)
    elif kind == "complex":
        data = gen_complex(n, seed)
    else:
        source = source if source is not None else _source_data(config)
        if source.n < n:
            raise ConfigError(f"{config.dataset.path} has {source.n} usable rows, need n_cp + n_test = {n}")
        idx = np.random.default_rng(seed).permutation(source.n)[:n]
        data = standardize(source.subset(idx))
    return data.subset(np.arange(config.n_cp)), data.subset(np.arange(config.n_cp, n))


@dataclass
class TrialContext:
    """One trial's data split together with its fitted density estimator."""

    config: ExperimentConfig
    seed: int
    train: Dataset
    val: Dataset
    cal: Dataset
    test: Dataset
    cde: object = None
    raw: dict = field(default_factory=dict)

    @property
    def scd_config(self) -> ScdConfig:
        return replace(self.config.scd, seed=self.seed)

    def ensure_cde(self):
        if self.cde is None:
            sc = self.scd_config
            grid = make_grid(self.train.y, sc.n_grid, sc.margin_sds)
            self.cde = fit_cde(self.train.X, self.train.y, min(sc.k_neighbors, self.train.n), grid,
                               sc.cde_seed, sc.bandwidth)
            self.raw = {
                "train": eval_density_batch(self.cde, self.cde.x_train),
                "val": eval_density_batch(self.cde, self.val.X),
                "cal": eval_density_batch(self.cde, self.cal.X),
                "test": eval_density_batch(self.cde, self.test.X),
            }
        return self.cde

    def fit_scd(self, **overrides):
        cde = self.ensure_cde()
        config = replace(self.scd_config, **overrides)
        return fit_scd_split(self.train, self.val, self.cal, config, cde=cde, raw=self.raw)


def make_context(config: ExperimentConfig, trial: int, source: Dataset | None = None) -> TrialContext:
    seed = trial_seed(config, trial)
    cp, test = trial_data(config, trial, source)
    train, val, cal = three_way_split(cp, config.scd.split_fractions, seed)
    return TrialContext(config, seed, train, val, cal, test)


def predict_method(ctx: TrialContext, method: str):
    """Prediction sets of ``method`` on the trial's test block."""
    alpha = ctx.config.alpha
    k = ctx.config.scd.k_neighbors
    if method in ("vanilla_cp", "cqr"):
        reg = cf.fit_knn_regressor(ctx.train.X, ctx.train.y, min(k, ctx.train.n))
        calibrate = cf.calibrate_vanilla_cp if method == "vanilla_cp" else cf.calibrate_cqr
        return calibrate(reg, ctx.cal, alpha).predict_many(ctx.test.X)
    cde = ctx.ensure_cde()
    raw = ctx.raw
    if method == "dist_split":
        return cf.calibrate_dist_split(cde, ctx.cal, alpha, raw["cal"]).predict_many(raw=raw["test"])
    if method == "hpd_split":
        model = cf.calibrate_hpd_split(cde, ctx.cal, alpha, raw["cal"], seed=ctx.seed)
        return model.predict_many(raw=raw["test"])
    if method == "cd_split":
        sc = ctx.scd_config
        model = fit_cd_split(cde, ctx.cal, alpha, sc.n_clusters, sc.seed, raw["train"], raw["cal"], config=sc)
        return model.predict_many(raw=raw["test"])
    if method == "scd_split":
        return ctx.fit_scd().predict_many(raw=raw["test"])
    raise InvalidInput(f"unknown method {method!r}; valid names are {', '.join(METHODS)}")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    metrics: dict  # method -> TrialMetrics
    points: tuple = ()  # per-point dump rows when requested
    extra: dict = field(default_factory=dict)


def _dump_rows(trial, label, sets, y):
    covered = covered_mask(sets, y)
    for i, (s, yi, c) in enumerate(zip(sets, y, covered)):
        ivs = ";".join(f"{lo:.6g}:{hi:.6g}" for lo, hi in s)
        yield (trial, label, i, f"{yi:.6g}", int(c), s.count, f"{s.total_length:.6g}", ivs)


def run_trial(config: ExperimentConfig, trial: int, source: Dataset | None = None) -> TrialResult:
    ctx = make_context(config, trial, source)
    metrics, points, extra = {}, [], {}
    for method in config.methods:
        if method == "scd_split":
            model = ctx.fit_scd()
            sets = model.predict_many(raw=ctx.raw["test"])
            extra["sigma_hat"] = model.sigma_hat
        else:
            sets = predict_method(ctx, method)
        metrics[method] = evaluate_sets(sets, ctx.test.y)
        if config.dump_points:
            points.extend(_dump_rows(trial, method, sets, ctx.test.y))
    return TrialResult(trial, metrics, tuple(points), extra)


def _ablate_sigma_trial(config: ExperimentConfig, trial: int, source=None) -> TrialResult:
    ctx = make_context(config, trial, source)
    metrics = {}
    for sigma in config.sigmas:
        model = ctx.fit_scd(sigma_grid=(sigma,))
        metrics[sigma] = evaluate_sets(model.predict_many(raw=ctx.raw["test"]), ctx.test.y)
    return TrialResult(trial, metrics)


def _ablate_loss_trial(config: ExperimentConfig, trial: int, source=None) -> TrialResult:
    ctx = make_context(config, trial, source)
    grid = config.sigmas or config.scd.sigma_grid
    model = ctx.fit_scd(sigma_grid=grid) if grid else ctx.fit_scd()
    reports = {r.sigma: {"count": r.mean_count, **r.losses} for r in model.sigma_reports}
    selected = {}
    for kind in LossKind:
        # first minimiser in ascending sigma order, as in the fit itself
        best = min(model.sigma_reports, key=lambda r: r.losses[kind.value])
        selected[kind.value] = best.sigma
    return TrialResult(trial, reports, extra={"selected": selected})


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


def _run_trials(fn, config: ExperimentConfig) -> list[TrialResult]:
    """Run ``fn`` for every trial; results come back sorted by trial index."""
    source = _source_data(config)
    trials = range(config.trials)
    workers = min(_worker_count(), config.trials)
    if workers == 1:
        results = [fn(config, t, source) for t in trials]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, [config] * config.trials, trials, [source] * config.trials))
    return sorted(results, key=lambda r: r.trial)


# ----------------------------------------------------------------------------
# Tables
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    key: str
    header: str
    text_scale: float = 1.0
    digits: int = 2


METRIC_COLUMNS = (
    Column("coverage", "Cov. (%)", 100.0),
    Column("length", "Len."),
    Column("count", "Num."),
)


@dataclass(frozen=True)
class ResultRow:
    label: str
    values: dict  # column key -> per-trial values

    def mean(self, key) -> float:
        return float(np.mean(self.values[key]))

    def sd(self, key) -> float:
        v = np.asarray(self.values[key], dtype=float)
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


@dataclass(frozen=True)
class ResultTable:
    """Mean and sample sd (denominator trials - 1) of each column per row."""

    title: str
    row_header: str
    columns: tuple
    rows: tuple
    n_trials: int
    notes: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def single_trial(self) -> bool:
        return self.n_trials == 1

    def row(self, label) -> ResultRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [self.row_header, "n_trials"]
        for c in self.columns:
            header += [f"{c.key}_mean", f"{c.key}_sd"]
        w.writerow(header + ["sd_note"])
        note = "single trial: sd set to 0" if self.single_trial else ""
        for r in self.rows:
            cells = [r.label, self.n_trials]
            for c in self.columns:
                cells += [f"{r.mean(c.key):.6f}", f"{r.sd(c.key):.6f}"]
            w.writerow(cells + [note])
        return buf.getvalue()

    def to_text(self) -> str:
        headers = [self.row_header] + [c.header for c in self.columns]
        body = []
        for r in self.rows:
            cells = [r.label]
            for c in self.columns:
                m, s = r.mean(c.key) * c.text_scale, r.sd(c.key) * c.text_scale
                cells.append(f"{m:.{c.digits}f} ± {s:.{c.digits}f}")
            body.append(cells)
        widths = [max(len(row[i]) for row in [headers] + body) for i in range(len(headers))]
        fmt = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        lines = [self.title, fmt(headers), "  ".join("-" * w for w in widths)]
        lines += [fmt(row) for row in body]
        if self.single_trial:
            lines.append("(single trial: sd set to 0)")
        lines += list(self.notes)
        return "\n".join(lines) + "\n"


def _collect(results, keys, columns):
    return {k: {c.key: [r.metrics[k].as_dict()[c.key] if isinstance(r.metrics[k], TrialMetrics)
                        else r.metrics[k][c.key] for r in results]
                for c in columns}
            for k in keys}


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Every configured method on every trial; one row per method."""
    results = _run_trials(run_trial, config)
    data = _collect(results, config.methods, METRIC_COLUMNS)
    rows = tuple(ResultRow(METHOD_LABELS[m], data[m]) for m in config.methods)
    notes = ()
    meta = {"results": results}
    if "scd_split" in config.methods:
        sig = [r.extra["sigma_hat"] for r in results]
        notes = ("SCD-split selected sigma per trial: " + " ".join(f"{s:.4g}" for s in sig),)
        meta["sigma_hat"] = sig
    return ResultTable(f"{config.name} (alpha={config.alpha:g}, {config.trials} trials)", "method",
                       METRIC_COLUMNS, rows, config.trials, notes, meta)


def sigma_label(sigma: float) -> str:
    return "CD-split (sigma=0)" if sigma == 0 else f"sigma={sigma:g}"


def ablate_sigma(config: ExperimentConfig, sigmas=None) -> ResultTable:
    """SCD-split with each width fixed in advance (no validation step)."""
    if sigmas is not None:
        config = replace(config, sigmas=tuple(sigmas))
    if not config.sigmas:
        raise ConfigError("ablate-sigma needs a nonempty sigma list")
    results = _run_trials(_ablate_sigma_trial, config)
    data = _collect(results, config.sigmas, METRIC_COLUMNS)
    rows = tuple(ResultRow(sigma_label(s), data[s]) for s in config.sigmas)
    return ResultTable(f"{config.name}: fixed-sigma ablation (alpha={config.alpha:g}, {config.trials} trials)",
                       "sigma", METRIC_COLUMNS, rows, config.trials, meta={"sigmas": config.sigmas})


LOSS_COLUMNS = (Column("count", "Num."),) + tuple(Column(k.value, k.value, digits=3) for k in LossKind)


def ablate_loss(config: ExperimentConfig, sigmas=None) -> ResultTable:
    """Validation count and all four losses for every candidate width."""
    if sigmas is not None:
        config = replace(config, sigmas=tuple(sigmas))
    results = _run_trials(_ablate_loss_trial, config)
    keys = sorted(results[0].metrics)
    data = _collect(results, keys, LOSS_COLUMNS)
    rows = tuple(ResultRow(sigma_label(s), data[s]) for s in keys)
    selected = {k.value: [r.extra["selected"][k.value] for r in results] for k in LossKind}
    notes = tuple(f"{k} selected sigma per trial: " + " ".join(f"{s:.4g}" for s in v)
                  for k, v in selected.items())
    return ResultTable(f"{config.name}: validation losses (K_target={config.scd.k_target:g}, "
                       f"{config.trials} trials)", "sigma", LOSS_COLUMNS, rows, config.trials, notes,
                       meta={"selected": selected, "sigmas": keys})


def write_outputs(table: ResultTable, out, points=None) -> list[Path]:
    """Write ``<out>`` (CSV), the aligned table as ``<out stem>.txt`` and optionally ``<out stem>_points.csv``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_csv(), encoding="utf-8")
    txt = out.with_suffix(".txt") if out.suffix != ".txt" else out.with_name(out.stem + "_table.txt")
    txt.write_text(table.to_text(), encoding="utf-8")
    written = [out, txt]
    if points:
        pts = out.with_name(out.stem + "_points.csv")
        with pts.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "method", "index", "y", "covered", "count", "length", "intervals"])
            w.writerows(points)
        written.append(pts)
    return written


def all_points(table: ResultTable):
    return [row for r in table.meta.get("results", ()) for row in r.points]
