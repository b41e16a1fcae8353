"""
Smoothed conditional-density split conformal prediction.

Prediction sets are superlevel sets of a Gaussian-smoothed conditional
density estimate, calibrated per cell of a profile-distance partition. The
smoothing width is chosen on a validation split so that the average number
of disjoint intervals approaches a target.
"""
from .conformal import (
    IntervalSet,
    ScoreKind,
    ScoreSample,
    calibrate_cqr,
    calibrate_dist_split,
    calibrate_hpd_split,
    calibrate_vanilla_cp,
    cqr_predict,
    dist_split_predict,
    fit_knn_regressor,
    hpd_split_predict,
    jitter_ties,
    lower_quantile,
    superlevel_intervals,
    upper_quantile_conformal,
    vanilla_cp_predict,
)
from .datagen import Dataset, gen_complex, gen_simple, load_csv, standardize, three_way_split
from .errors import InvalidInput, InvalidState, ScdError
from .grid_density import CdeModel, GridDensity, YGrid, density_cdf, eval_density, fit_cde, hpd_mass, make_grid
from .partition import Partition, Profile, assign_cell, compute_profile, kmeanspp_fit, profile_distance
from .scd import LossKind, ScdConfig, ScdModel, cd_split_predict, fit_cd_split, fit_scd, fit_scd_split, predict_set, validation_loss
from .smoothing import SmoothParams, SmoothPath, fourier_smooth, gaussian_convolve, randomized_smooth, sign_variations

__version__ = "0.1.0"

__all__ = [
    "assign_cell",
    "calibrate_cqr",
    "calibrate_dist_split",
    "calibrate_hpd_split",
    "calibrate_vanilla_cp",
    "cd_split_predict",
    "CdeModel",
    "compute_profile",
    "cqr_predict",
    "Dataset",
    "density_cdf",
    "dist_split_predict",
    "eval_density",
    "fit_cd_split",
    "fit_cde",
    "fit_knn_regressor",
    "fit_scd",
    "fit_scd_split",
    "fourier_smooth",
    "gaussian_convolve",
    "gen_complex",
    "gen_simple",
    "GridDensity",
    "hpd_mass",
    "hpd_split_predict",
    "IntervalSet",
    "InvalidInput",
    "InvalidState",
    "jitter_ties",
    "kmeanspp_fit",
    "load_csv",
    "LossKind",
    "lower_quantile",
    "make_grid",
    "Partition",
    "predict_set",
    "Profile",
    "profile_distance",
    "randomized_smooth",
    "ScdConfig",
    "ScdError",
    "ScdModel",
    "ScoreKind",
    "ScoreSample",
    "sign_variations",
    "SmoothParams",
    "SmoothPath",
    "standardize",
    "superlevel_intervals",
    "three_way_split",
    "upper_quantile_conformal",
    "validation_loss",
    "vanilla_cp_predict",
    "YGrid",
]
