"""Metrics, experiment runner, theorem checks and the command-line interface."""
from .experiment import ExperimentConfig, ResultTable, ablate_loss, ablate_sigma, load_config, run_experiment
from .metrics import TrialMetrics, evaluate, evaluate_sets
from .theorems import CheckResult, theorem_checks

__all__ = [
    "ablate_loss",
    "ablate_sigma",
    "CheckResult",
    "evaluate",
    "evaluate_sets",
    "ExperimentConfig",
    "load_config",
    "ResultTable",
    "run_experiment",
    "theorem_checks",
    "TrialMetrics",
]
