"""Experiment harness: Monte Carlo and exact cost estimators, sweeps and the artifact runner."""
from .config import ExperimentConfig, load_config, parse_config
from .exact import ExactCost, exact_cost_dp
from .runner import run_experiment
from .simulate import CostEstimate, HittingEstimate, mc_estimate_cost, mde_hitting_estimator
from .sweep import SweepReport, sweep_threshold

__all__ = [
    "CostEstimate",
    "ExactCost",
    "ExperimentConfig",
    "HittingEstimate",
    "SweepReport",
    "exact_cost_dp",
    "load_config",
    "mc_estimate_cost",
    "mde_hitting_estimator",
    "parse_config",
    "run_experiment",
    "sweep_threshold",
]
