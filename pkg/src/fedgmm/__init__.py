"""Personalised mean estimation for Gaussian-mixture clients under Byzantine corruption."""
from .bounds import BoundContext, asymptotic_upper_bound, critical_eps, minimax_lower_bound
from .client import combine_estimates
from .gauss import WindowShape
from .harness import ExperimentConfig, run_experiment, run_trial
from .population import build_mixture, sample_population
from .server import ServerParams, robust_clustering

__all__ = [
    "BoundContext",
    "ExperimentConfig",
    "ServerParams",
    "WindowShape",
    "asymptotic_upper_bound",
    "build_mixture",
    "combine_estimates",
    "critical_eps",
    "minimax_lower_bound",
    "robust_clustering",
    "run_experiment",
    "run_trial",
    "sample_population",
]
