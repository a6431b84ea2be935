"""Experiment harness: configs, seeded trials, CSV output and plots."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import TrialRecord, run_experiment, summarize
from .plots import emit_plots, plot_convergence

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "TrialRecord",
    "emit_plots",
    "load_config",
    "parse_config",
    "plot_convergence",
    "run_experiment",
    "summarize",
]
