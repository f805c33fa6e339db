"""Config-driven experiment runner, plotting and command line interface."""

from .config import ConfigError, ExperimentConfig, SweepPoint, load_config, parse_config
from .experiment import TrialResult, run_experiment, seed_fanout, summarize
from .plotting import FormatError, emit_plot

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "FormatError",
    "SweepPoint",
    "TrialResult",
    "emit_plot",
    "load_config",
    "parse_config",
    "run_experiment",
    "seed_fanout",
    "summarize",
]
