"""Config-driven experiment runners and the command-line interface."""

from .config import ConfigError, ExperimentConfig, config_hash, load_config, make_config
from .records import ConfigMismatchError, RunRecord
from .runners import run_density2d, run_gaussian1d, run_landscape, run_variance

__all__ = [
    "ConfigError",
    "ConfigMismatchError",
    "ExperimentConfig",
    "RunRecord",
    "config_hash",
    "load_config",
    "make_config",
    "run_density2d",
    "run_gaussian1d",
    "run_landscape",
    "run_variance",
]
