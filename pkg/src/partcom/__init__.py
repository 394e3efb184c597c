"""Open-set recognition for point clouds with class-specific part prototypes."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import Checkpoint, evaluate, run_ablation_suite, train

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "Checkpoint", "evaluate",
           "run_ablation_suite", "train"]
__version__ = "0.1.0"
