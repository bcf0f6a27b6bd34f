from .config import ExperimentSpec, parse_config, parse_config_text, serialize_config
from .runner import (RunManifest, diagnose_directory, run_ablation, run_comparison,
                     run_experiment, tune_baseline)

__all__ = [
    "ExperimentSpec",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "RunManifest",
    "run_experiment",
    "run_ablation",
    "run_comparison",
    "tune_baseline",
    "diagnose_directory",
]
