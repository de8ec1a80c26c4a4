from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text
from .experiment import RunResult, build_scenario, run_cluster_only, run_experiment
from .gradcheck import gradcheck_suite

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "build_scenario",
    "gradcheck_suite",
    "parse_config",
    "parse_config_text",
    "run_cluster_only",
    "run_experiment",
]
