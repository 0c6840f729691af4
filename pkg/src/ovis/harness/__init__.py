from .cli import cli_main, main
from .config import (
    AlphaSchedule,
    ExperimentConfig,
    parse_config_text,
    parse_estimator_token,
    read_config_file,
)
from .experiments import (
    RunRecord,
    anneal_alpha,
    run_asymptotic,
    run_fit_gaussian,
    run_gmm_train,
)

__all__ = [
    "AlphaSchedule",
    "ExperimentConfig",
    "RunRecord",
    "anneal_alpha",
    "cli_main",
    "main",
    "parse_config_text",
    "parse_estimator_token",
    "read_config_file",
    "run_asymptotic",
    "run_fit_gaussian",
    "run_gmm_train",
]
