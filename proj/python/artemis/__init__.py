"""Autoregressive mixture-of-experts trajectory planner (desk-scale)."""

from ._core import (
    HORIZON,
    ConfigError,
    Dataset,
    DivergenceError,
    FormatError,
    GeneratorConfig,
    IoError,
    Planner,
    Scene,
    __version__,
    bench_dispatch,
    config_hash,
    constant_velocity_baseline,
    evaluate_baseline,
    generate_dataset,
    load_dataset,
    parse_config,
    project_points,
    score_trajectory,
)

__all__ = [
    "HORIZON",
    "ConfigError",
    "Dataset",
    "DivergenceError",
    "FormatError",
    "GeneratorConfig",
    "IoError",
    "Planner",
    "Scene",
    "__version__",
    "bench_dispatch",
    "config_hash",
    "constant_velocity_baseline",
    "evaluate_baseline",
    "generate_dataset",
    "load_dataset",
    "parse_config",
    "project_points",
    "score_trajectory",
]
