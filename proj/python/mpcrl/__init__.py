"""MPC-based value estimation experiments."""

from ._mpcrl import (
    ConfigError,
    Environment,
    NumericalError,
    ShapeError,
    aggregate_trials,
    cliff_step,
    evaluate_checkpoint,
    improvement_bound,
    optimal_horizon,
    preset,
    preset_names,
    resolve_config,
    train,
    trial_seeds,
)

__all__ = [
    "ConfigError",
    "Environment",
    "NumericalError",
    "ShapeError",
    "aggregate_trials",
    "cliff_step",
    "evaluate_checkpoint",
    "improvement_bound",
    "optimal_horizon",
    "preset",
    "preset_names",
    "resolve_config",
    "train",
    "trial_seeds",
]
