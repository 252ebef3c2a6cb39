"""CLI orchestration, configuration, synthetic data, persistence, rendering."""

from .config import (
    ConfigError,
    PipelineConfig,
    config_hash,
    default_config,
    derive_seed,
    load_config,
)
from .dataset import SyntheticDataset, gen_synthetic_dataset, load_dataset
from .pipeline import Paths, StageFailure, run_pipeline
from .visualize import render_score_map

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "config_hash",
    "default_config",
    "derive_seed",
    "load_config",
    "SyntheticDataset",
    "gen_synthetic_dataset",
    "load_dataset",
    "Paths",
    "StageFailure",
    "run_pipeline",
    "render_score_map",
]
