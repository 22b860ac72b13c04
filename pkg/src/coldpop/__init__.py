"""Diagnosing and mitigating inherited popularity bias in cold-start item recommendation."""

from .errors import ColdPopError, ConfigError, DataError, NumericalError, StageError
from .mitigate import scale_embeddings, scaling_factor, warm_mean_magnitude
from .pipeline import ExperimentConfig, compare_runs, run_pipeline, select_alpha

__version__ = "0.1.0"

__all__ = ["ColdPopError", "ConfigError", "DataError", "NumericalError", "StageError", "ExperimentConfig",
           "compare_runs", "run_pipeline", "select_alpha", "scale_embeddings", "scaling_factor",
           "warm_mean_magnitude", "__version__"]
