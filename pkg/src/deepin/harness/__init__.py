"""Metrics, persistence, experiment orchestration and the command line."""

from deepin.harness.metrics import (
    auc,
    prediction_metrics,
    selection_metrics,
    structure_metrics,
    summarize,
)
from deepin.harness.io import (
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)
from deepin.harness.config import ExperimentConfig, load_config
from deepin.harness.experiments import (
    covariate_study,
    make_model,
    representation_study,
    run_benchmark,
)

__all__ = [
    "auc",
    "prediction_metrics",
    "selection_metrics",
    "structure_metrics",
    "summarize",
    "load_model",
    "read_dataset",
    "save_model",
    "write_dataset",
    "ExperimentConfig",
    "load_config",
    "covariate_study",
    "make_model",
    "representation_study",
    "run_benchmark",
]
