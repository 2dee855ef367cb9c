"""Progressive MLP learning with per-step subset sampling and online
hyperparameter selection."""

from .dataset import (
    DataError,
    Dataset,
    DataSplit,
    Standardizer,
    load_binary,
    load_csv,
    save_binary,
    split,
    standardize_fit_apply,
)
from .hyperopt import (
    CandidateResult,
    HyperGrid,
    HyperParams,
    enumerate_grid,
    run_candidates,
    select_best,
)
from .network import Topology, forward, load_model, predict, save_model
from .numerics import AdamState, RngState, adam_init, adam_step, matmul, softmax_cross_entropy
from .progression import ProgressionConfig, RunReport, StepRecord, layer_saturated, run
from .sampling import (
    SelectionContext,
    Subset,
    UniqueTracker,
    compute_context,
    kmeans,
    select_cluster_top_loss,
    select_random,
    select_top_loss,
)
from .trainer import SplitArrays, TrainingError, TrainStats, evaluate, fine_tune, optimize_block

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CandidateResult",
    "DataError",
    "DataSplit",
    "Dataset",
    "HyperGrid",
    "HyperParams",
    "ProgressionConfig",
    "RngState",
    "RunReport",
    "SelectionContext",
    "SplitArrays",
    "Standardizer",
    "StepRecord",
    "Subset",
    "Topology",
    "TrainStats",
    "TrainingError",
    "UniqueTracker",
    "adam_init",
    "adam_step",
    "compute_context",
    "enumerate_grid",
    "evaluate",
    "fine_tune",
    "forward",
    "kmeans",
    "layer_saturated",
    "load_binary",
    "load_csv",
    "load_model",
    "matmul",
    "optimize_block",
    "predict",
    "run",
    "run_candidates",
    "save_binary",
    "save_model",
    "select_best",
    "select_cluster_top_loss",
    "select_random",
    "select_top_loss",
    "softmax_cross_entropy",
    "split",
    "standardize_fit_apply",
]
