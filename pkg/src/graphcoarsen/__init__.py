"""Graph coarsening with spectrum-preserving edge reweighting."""

from .coarsening import CoarseningConfig, CoarseningError, coarsen
from .datagen import experiment_split, generate
from .goren import GinModel, MlpModel, TrainConfig, apply, load_model, train
from .graph import CoarseningResult, GraphError, Partition, WeightedGraph
from .losses import LossSpec, evaluate_loss, improvement_pct
from .operators import OperatorKind, laplacian, projection_lift
from .spectral import eigen_smallest_k, eigenerror
from .weight_opt import mm_optimize

__version__ = "0.1.0"

__all__ = [
    "CoarseningConfig", "CoarseningError", "CoarseningResult", "GinModel",
    "GraphError", "LossSpec", "MlpModel", "OperatorKind", "Partition",
    "TrainConfig", "WeightedGraph", "apply", "coarsen", "eigen_smallest_k",
    "eigenerror", "evaluate_loss", "experiment_split", "generate",
    "improvement_pct", "laplacian", "load_model", "mm_optimize",
    "projection_lift", "train",
]
