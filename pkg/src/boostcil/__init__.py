"""Class-incremental learning with feature boosting and compression.

Each incremental session freezes the current model, trains a second branch
to fit what the frozen model gets wrong, then distills the two-branch model
back into a single backbone with class-balanced distillation.
"""

__version__ = "0.1.0"

from .baselines import BaselineConfig, plain_kd_compress, train_finetune, train_plain, train_replay, weight_align
from .boosting import BoostingConfig, GammaPair, effective_number, gamma_factors, train_boosting
from .compression import CompressionConfig, MixupConfig, bkd_weights, train_compression
from .config import ExperimentConfig, ProtocolConfig, desk_preset, load_config
from .datasets import ArrayDataset, get_dataset
from .evaluation import RunReport, SessionReport, average_incremental_accuracy, evaluate_session
from .exceptions import (
    DegenerateCountsError,
    ExperimentError,
    InvalidProtocolError,
    MissingDataError,
)
from .models import CompositeModel, SingleHeadModel, expand, freeze, parameter_count
from .runner import build_suite, run_ablation_suite, run_experiment
from .stream import ClassOrder, ExemplarMemory, Protocol, TaskStream, build_class_order, build_stream, herding_select

__all__ = [
    "ArrayDataset",
    "BaselineConfig",
    "BoostingConfig",
    "ClassOrder",
    "CompositeModel",
    "CompressionConfig",
    "DegenerateCountsError",
    "ExemplarMemory",
    "ExperimentConfig",
    "ExperimentError",
    "GammaPair",
    "InvalidProtocolError",
    "MissingDataError",
    "MixupConfig",
    "Protocol",
    "ProtocolConfig",
    "RunReport",
    "SessionReport",
    "SingleHeadModel",
    "TaskStream",
    "average_incremental_accuracy",
    "bkd_weights",
    "build_class_order",
    "build_stream",
    "build_suite",
    "desk_preset",
    "effective_number",
    "evaluate_session",
    "expand",
    "freeze",
    "gamma_factors",
    "get_dataset",
    "herding_select",
    "load_config",
    "parameter_count",
    "plain_kd_compress",
    "run_ablation_suite",
    "run_experiment",
    "train_boosting",
    "train_compression",
    "train_finetune",
    "train_plain",
    "train_replay",
    "weight_align",
    "__version__",
]
