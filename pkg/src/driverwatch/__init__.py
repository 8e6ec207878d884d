"""Compact distracted-driving image classifier: engine, evaluation, benchmarks."""

from .data import CLASS_TABLE, AugmentPolicy, DatasetIndex, Sample, SplitSpec, preprocess, scan, split
from .graph import (
    Model,
    ModelConfig,
    build_model,
    build_yolov8_cls,
    count_macs,
    count_params,
    forward,
    random_weight_store,
)
from .metrics import ConfusionMatrix, EvalReport, evaluate, metrics_from_confusion, top_k
from .tensor import BnParams, ConvParams, Tensor
from .trainer import TrainConfig, cross_entropy, grad_head, sgd_step, train_head
from .weights import WeightStore, load_dwt, save_dwt

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "BnParams",
    "CLASS_TABLE",
    "ConfusionMatrix",
    "ConvParams",
    "DatasetIndex",
    "EvalReport",
    "Model",
    "ModelConfig",
    "Sample",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "WeightStore",
    "build_model",
    "build_yolov8_cls",
    "count_macs",
    "count_params",
    "cross_entropy",
    "evaluate",
    "forward",
    "grad_head",
    "load_dwt",
    "metrics_from_confusion",
    "preprocess",
    "random_weight_store",
    "save_dwt",
    "scan",
    "sgd_step",
    "split",
    "top_k",
    "train_head",
]
