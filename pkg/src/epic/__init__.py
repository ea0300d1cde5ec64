"""Federated lineage classification with monthly, per-country collaboration rounds."""

from .encoding import (
    Alphabet,
    EncodedDataset,
    EncodingContext,
    OneHotSequenceEncoder,
    SequenceRecord,
    encode_dataset,
    encode_label,
    encode_sequence,
)
from .federated import FedConfig, WeightedContribution, aggregate, merge_local_global
from .metrics import MetricsReport, compute
from .nn import FeedForwardClassifier, ModelSpec, TrainConfig, WeightSet, init_model, predict, train
from .orchestrator import ExperimentReport, evaluate, run_centralized, run_epic
from .partition import PartitionPlan, SplitConfig, build_plan

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "EncodedDataset",
    "EncodingContext",
    "ExperimentReport",
    "FedConfig",
    "FeedForwardClassifier",
    "MetricsReport",
    "ModelSpec",
    "OneHotSequenceEncoder",
    "PartitionPlan",
    "SequenceRecord",
    "SplitConfig",
    "TrainConfig",
    "WeightSet",
    "WeightedContribution",
    "aggregate",
    "build_plan",
    "compute",
    "encode_dataset",
    "encode_label",
    "encode_sequence",
    "evaluate",
    "init_model",
    "merge_local_global",
    "predict",
    "run_centralized",
    "run_epic",
    "train",
]
