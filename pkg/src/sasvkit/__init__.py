"""Spoofing-aware speaker verification scoring, fusion and evaluation."""

from sasvkit.protocol import Metric, Protocol, Trial, TrialClass, parse_protocol, subset
from sasvkit.embedding import EmbeddingStore, cosine, enroll, load_store, save_store
from sasvkit.fusion import (
    MlpFusionModel,
    TrainConfig,
    mlp_forward,
    mlp_train,
    score_b1,
    score_b1v2,
    softmax_bonafide,
)
from sasvkit.metrics import ScoredTrial, all_eers, eer, sweep

__version__ = "0.1.0"

__all__ = [
    "EmbeddingStore",
    "Metric",
    "MlpFusionModel",
    "Protocol",
    "ScoredTrial",
    "TrainConfig",
    "Trial",
    "TrialClass",
    "all_eers",
    "cosine",
    "eer",
    "enroll",
    "load_store",
    "mlp_forward",
    "mlp_train",
    "parse_protocol",
    "save_store",
    "score_b1",
    "score_b1v2",
    "softmax_bonafide",
    "subset",
    "sweep",
]
