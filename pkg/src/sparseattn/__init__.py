"""Desk-scale transformer encoder lab for structured attention sparsification."""

__version__ = "0.1.0"

from .attention import (
    PER_HEAD,
    PER_LAYER_BATCH,
    AttentionOutput,
    HeadDims,
    SparseMaskSpec,
    apply_sparsity_mask,
    raw_scores,
    select_threshold,
    sparse_attention_backward,
    sparse_attention_forward,
    sparse_softmax,
)
from .data import Corpus, Example, Vocab, build_vocab, encode_corpus, gen_synthetic, load_tsv, tokenize
from .metrics import (
    AttentionStats,
    CorrelationResult,
    FlopsReport,
    attention_entropy,
    flops_report,
    pearson,
    sparsity_from_mask,
    sparsity_from_weights,
)
from .model import ModelConfig, cross_entropy_loss, init_params, model_backward, model_forward
from .optim import AdamW
from .schedule import LayerSchedule, SparsityConfig, build_schedule, preset_configs, threshold_pools
from .training import TrainConfig, TrainRecord, TrainResult, train

__all__ = [
    "__version__",
    "PER_HEAD",
    "PER_LAYER_BATCH",
    "AttentionOutput",
    "HeadDims",
    "SparseMaskSpec",
    "apply_sparsity_mask",
    "raw_scores",
    "select_threshold",
    "sparse_attention_backward",
    "sparse_attention_forward",
    "sparse_softmax",
    "Corpus",
    "Example",
    "Vocab",
    "build_vocab",
    "encode_corpus",
    "gen_synthetic",
    "load_tsv",
    "tokenize",
    "AttentionStats",
    "CorrelationResult",
    "FlopsReport",
    "attention_entropy",
    "flops_report",
    "pearson",
    "sparsity_from_mask",
    "sparsity_from_weights",
    "ModelConfig",
    "cross_entropy_loss",
    "init_params",
    "model_backward",
    "model_forward",
    "AdamW",
    "LayerSchedule",
    "SparsityConfig",
    "build_schedule",
    "preset_configs",
    "threshold_pools",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "train",
]
