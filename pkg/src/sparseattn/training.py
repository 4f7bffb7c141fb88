"""Deterministic training loop emitting per-interval evaluation records."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PAD_ID, Corpus, Example
from .errors import ConfigError, DataError, TrainingError
from .metrics import AttentionStats, StatsAccumulator
from .model import ModelConfig, cross_entropy_loss, init_params, model_backward, model_forward
from .optim import AdamW
from .schedule import SparsityConfig, build_schedule, threshold_pools

EVAL_EVERY_DEFAULT = 50


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    Desk-scale defaults suit from-scratch training of the small encoder; the
    fine-tuning style preset (lr 2e-5, batch 16, accumulation 4) is available
    through the CLI.
    """

    epochs: int = 3
    batch_size: int = 32
    lr: float = 3e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    accum_steps: int = 1
    eval_every: int = EVAL_EVERY_DEFAULT
    seed: int = 7

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigError(f"invalid training config: {self}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass(frozen=True)
class TrainRecord:
    """One evaluation snapshot during training."""

    step: int
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    layer_sparsity: tuple[float, ...]
    mean_sparsity: float
    mean_entropy: float


@dataclass
class TrainResult:
    records: list[TrainRecord]
    params: dict[str, np.ndarray]
    final_stats: AttentionStats
    schedule: tuple[float, ...] = field(default_factory=tuple)

    @property
    def final_record(self) -> TrainRecord:
        return self.records[-1]


def _require_encoded(examples: list[Example], split: str) -> None:
    if not examples:
        raise DataError(f"{split} split is empty")
    for example in examples:
        if example.token_ids is None:
            raise DataError("corpus must be encoded before training (see encode_corpus)")
        if not example.token_ids:
            raise DataError("encoded example has no tokens")


def make_batch(examples: list[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of encoded examples to the batch's longest sequence."""
    width = max(len(e.token_ids) for e in examples)
    ids = np.full((len(examples), width), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(examples), width), dtype=bool)
    labels = np.empty(len(examples), dtype=np.int64)
    for row, example in enumerate(examples):
        length = len(example.token_ids)
        ids[row, :length] = example.token_ids
        valid[row, :length] = True
        labels[row] = example.label
    return ids, valid, labels


def _batches(examples: list[Example], order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[start : start + batch_size]]
        yield make_batch(chunk)


def _evaluate(params, model_config, examples, schedule, pools, batch_size):
    """Loss, accuracy and attention statistics over a fixed example list."""
    stats = StatsAccumulator(model_config.layers, model_config.heads)
    total_loss = 0.0
    correct = 0
    order = np.arange(len(examples))
    for ids, valid, labels in _batches(examples, order, batch_size):
        logits, attns, _ = model_forward(params, model_config, ids, valid, schedule, pools)
        loss, _ = cross_entropy_loss(logits, labels)
        total_loss += loss * len(labels)
        correct += int((logits.argmax(axis=1) == labels).sum())
        stats.add_batch(attns, valid)
    n = len(examples)
    return total_loss / n, correct / n, stats.finalize()


def train(
    model_config: ModelConfig,
    sparsity_config: SparsityConfig,
    corpus: Corpus,
    train_config: TrainConfig,
) -> TrainResult:
    """Train the encoder classifier and record evaluation snapshots.

    Fully deterministic given the configs and corpus: parameter init and
    shuffling use dedicated seeded streams. Snapshots are taken before
    training, every `eval_every` optimizer steps, and at each epoch end.
    """
    if sparsity_config.layers != model_config.layers:
        raise ConfigError(
            f"sparsity schedule covers {sparsity_config.layers} layers but the "
            f"model has {model_config.layers}"
        )
    _require_encoded(corpus.train, "train")
    _require_encoded(corpus.validation, "validation")

    schedule = build_schedule(sparsity_config)
    pools = threshold_pools(sparsity_config)
    params = init_params(model_config, seed=train_config.seed)
    optimizer = AdamW(
        params,
        lr=train_config.lr,
        betas=train_config.betas,
        eps=train_config.eps,
        weight_decay=train_config.weight_decay,
    )
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([train_config.seed, 1])
    )

    records: list[TrainRecord] = []
    stats_by_step: dict[int, AttentionStats] = {}
    interval_losses: list[float] = []

    def snapshot(step: int, epoch: int, train_loss: float | None) -> None:
        if records and records[-1].step == step:
            return
        val_loss, val_acc, stats = _evaluate(
            params, model_config, corpus.validation, schedule, pools,
            train_config.batch_size,
        )
        if train_loss is None:
            train_loss = _evaluate(
                params, model_config, corpus.train, schedule, pools,
                train_config.batch_size,
            )[0]
        records.append(
            TrainRecord(
                step=step,
                epoch=epoch,
                train_loss=float(train_loss),
                val_loss=float(val_loss),
                val_accuracy=float(val_acc),
                layer_sparsity=stats.layer_sparsity,
                mean_sparsity=stats.overall_sparsity,
                mean_entropy=stats.mean_entropy,
            )
        )
        stats_by_step[step] = stats

    # Initial snapshot (also the final one for 0-epoch runs).
    initial_train_loss, _, _ = _evaluate(
        params, model_config, corpus.train, schedule, pools, train_config.batch_size
    )
    snapshot(0, 0, initial_train_loss)

    step = 0
    grad_accum: dict[str, np.ndarray] | None = None
    micro_count = 0

    def flush_accum() -> None:
        nonlocal grad_accum, micro_count, step
        if micro_count == 0:
            return
        averaged = {k: v / micro_count for k, v in grad_accum.items()}
        optimizer.step(params, averaged)
        grad_accum = None
        micro_count = 0
        step += 1

    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(corpus.train))
        for ids, valid, labels in _batches(corpus.train, order, train_config.batch_size):
            logits, _, cache = model_forward(
                params, model_config, ids, valid, schedule, pools
            )
            loss, grad_logits = cross_entropy_loss(logits, labels)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at optimizer step {step}")
            interval_losses.append(loss)
            grads = model_backward(grad_logits, params, model_config, cache)
            if grad_accum is None:
                grad_accum = grads
            else:
                for name in grad_accum:
                    grad_accum[name] += grads[name]
            micro_count += 1
            if micro_count == train_config.accum_steps:
                flush_accum()
                if step % train_config.eval_every == 0:
                    snapshot(step, epoch, float(np.mean(interval_losses)))
                    interval_losses.clear()
        flush_accum()  # leftover micro-batches at epoch end
        snapshot(step, epoch, float(np.mean(interval_losses)) if interval_losses else None)
        interval_losses.clear()

    final_stats = stats_by_step[records[-1].step]
    return TrainResult(
        records=records,
        params=params,
        final_stats=final_stats,
        schedule=schedule.per_layer,
    )
