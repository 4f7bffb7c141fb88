"""Scaled dot-product attention with structured pre-softmax top-k sparsification.

The sparsifier keeps the highest-scoring fraction (1 - s) of the raw score
entries in a selection pool, replaces everything else with -inf, and lets the
softmax renormalize the survivors. All arrays are float64 and shaped
(batch, head, query, key) unless noted otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    InvariantError,
    StateError,
    ValidityError,
)

PER_HEAD = "per_head"
PER_LAYER_BATCH = "per_layer_batch"
POOLS = (PER_HEAD, PER_LAYER_BATCH)

MASK_SENTINEL = -np.inf

# Every valid query row keeps at least this many entries so softmax stays defined.
MIN_KEEP_PER_ROW = 1


@dataclass(frozen=True)
class HeadDims:
    """Dimensions of one multi-head attention call.

    Attributes:
        n: sequence length in tokens.
        d_k: per-head key/query dimension.
        h: number of heads.
        d: model dimension, must equal h * d_k.
    """

    n: int
    d_k: int
    h: int
    d: int

    def __post_init__(self) -> None:
        if min(self.n, self.d_k, self.h, self.d) < 1:
            raise ConfigError(f"all dimensions must be >= 1, got {self}")
        if self.d != self.h * self.d_k:
            raise ConfigError(
                f"model dim must factor into heads: d={self.d} != h*d_k={self.h * self.d_k}"
            )


@dataclass
class SparseMaskSpec:
    """Keep/drop decision for one score tensor.

    Attributes:
        keep: boolean (batch, head, query, key); True entries survive masking.
        forced: subset of `keep` added by the per-row minimum guarantee.
        threshold_value: realized threshold per (batch, head); the smallest
            score kept by the core top-k selection (before row forcing).
        keep_count: realized kept entries per (batch, head), forcing included.
        selectable_count: valid query x valid key pairs per (batch, head).
        target_sparsity: the requested drop fraction s in [0, 1).
        pool: selection pool the threshold was computed over.
    """

    keep: np.ndarray
    forced: np.ndarray
    threshold_value: np.ndarray
    keep_count: np.ndarray
    selectable_count: np.ndarray
    target_sparsity: float
    pool: str

    @property
    def achieved_sparsity(self) -> float:
        """Overall dropped fraction of selectable entries."""
        total = int(self.selectable_count.sum())
        if total == 0:
            raise ValidityError("no selectable entries")
        return 1.0 - int(self.keep_count.sum()) / total

    @property
    def per_slice_sparsity(self) -> np.ndarray:
        """Dropped fraction per (batch, head) slice."""
        return 1.0 - self.keep_count / self.selectable_count


@dataclass
class AttentionOutput:
    """Result of one sparse attention forward pass.

    `weights` holds post-softmax probabilities with exact zeros at dropped and
    padded entries; `context` is weights @ V.
    """

    context: np.ndarray
    weights: np.ndarray
    mask_spec: SparseMaskSpec


def _as_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 4 or scores.shape[-1] != scores.shape[-2]:
        raise DimensionError(
            f"scores must be (batch, head, n, n), got shape {scores.shape}"
        )
    return scores


def _as_valid(valid: np.ndarray | None, batch: int, n: int) -> np.ndarray:
    if valid is None:
        return np.ones((batch, n), dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (batch, n):
        raise DimensionError(
            f"validity mask must be (batch, n)=({batch}, {n}), got {valid.shape}"
        )
    if not valid.any(axis=1).all():
        raise ValidityError("every sequence needs at least one valid position")
    return valid


def raw_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Compute unscaled attention scores Q K^T.

    No 1/sqrt(d_k) scaling happens here; thresholds are selected on the raw
    scores and the scaling is applied inside `sparse_softmax`.

    Args:
        q: queries, shape (batch, head, n, d_k).
        k: keys, same shape as q.

    Returns:
        Scores of shape (batch, head, n, n).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 4 or q.shape != k.shape:
        raise DimensionError(f"Q/K shape mismatch: {q.shape} vs {k.shape}")
    return np.matmul(q, k.swapaxes(-1, -2))


def _keep_count(m: int, target_sparsity: float) -> int:
    # round() is banker's rounding; the selection oracle must use the same rule.
    k = int(round((1.0 - target_sparsity) * m))
    return max(MIN_KEEP_PER_ROW, min(k, m))


def select_threshold(
    scores: np.ndarray,
    target_sparsity: float,
    valid: np.ndarray | None = None,
    pool: str = PER_HEAD,
) -> SparseMaskSpec:
    """Pick the kept set as the exact top-k of each selection pool.

    k = round((1 - s) * m) over the m selectable entries of the pool, ties
    broken by ascending flat index. Afterwards every valid query row is
    guaranteed its maximum-score valid entry, which can push the realized
    keep count slightly above k.

    Args:
        scores: raw scores (batch, head, n, n), finite.
        target_sparsity: requested drop fraction s in [0, 1).
        valid: boolean (batch, n) marking real tokens; None means all valid.
        pool: "per_head" selects within each (batch, head) slice;
            "per_layer_batch" selects jointly across the whole tensor.

    Returns:
        A SparseMaskSpec aligned with `scores`.
    """
    scores = _as_scores(scores)
    if not 0.0 <= target_sparsity < 1.0:
        raise ConfigError(f"sparsity ratio must lie in [0, 1), got {target_sparsity}")
    if pool not in POOLS:
        raise ConfigError(f"unknown selection pool {pool!r}, expected one of {POOLS}")
    if not np.isfinite(scores).all():
        raise InvariantError("scores must be finite before masking")

    batch, heads, n, _ = scores.shape
    valid = _as_valid(valid, batch, n)

    selectable_bn = valid[:, :, None] & valid[:, None, :]  # (batch, n, n)
    keep = np.zeros(scores.shape, dtype=bool)
    keep_flat = keep.reshape(batch, heads, n * n)
    threshold = np.full((batch, heads), np.nan)

    if pool == PER_HEAD:
        sel_flat = selectable_bn.reshape(batch, n * n)
        for b in range(batch):
            idx = np.flatnonzero(sel_flat[b])
            k = _keep_count(idx.size, target_sparsity)
            for h in range(heads):
                vals = scores[b, h].reshape(n * n)[idx]
                order = np.lexsort((idx, -vals))
                keep_flat[b, h, idx[order[:k]]] = True
                threshold[b, h] = vals[order[k - 1]]
    else:
        sel_all = np.broadcast_to(selectable_bn[:, None], scores.shape).reshape(-1)
        idx = np.flatnonzero(sel_all)
        k = _keep_count(idx.size, target_sparsity)
        vals = scores.reshape(-1)[idx]
        order = np.lexsort((idx, -vals))
        keep.reshape(-1)[idx[order[:k]]] = True
        threshold[:] = vals[order[k - 1]]

    # Per-row guarantee: a valid query row that lost everything keeps its
    # maximum-score valid entry (lowest index on ties).
    forced = np.zeros_like(keep)
    starved = valid[:, None, :] & ~keep.any(axis=-1)  # (batch, head, n)
    if starved.any():
        pool_scores = np.where(selectable_bn[:, None], scores, -np.inf)
        best = pool_scores.argmax(axis=-1)  # argmax returns the first maximum
        b_i, h_i, q_i = np.nonzero(starved)
        forced[b_i, h_i, q_i, best[b_i, h_i, q_i]] = True
        keep |= forced

    counts = selectable_bn.sum(axis=(1, 2))  # (batch,)
    return SparseMaskSpec(
        keep=keep,
        forced=forced,
        threshold_value=threshold,
        keep_count=keep.sum(axis=(2, 3)),
        selectable_count=np.broadcast_to(counts[:, None], (batch, heads)).copy(),
        target_sparsity=float(target_sparsity),
        pool=pool,
    )


def apply_sparsity_mask(scores: np.ndarray, spec: SparseMaskSpec) -> np.ndarray:
    """Replace dropped and padded entries with the -inf sentinel."""
    scores = _as_scores(scores)
    if spec.keep.shape != scores.shape:
        raise DimensionError(
            f"mask spec shape {spec.keep.shape} does not match scores {scores.shape}"
        )
    return np.where(spec.keep, scores, MASK_SENTINEL)


def sparse_softmax(
    masked_scores: np.ndarray,
    d_k: int,
    valid_query: np.ndarray | None = None,
) -> np.ndarray:
    """Numerically stable softmax of masked_scores / sqrt(d_k).

    Sentinel (-inf) entries map to exactly 0 without ever being exponentiated;
    surviving entries of each row sum to 1. Rows whose query position is
    padded come out all-zero.

    Args:
        masked_scores: (batch, head, n, n) with -inf at dropped entries.
        d_k: per-head dimension used for the 1/sqrt(d_k) scaling.
        valid_query: optional (batch, n) mask; a fully-masked row at a valid
            query position raises InvariantError instead of silently zeroing.
    """
    masked_scores = np.asarray(masked_scores, dtype=np.float64)
    if masked_scores.ndim != 4:
        raise DimensionError(
            f"masked scores must be (batch, head, query, key), got shape "
            f"{masked_scores.shape}"
        )
    if d_k < 1:
        raise ConfigError(f"d_k must be >= 1, got {d_k}")
    kept = np.isfinite(masked_scores)
    if np.isnan(masked_scores).any() or np.isposinf(masked_scores).any():
        raise InvariantError("masked scores must be finite or -inf")

    empty_rows = ~kept.any(axis=-1)  # (batch, head, n)
    if valid_query is not None:
        valid_query = np.asarray(valid_query, dtype=bool)
        if (empty_rows & valid_query[:, None, :]).any():
            raise InvariantError("a valid query row has no surviving entries")

    scaled = masked_scores / math.sqrt(d_k)
    row_max = np.where(kept, scaled, -np.inf).max(axis=-1, keepdims=True)
    safe_max = np.where(np.isfinite(row_max), row_max, 0.0)
    exp = np.where(kept, np.exp(np.where(kept, scaled - safe_max, 0.0)), 0.0)
    denom = exp.sum(axis=-1, keepdims=True)
    return exp / np.where(denom == 0.0, 1.0, denom)


def sparse_attention_forward(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    target_sparsity: float,
    valid: np.ndarray | None = None,
    pool: str = PER_HEAD,
) -> AttentionOutput:
    """Full sparse attention: scores, threshold selection, masking, softmax, mix.

    At target_sparsity=0 this reduces to dense scaled dot-product attention.

    Args:
        q, k, v: (batch, head, n, d_k) arrays.
        target_sparsity: drop fraction s in [0, 1).
        valid: boolean (batch, n) token validity; None means all valid.
        pool: threshold selection pool, see `select_threshold`.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise DimensionError(
            f"Q/K/V must share shape (batch, head, n, d_k), got {q.shape}, {k.shape}, {v.shape}"
        )
    scores = raw_scores(q, k)
    spec = select_threshold(scores, target_sparsity, valid=valid, pool=pool)
    masked = apply_sparsity_mask(scores, spec)
    weights = sparse_softmax(masked, q.shape[-1], valid_query=valid)
    context = np.matmul(weights, v)
    return AttentionOutput(context=context, weights=weights, mask_spec=spec)


def sparse_attention_backward(
    grad_context: np.ndarray,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    output: AttentionOutput,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the forward pass w.r.t. Q, K and V.

    The kept/dropped selection is treated as a constant of the forward pass:
    dropped entries have exactly zero weight, so no gradient flows through
    them, and none flows through the discrete threshold choice.

    Args:
        grad_context: upstream gradient, same shape as the context output.
        q, k, v: the forward inputs.
        output: the AttentionOutput returned by the forward pass.

    Returns:
        (grad_q, grad_k, grad_v), each shaped like its input.
    """
    if output is None or output.weights is None:
        raise StateError("forward cache (AttentionOutput) is required")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    grad_context = np.asarray(grad_context, dtype=np.float64)
    if grad_context.shape != q.shape:
        raise DimensionError(
            f"grad_context shape {grad_context.shape} does not match Q {q.shape}"
        )
    weights = output.weights
    if weights.shape != q.shape[:3] + (k.shape[2],):
        raise StateError(
            f"cached weights shape {weights.shape} inconsistent with inputs {q.shape}"
        )

    grad_v = np.matmul(weights.swapaxes(-1, -2), grad_context)
    grad_weights = np.matmul(grad_context, v.swapaxes(-1, -2))
    # Softmax backward per row; zero weights kill dropped entries exactly.
    row_dot = np.sum(grad_weights * weights, axis=-1, keepdims=True)
    grad_scaled = weights * (grad_weights - row_dot)
    grad_scores = grad_scaled / math.sqrt(q.shape[-1])
    grad_q = np.matmul(grad_scores, k)
    grad_k = np.matmul(grad_scores.swapaxes(-1, -2), q)
    return grad_q, grad_k, grad_v
