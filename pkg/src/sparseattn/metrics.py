"""Analytic quantities reported by the lab: sparsity, entropy, correlation, FLOPs.

All entropies are natural-log (nats). The FLOPs model counts 2 FLOPs per
multiply-add and ignores softmax, layer-norm and bias terms; under that
convention one attention sublayer costs 4*n^2*d for the two attention matmuls
plus 8*n*d^2 for the four linear projections.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionOutput, SparseMaskSpec
from .errors import DataError, DimensionError, InvariantError, ZeroVarianceError

ROW_SUM_TOLERANCE = 1e-6

FLOPS_CONVENTION = (
    "2 FLOPs per multiply-add; attention matmuls 4*n^2*d, projections 8*n*d^2; "
    "softmax/layer-norm/bias excluded"
)


def sparsity_from_mask(spec: SparseMaskSpec) -> tuple[np.ndarray, float]:
    """Achieved sparsity per (batch, head) slice and overall.

    Sparsity is the dropped fraction of selectable (valid query x valid key)
    entries.
    """
    total = int(spec.selectable_count.sum())
    if total == 0:
        raise DataError("empty selection pool")
    return spec.per_slice_sparsity, spec.achieved_sparsity


def sparsity_from_weights(
    weights: np.ndarray, valid: np.ndarray | None = None
) -> float:
    """Fraction of selectable entries whose post-softmax weight is exactly zero."""
    weights = np.asarray(weights)
    if weights.ndim != 4:
        raise DimensionError(f"weights must be 4-D, got shape {weights.shape}")
    batch, _, n, _ = weights.shape
    if valid is None:
        valid = np.ones((batch, n), dtype=bool)
    selectable = (valid[:, :, None] & valid[:, None, :])[:, None]
    total = int(np.broadcast_to(selectable, weights.shape).sum())
    if total == 0:
        raise DataError("empty selection pool")
    zeros = int(((weights == 0.0) & selectable).sum())
    return zeros / total


@dataclass
class EntropyResult:
    """Shannon entropies of attention rows, in nats.

    `rows` is (batch, head, n) with NaN at padded query positions.
    """

    rows: np.ndarray
    mean_per_head: np.ndarray
    mean: float


def attention_entropy(
    weights: np.ndarray, valid: np.ndarray | None = None
) -> EntropyResult:
    """Per-row entropy H = -sum_j p_j ln p_j with 0*ln(0) = 0.

    Args:
        weights: post-softmax probabilities (batch, head, n, n).
        valid: optional (batch, n) query validity; padded rows are skipped.

    Raises:
        InvariantError: if any counted row does not sum to 1 within 1e-6.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4:
        raise DimensionError(f"weights must be 4-D, got shape {weights.shape}")
    batch, heads, n, _ = weights.shape
    if valid is None:
        valid = np.ones((batch, n), dtype=bool)
    valid = np.asarray(valid, dtype=bool)

    row_sums = weights.sum(axis=-1)
    counted = np.broadcast_to(valid[:, None, :], (batch, heads, n))
    if np.abs(row_sums[counted] - 1.0).max(initial=0.0) > ROW_SUM_TOLERANCE:
        raise InvariantError("attention row weights do not sum to 1")

    positive = weights > 0.0
    terms = np.where(positive, weights * np.log(np.where(positive, weights, 1.0)), 0.0)
    rows = np.where(counted, -terms.sum(axis=-1), np.nan)

    with np.errstate(invalid="ignore"):
        mean_per_head = np.nanmean(rows, axis=(0, 2))
        mean = float(np.nanmean(rows))
    return EntropyResult(rows=rows, mean_per_head=mean_per_head, mean=mean)


@dataclass
class AttentionStats:
    """Aggregated sparsity/entropy over one or more forward passes."""

    layer_sparsity: tuple[float, ...]
    overall_sparsity: float
    head_entropy: np.ndarray  # (layers, heads)
    layer_entropy: tuple[float, ...]
    mean_entropy: float


class StatsAccumulator:
    """Accumulates mask and entropy statistics batch by batch."""

    def __init__(self, layers: int, heads: int) -> None:
        self.layers = layers
        self.heads = heads
        self._kept = np.zeros(layers)
        self._selectable = np.zeros(layers)
        self._entropy_sum = np.zeros((layers, heads))
        self._entropy_rows = np.zeros((layers, heads))

    def add_batch(
        self, attn_outputs: list[AttentionOutput], valid: np.ndarray
    ) -> None:
        if len(attn_outputs) != self.layers:
            raise DimensionError(
                f"expected {self.layers} layer outputs, got {len(attn_outputs)}"
            )
        for layer, out in enumerate(attn_outputs):
            self._kept[layer] += out.mask_spec.keep_count.sum()
            self._selectable[layer] += out.mask_spec.selectable_count.sum()
            rows = attention_entropy(out.weights, valid).rows  # (B, H, n)
            counted = ~np.isnan(rows)
            self._entropy_sum[layer] += np.where(counted, rows, 0.0).sum(axis=(0, 2))
            self._entropy_rows[layer] += counted.sum(axis=(0, 2))

    def finalize(self) -> AttentionStats:
        if not self._selectable.all():
            raise DataError("no batches accumulated")
        layer_sparsity = 1.0 - self._kept / self._selectable
        head_entropy = self._entropy_sum / self._entropy_rows
        layer_entropy = self._entropy_sum.sum(axis=1) / self._entropy_rows.sum(axis=1)
        mean_entropy = self._entropy_sum.sum() / self._entropy_rows.sum()
        return AttentionStats(
            layer_sparsity=tuple(float(s) for s in layer_sparsity),
            overall_sparsity=float(1.0 - self._kept.sum() / self._selectable.sum()),
            head_entropy=head_entropy,
            layer_entropy=tuple(float(e) for e in layer_entropy),
            mean_entropy=float(mean_entropy),
        )


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    count: int


def pearson(xs, ys) -> CorrelationResult:
    """Sample Pearson correlation coefficient.

    Raises:
        DataError: on length mismatch or fewer than 2 points.
        ZeroVarianceError: if either input is constant.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DataError(f"inputs must be equal-length 1-D, got {xs.shape}, {ys.shape}")
    if xs.size < 2:
        raise DataError(f"need at least 2 points, got {xs.size}")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("correlation undefined: zero variance in input")
    r = float(np.dot(dx, dy) / np.sqrt(sxx * syy))
    return CorrelationResult(r=r, count=int(xs.size))


@dataclass(frozen=True)
class FlopsRow:
    """FLOPs accounting for one configuration of a single attention sublayer."""

    name: str
    attention_sparsity: float
    dense_attention_flops: int
    sparse_attention_flops: float
    projection_flops: int
    attention_reduction_pct: float
    total_layer_reduction_pct: float
    with_ffn_reduction_pct: float


@dataclass
class FlopsReport:
    """Theoretical FLOPs for one attention sublayer at each sparsity level.

    "Total layer" covers projections plus attention matmuls; the with-FFN
    column additionally counts a feed-forward block of width `d_ff` and is an
    extension beyond the attention sublayer accounting.
    """

    n: int
    d: int
    d_ff: int
    convention: str = FLOPS_CONVENTION
    rows: list[FlopsRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "d_ff": self.d_ff,
            "convention": self.convention,
            "with_ffn_note": "with_ffn_reduction_pct includes the feed-forward "
            "block and is an extension beyond the attention-sublayer totals",
            "rows": [vars(row) for row in self.rows],
        }


def flops_report(
    n: int, d: int, sparsities: dict[str, float], d_ff: int | None = None
) -> FlopsReport:
    """Closed-form FLOPs reductions for the given attention sparsity levels.

    Dense attention matmuls cost 4*n^2*d, projections 8*n*d^2. A sparsity s
    removes the fraction s of the attention matmul work, so the attention
    reduction is 100*s and the whole-sublayer reduction is 100*s*n/(n+2d).

    Args:
        n: sequence length.
        d: model dimension.
        sparsities: mapping config name -> effective attention sparsity.
        d_ff: feed-forward width for the extension column (default 4*d).
    """
    if n < 1 or d < 1:
        raise DataError(f"n and d must be >= 1, got n={n}, d={d}")
    if d_ff is None:
        d_ff = 4 * d
    dense_attention = 4 * n * n * d
    projections = 8 * n * d * d
    ffn = 4 * n * d * d_ff
    report = FlopsReport(n=n, d=d, d_ff=d_ff)
    for name, s in sparsities.items():
        if not 0.0 <= s < 1.0:
            raise DataError(f"sparsity for {name!r} must lie in [0, 1), got {s}")
        saved = s * dense_attention
        report.rows.append(
            FlopsRow(
                name=name,
                attention_sparsity=float(s),
                dense_attention_flops=dense_attention,
                sparse_attention_flops=dense_attention - saved,
                projection_flops=projections,
                attention_reduction_pct=100.0 * s,
                total_layer_reduction_pct=100.0 * saved / (dense_attention + projections),
                with_ffn_reduction_pct=100.0 * saved / (dense_attention + projections + ffn),
            )
        )
    return report
