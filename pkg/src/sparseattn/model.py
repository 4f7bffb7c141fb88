"""Small trainable transformer encoder classifier with hand-written gradients.

Pre-norm residual blocks, learned positional embeddings, mean pooling over
valid tokens, and a linear classifier head. Parameters live in a flat
name -> float64 ndarray dict (keys like "layers.0.attn.wq"); gradients mirror
that dict exactly. Everything here is pure numpy so the backward pass can be
checked against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .attention import AttentionOutput, sparse_attention_backward, sparse_attention_forward
from .errors import ConfigError, DataError, DimensionError
from .schedule import LayerSchedule

LAYER_NORM_EPS = 1e-5

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the encoder classifier.

    Desk-scale defaults live in `DESK_PRESET`; `DISTILBERT_PRESET` mirrors the
    6-layer/12-head/768-dim configuration at full scale.
    """

    layers: int
    heads: int
    dim: int
    ffn_dim: int
    vocab_size: int
    max_len: int
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.layers, self.heads, self.dim, self.ffn_dim, self.vocab_size,
               self.max_len, self.num_classes) < 1:
            raise ConfigError(f"all dimensions must be >= 1: {self}")
        if self.dim % self.heads != 0:
            raise ConfigError(
                f"model dim {self.dim} must be divisible by heads {self.heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


DESK_PRESET = {"layers": 2, "heads": 2, "dim": 32, "ffn_dim": 64, "max_len": 64}
DISTILBERT_PRESET = {"layers": 6, "heads": 12, "dim": 768, "ffn_dim": 3072, "max_len": 512}


def _uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Deterministic parameter initialization.

    Weight matrices draw from U(-b, b) with b = sqrt(6 / (rows + cols));
    biases start at zero and layer-norm gains at one.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d, f, c = config.dim, config.ffn_dim, config.num_classes
    params: dict[str, np.ndarray] = {
        "tok_emb": _uniform(rng, (config.vocab_size, d)),
        "pos_emb": _uniform(rng, (config.max_len, d)),
    }
    for i in range(config.layers):
        p = f"layers.{i}."
        params[p + "ln1.g"] = np.ones(d)
        params[p + "ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + f"attn.{name}"] = _uniform(rng, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            params[p + f"attn.{name}"] = np.zeros(d)
        params[p + "ln2.g"] = np.ones(d)
        params[p + "ln2.b"] = np.zeros(d)
        params[p + "ffn.w1"] = _uniform(rng, (d, f))
        params[p + "ffn.b1"] = np.zeros(f)
        params[p + "ffn.w2"] = _uniform(rng, (f, d))
        params[p + "ffn.b2"] = np.zeros(d)
    params["cls.w"] = _uniform(rng, (d, c))
    params["cls.b"] = np.zeros(c)
    return params


def layer_norm_forward(x, gain, bias, eps=LAYER_NORM_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    dxhat = dy * gain
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def gelu(x):
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dk)


def encoder_layer_forward(
    x: np.ndarray,
    params: dict[str, np.ndarray],
    prefix: str,
    target_sparsity: float,
    pool: str,
    valid: np.ndarray,
    heads: int,
) -> tuple[np.ndarray, AttentionOutput, dict]:
    """One pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.))."""
    g1, b1 = params[prefix + "ln1.g"], params[prefix + "ln1.b"]
    xn1, ln1_cache = layer_norm_forward(x, g1, b1)
    q = _split_heads(xn1 @ params[prefix + "attn.wq"] + params[prefix + "attn.bq"], heads)
    k = _split_heads(xn1 @ params[prefix + "attn.wk"] + params[prefix + "attn.bk"], heads)
    v = _split_heads(xn1 @ params[prefix + "attn.wv"] + params[prefix + "attn.bv"], heads)
    attn = sparse_attention_forward(q, k, v, target_sparsity, valid=valid, pool=pool)
    ctx = _merge_heads(attn.context)
    x_mid = x + ctx @ params[prefix + "attn.wo"] + params[prefix + "attn.bo"]

    g2, b2 = params[prefix + "ln2.g"], params[prefix + "ln2.b"]
    xn2, ln2_cache = layer_norm_forward(x_mid, g2, b2)
    h_pre = xn2 @ params[prefix + "ffn.w1"] + params[prefix + "ffn.b1"]
    h_act = gelu(h_pre)
    y = x_mid + h_act @ params[prefix + "ffn.w2"] + params[prefix + "ffn.b2"]

    cache = {
        "xn1": xn1, "ln1": ln1_cache, "q": q, "k": k, "v": v, "attn": attn,
        "ctx": ctx, "x_mid": x_mid, "xn2": xn2, "ln2": ln2_cache,
        "h_pre": h_pre, "h_act": h_act,
    }
    return y, attn, cache


def encoder_layer_backward(
    dy: np.ndarray,
    params: dict[str, np.ndarray],
    prefix: str,
    cache: dict,
    grads: dict[str, np.ndarray],
    heads: int,
) -> np.ndarray:
    """Reverse of `encoder_layer_forward`; accumulates into `grads`."""
    d = dy.shape[-1]

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    # FFN sub-block
    d_ffn_out = dy
    grads[prefix + "ffn.w2"] += flat(cache["h_act"]).T @ flat(d_ffn_out)
    grads[prefix + "ffn.b2"] += flat(d_ffn_out).sum(axis=0)
    d_h_act = d_ffn_out @ params[prefix + "ffn.w2"].T
    d_h_pre = d_h_act * gelu_grad(cache["h_pre"])
    grads[prefix + "ffn.w1"] += flat(cache["xn2"]).T @ flat(d_h_pre)
    grads[prefix + "ffn.b1"] += flat(d_h_pre).sum(axis=0)
    d_xn2 = d_h_pre @ params[prefix + "ffn.w1"].T
    dx_ln2, dg2, db2 = layer_norm_backward(d_xn2, cache["ln2"])
    grads[prefix + "ln2.g"] += dg2
    grads[prefix + "ln2.b"] += db2
    d_x_mid = dy + dx_ln2

    # Attention sub-block
    grads[prefix + "attn.wo"] += flat(cache["ctx"]).T @ flat(d_x_mid)
    grads[prefix + "attn.bo"] += flat(d_x_mid).sum(axis=0)
    d_ctx = _split_heads(d_x_mid @ params[prefix + "attn.wo"].T, heads)
    dq, dk, dv = sparse_attention_backward(
        d_ctx, cache["q"], cache["k"], cache["v"], cache["attn"]
    )
    dq_flat, dk_flat, dv_flat = (_merge_heads(a) for a in (dq, dk, dv))
    xn1_flat = flat(cache["xn1"])
    d_xn1 = np.zeros_like(cache["xn1"]).reshape(-1, d)
    for name, grad in (("wq", dq_flat), ("wk", dk_flat), ("wv", dv_flat)):
        grads[prefix + f"attn.{name}"] += xn1_flat.T @ flat(grad)
        grads[prefix + f"attn.b{name[1]}"] += flat(grad).sum(axis=0)
        d_xn1 += flat(grad) @ params[prefix + f"attn.{name}"].T
    dx_ln1, dg1, db1 = layer_norm_backward(d_xn1.reshape(dy.shape), cache["ln1"])
    grads[prefix + "ln1.g"] += dg1
    grads[prefix + "ln1.b"] += db1
    return d_x_mid + dx_ln1


def model_forward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    token_ids: np.ndarray,
    valid: np.ndarray | None,
    schedule: LayerSchedule,
    pools: list[str],
) -> tuple[np.ndarray, list[AttentionOutput], dict]:
    """Embed, encode through all layers, mean-pool valid tokens, classify.

    Returns (logits, per-layer attention outputs, backward cache).
    """
    token_ids = np.asarray(token_ids)
    batch, n = token_ids.shape
    if n > config.max_len:
        raise DataError(f"sequence length {n} exceeds max_len {config.max_len}")
    if token_ids.min(initial=0) < 0 or token_ids.max(initial=0) >= config.vocab_size:
        raise DataError("token id out of vocabulary range")
    if len(schedule) != config.layers or len(pools) != config.layers:
        raise DimensionError(
            f"schedule/pools must cover {config.layers} layers, got "
            f"{len(schedule)}/{len(pools)}"
        )
    if valid is None:
        valid = np.ones((batch, n), dtype=bool)

    x = params["tok_emb"][token_ids] + params["pos_emb"][:n][None, :, :]
    attns: list[AttentionOutput] = []
    layer_caches: list[dict] = []
    for i in range(config.layers):
        x, attn, cache = encoder_layer_forward(
            x, params, f"layers.{i}.", schedule[i], pools[i], valid, config.heads
        )
        attns.append(attn)
        layer_caches.append(cache)

    counts = valid.sum(axis=1).astype(np.float64)
    pooled = (x * valid[:, :, None]).sum(axis=1) / counts[:, None]
    logits = pooled @ params["cls.w"] + params["cls.b"]
    cache = {
        "token_ids": token_ids, "valid": valid, "counts": counts,
        "layers": layer_caches, "pooled": pooled, "n": n,
    }
    return logits, attns, cache


def cross_entropy_loss(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels must be ({batch},), got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise DataError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(batch), labels]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    probs[np.arange(batch), labels] -= 1.0
    return loss, probs / batch


def model_backward(
    grad_logits: np.ndarray,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    cache: dict,
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter."""
    if not cache or "layers" not in cache:
        raise DataError("forward cache required")
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    pooled, valid, counts = cache["pooled"], cache["valid"], cache["counts"]

    grads["cls.w"] += pooled.T @ grad_logits
    grads["cls.b"] += grad_logits.sum(axis=0)
    d_pooled = grad_logits @ params["cls.w"].T
    dx = valid[:, :, None] * (d_pooled / counts[:, None])[:, None, :]

    for i in reversed(range(config.layers)):
        dx = encoder_layer_backward(
            dx, params, f"layers.{i}.", cache["layers"][i], grads, config.heads
        )

    n = cache["n"]
    grads["pos_emb"][:n] += dx.sum(axis=0)
    np.add.at(grads["tok_emb"], cache["token_ids"], dx)
    return grads
