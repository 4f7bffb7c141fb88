"""Adaptive-moment optimizer with decoupled weight decay."""
from __future__ import annotations


import numpy as np

from .errors import ConfigError, DimensionError, TrainingError


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay.

    Update per parameter p with gradient g:
        m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
        p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        if lr < 0:
            raise ConfigError(f"invalid learning rate {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0 or weight_decay < 0:
            raise ConfigError(f"invalid eps {eps} or weight_decay {weight_decay}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Apply one update in place."""
        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape mismatch for {name!r}")
            if not np.isfinite(g).all():
                raise TrainingError(
                    f"non-finite gradient for {name!r} at step {self.step_count}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= self.lr * update
