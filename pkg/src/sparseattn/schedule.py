"""Per-layer sparsity targets for the four standard run configurations."""
from __future__ import annotations

from dataclasses import dataclass, field

from .attention import PER_HEAD, PER_LAYER_BATCH
from .errors import ConfigError

MODES = ("baseline", "uniform", "adaptive")

# Names accepted by the CLI --config flag.
PRESET_NAMES = ("baseline", "uniform_sparse", "light_sparse", "aggressive_sparse")


@dataclass(frozen=True)
class SparsityConfig:
    """How much attention sparsity to apply, and how it varies with depth.

    Attributes:
        mode: "baseline" (dense), "uniform" (same ratio everywhere) or
            "adaptive" (linear ramp over depth averaging to `target`).
        target: mean sparsity ratio s in [0, 1).
        ramp_width: full spread of the adaptive ramp; must satisfy
            0 <= ramp_width < 2 * min(target, 1 - target).
        layers: number of encoder layers the schedule covers.
    """

    mode: str
    target: float
    ramp_width: float = 0.0
    layers: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not 0.0 <= self.target < 1.0:
            raise ConfigError(f"target sparsity must lie in [0, 1), got {self.target}")
        if self.mode == "baseline" and self.target != 0.0:
            raise ConfigError("baseline mode requires target 0")
        if self.mode == "adaptive":
            limit = 2.0 * min(self.target, 1.0 - self.target)
            if not 0.0 <= self.ramp_width < limit:
                raise ConfigError(
                    f"ramp_width {self.ramp_width} would push layer ratios outside "
                    f"[0, 1); allowed range is [0, {limit})"
                )

    @property
    def pool(self) -> str:
        """Threshold selection pool implied by the mode.

        Uniform (and baseline) modes threshold each head matrix on its own;
        adaptive modes compute one threshold per layer over the whole batch,
        recomputed every forward pass.
        """
        return PER_LAYER_BATCH if self.mode == "adaptive" else PER_HEAD


@dataclass(frozen=True)
class LayerSchedule:
    """Sparsity ratio per layer, index 0 = first (shallowest) layer."""

    per_layer: tuple[float, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.per_layer)

    def __getitem__(self, layer: int) -> float:
        return self.per_layer[layer]


def build_schedule(config: SparsityConfig) -> LayerSchedule:
    """Expand a SparsityConfig into per-layer ratios.

    Baseline gives all zeros, uniform repeats the target, adaptive produces a
    non-decreasing linear ramp centered on the target:
    s_l = target - ramp_width/2 + ramp_width * l / (layers - 1).
    """
    mode, target, width, layers = (
        config.mode,
        config.target,
        config.ramp_width,
        config.layers,
    )
    if mode == "baseline":
        values = [0.0] * layers
    elif mode == "uniform":
        values = [target] * layers
    elif layers == 1:
        values = [target]
    else:
        values = [
            target - width / 2.0 + width * layer / (layers - 1)
            for layer in range(layers)
        ]
    return LayerSchedule(per_layer=tuple(values))


def preset_configs(layers: int) -> dict[str, SparsityConfig]:
    """The four standard configurations, keyed by their run names."""
    if layers < 1:
        raise ConfigError(f"layers must be >= 1, got {layers}")
    return {
        "baseline": SparsityConfig("baseline", 0.0, 0.0, layers),
        "uniform_sparse": SparsityConfig("uniform", 0.8, 0.0, layers),
        "light_sparse": SparsityConfig("adaptive", 0.6, 0.2, layers),
        "aggressive_sparse": SparsityConfig("adaptive", 0.8, 0.2, layers),
    }


def threshold_pools(config: SparsityConfig) -> list[str]:
    """Selection pool to use for each layer (same rule at every depth)."""
    return [config.pool] * config.layers
