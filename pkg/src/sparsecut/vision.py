"""Vision encoder: a pre-norm transformer stack over embedded patch tokens.

Each patch in a bundle is encoded independently with shared weights; there
is no class token and no cross-patch attention, so per-patch cost is flat
in the bundle size. The forward pass retains the hidden state after every
layer (plus the input), because downstream shortcut connections tap
arbitrary depths, not just the final state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensorops import layer_norm, mlp, multi_head_attention


@dataclass(frozen=True)
class VitConfig:
    depth: int
    dim: int
    heads: int = 4
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"encoder depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(
                f"encoder heads ({self.heads}) must divide dim ({self.dim})"
            )
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.dim


def _init_linear(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, fan_in ** -0.5, size=(fan_in, fan_out))


@dataclass
class BlockWeights:
    """One pre-norm transformer block: LN -> MHA -> add, LN -> MLP -> add.

    All projections are bias-free; the two layer norms carry their own gain
    and bias. The same structure serves encoder and decoder blocks, only
    the causal flag at call time differs.
    """

    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator) -> "BlockWeights":
        return cls(
            ln1_gain=np.ones(dim), ln1_bias=np.zeros(dim),
            w_query=_init_linear(rng, dim, dim),
            w_key=_init_linear(rng, dim, dim),
            w_value=_init_linear(rng, dim, dim),
            w_out=_init_linear(rng, dim, dim),
            ln2_gain=np.ones(dim), ln2_bias=np.zeros(dim),
            mlp_in=_init_linear(rng, dim, hidden),
            mlp_out=_init_linear(rng, hidden, dim),
        )

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": getattr(self, name) for name in (
            "ln1_gain", "ln1_bias", "w_query", "w_key", "w_value", "w_out",
            "ln2_gain", "ln2_bias", "mlp_in", "mlp_out")}


def transformer_block(x, w: BlockWeights, heads: int, ln_eps: float,
                      causal: bool = False) -> np.ndarray:
    """Apply one pre-norm block to a [M, D] sequence."""
    h = layer_norm(x, w.ln1_gain, w.ln1_bias, eps=ln_eps)
    x = x + multi_head_attention(h, h, w.w_query, w.w_key, w.w_value, w.w_out,
                                 heads=heads, causal=causal)
    h = layer_norm(x, w.ln2_gain, w.ln2_bias, eps=ln_eps)
    return x + mlp(h, w.mlp_in, w.mlp_out)


@dataclass
class VitWeights:
    cfg: VitConfig
    layers: list[BlockWeights] = field(default_factory=list)

    @classmethod
    def initialize(cls, cfg: VitConfig, rng: np.random.Generator) -> "VitWeights":
        return cls(cfg=cfg, layers=[
            BlockWeights.initialize(cfg.dim, cfg.hidden, rng) for _ in range(cfg.depth)
        ])

    def named(self, prefix: str = "encoder") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{idx + 1:02d}"))
        return out


@dataclass
class VitActivations:
    """states[k] is the hidden state after layer k; states[0] is the input.

    Every entry is [N, M, D]. Indexing by layer number therefore works
    directly: states[i] is the tap point for a shortcut that reads encoder
    layer i.
    """

    states: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def vit_layer(x, w: BlockWeights, cfg: VitConfig) -> np.ndarray:
    """One encoder layer over a [N, M, D] stack, patches independent."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.dim:
        raise ShapeError(f"encoder input must be [N, M, {cfg.dim}], got {x.shape}")
    return np.stack([
        transformer_block(x[p], w, cfg.heads, cfg.ln_eps, causal=False)
        for p in range(x.shape[0])
    ])


def vit_forward(x0, weights: VitWeights, cfg: VitConfig | None = None) -> VitActivations:
    """Run the full stack, retaining all intermediate states."""
    cfg = cfg or weights.cfg
    if len(weights.layers) != cfg.depth:
        raise ConfigError(
            f"weights hold {len(weights.layers)} layers, config says {cfg.depth}"
        )
    states = [np.asarray(x0, dtype=np.float64)]
    for w in weights.layers:
        states.append(vit_layer(states[-1], w, cfg))
    return VitActivations(states=states)
