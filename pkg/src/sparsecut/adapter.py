"""Per-shortcut fusion adapter.

One attention-plus-MLP block sits on every shortcut connection. When the
bundle carries high-resolution tiles, the block runs cross-attention: the
low-resolution tokens are the queries, the concatenated tile tokens the
keys and values, so fine detail is pulled into the low-res sequence while
the output keeps the low-res token count. Without tiles the block runs
plain self-attention over the low-res tokens. Either way an MLP then maps
from the encoder width into the decoder width.

The block is trainable in principle, so a hand-written backward pass is
provided and certified against central finite differences (gradcheck).
The forward can record a cache holding every intermediate the backward
needs; a cache is single-use and tied to the block that produced it.

Also here: the conventional baseline projector (layer norm + MLP over all
visual tokens) used by the concatenation cost mode, which grows decoder
context instead of fusing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, ConfigError, ShapeError
from .tensorops import gelu, gelu_grad, layer_norm, layer_norm_stats, matmul

WEIGHT_FIELDS = ("w_query", "w_key", "w_value", "w_out",
                 "ln_gain", "ln_bias", "mlp_in", "mlp_out")


@dataclass(frozen=True)
class AdapterConfig:
    visual_dim: int
    decoder_dim: int
    heads: int = 1
    mlp_hidden: int | None = None  # None means 4 * visual_dim
    residual: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.visual_dim < 1 or self.decoder_dim < 1:
            raise ConfigError("adapter dims must be positive")
        if self.heads < 1 or self.visual_dim % self.heads != 0:
            raise ConfigError(
                f"adapter heads ({self.heads}) must divide visual dim ({self.visual_dim})"
            )
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError("mlp_hidden must be positive when given")

    @property
    def hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 4 * self.visual_dim


@dataclass
class AdapterBlock:
    """Weights of one fusion block.

    Attention projections are [D_v, D_v] and bias-free; the layer norm
    between attention and MLP carries gain and bias; the MLP maps
    D_v -> hidden -> D_t.
    """

    cfg: AdapterConfig
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray
    w_out: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray

    @classmethod
    def initialize(cls, cfg: AdapterConfig, rng: np.random.Generator) -> "AdapterBlock":
        d, h, dt = cfg.visual_dim, cfg.hidden, cfg.decoder_dim
        lin = lambda fi, fo: rng.normal(0.0, fi ** -0.5, size=(fi, fo))
        return cls(
            cfg=cfg,
            w_query=lin(d, d), w_key=lin(d, d), w_value=lin(d, d), w_out=lin(d, d),
            ln_gain=np.ones(d), ln_bias=np.zeros(d),
            mlp_in=lin(d, h), mlp_out=lin(h, dt),
        )

    def weights(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_FIELDS}

    @classmethod
    def from_weights(cls, cfg: AdapterConfig, weights: dict[str, np.ndarray]) -> "AdapterBlock":
        missing = set(WEIGHT_FIELDS) - set(weights)
        if missing:
            raise ConfigError(f"adapter weights missing {sorted(missing)}")
        return cls(cfg=cfg, **{name: np.asarray(weights[name], dtype=np.float64)
                               for name in WEIGHT_FIELDS})


@dataclass(frozen=True)
class FusedVisualTokens:
    """Adapter output: [M_v, D_t] tokens plus the encoder layer they tap."""

    tokens: np.ndarray
    source_layer: int


@dataclass
class FuseCache:
    """Intermediates of one fuse() call, for exactly one backward pass."""

    block: AdapterBlock
    cross: bool
    x_low: np.ndarray
    x_src: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: list[np.ndarray]        # per-head attention weights [M, K]
    attn_concat: np.ndarray        # head outputs, concatenated [M, D_v]
    xhat: np.ndarray               # layer-norm normalized rows
    inv_std: np.ndarray            # layer-norm 1/sqrt(var + eps), [M, 1]
    normed: np.ndarray             # layer-norm output [M, D_v]
    pre_act: np.ndarray            # MLP hidden pre-activation [M, hidden]
    activated: np.ndarray          # gelu(pre_act)
    consumed: bool = field(default=False)

    @property
    def attention(self) -> list[np.ndarray]:
        """Per-head attention weight matrices (rows are convex weights)."""
        return self.probs


def _validate_inputs(x_low, x_high, cfg: AdapterConfig):
    x_low = np.asarray(x_low, dtype=np.float64)
    if x_low.ndim != 2 or x_low.shape[1] != cfg.visual_dim:
        raise ShapeError(
            f"x_low must be [M, {cfg.visual_dim}], got {x_low.shape}"
        )
    if x_high is None:
        return x_low, None
    x_high = np.asarray(x_high, dtype=np.float64)
    if x_high.ndim != 2 or x_high.shape[1] != cfg.visual_dim:
        raise ShapeError(
            f"x_high must be [K, {cfg.visual_dim}] or None, got {x_high.shape}"
        )
    if x_high.shape[0] < 1:
        raise ShapeError("x_high must hold at least one token when present")
    return x_low, x_high


def fuse_with_cache(x_low, x_high, block: AdapterBlock,
                    source_layer: int = 0) -> tuple[FusedVisualTokens, FuseCache]:
    """Forward pass that also records everything the backward needs."""
    cfg = block.cfg
    x_low, x_high = _validate_inputs(x_low, x_high, cfg)
    cross = x_high is not None
    x_src = x_high if cross else x_low

    q = matmul(x_low, block.w_query)
    k = matmul(x_src, block.w_key)
    v = matmul(x_src, block.w_value)

    head_dim = cfg.visual_dim // cfg.heads
    scale = 1.0 / np.sqrt(head_dim)
    probs = []
    pieces = []
    for h in range(cfg.heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        scores = matmul(q[:, cols], k[:, cols].T) * scale
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        probs.append(p)
        pieces.append(matmul(p, v[:, cols]))
    attn_concat = np.concatenate(pieces, axis=1)
    attn_out = matmul(attn_concat, block.w_out)

    y = x_low + attn_out if cfg.residual else attn_out
    normed, xhat, inv_std = layer_norm_stats(y, block.ln_gain, block.ln_bias,
                                             eps=cfg.ln_eps)
    pre_act = matmul(normed, block.mlp_in)
    activated = gelu(pre_act)
    out = matmul(activated, block.mlp_out)

    cache = FuseCache(
        block=block, cross=cross, x_low=x_low, x_src=x_src,
        q=q, k=k, v=v, probs=probs, attn_concat=attn_concat,
        xhat=xhat, inv_std=inv_std, normed=normed,
        pre_act=pre_act, activated=activated,
    )
    return FusedVisualTokens(tokens=out, source_layer=source_layer), cache


def fuse(x_low, x_high, block: AdapterBlock, source_layer: int = 0) -> FusedVisualTokens:
    """Forward pass without a cache; see fuse_with_cache."""
    fused, _ = fuse_with_cache(x_low, x_high, block, source_layer=source_layer)
    return fused


def _layer_norm_backward(d_out, xhat, inv_std, gain):
    """Backward through y = xhat * gain + bias with biased row variance."""
    d_gain = (d_out * xhat).sum(axis=0)
    d_bias = d_out.sum(axis=0)
    d_xhat = d_out * gain
    mean_dxhat = d_xhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (d_xhat * xhat).mean(axis=1, keepdims=True)
    d_x = inv_std * (d_xhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return d_x, d_gain, d_bias


def fuse_backward(grad_out, cache: FuseCache,
                  block: AdapterBlock) -> dict[str, np.ndarray]:
    """Analytic gradients of probe(fuse(...)) for inputs and all weights.

    grad_out is d(objective)/d(output tokens), shape [M, D_t]. Returns a
    dict keyed by the weight field names plus "x_low" (and "x_high" in
    cross mode). The cache is consumed: a second call with the same cache
    raises, as does passing a cache built by a different block.
    """
    if cache.block is not block:
        raise CacheError("cache was recorded by a different adapter block")
    if cache.consumed:
        raise CacheError("fuse cache already consumed by a previous backward pass")
    cache.consumed = True

    cfg = block.cfg
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (cache.x_low.shape[0], cfg.decoder_dim):
        raise ShapeError(
            f"grad_out must be [{cache.x_low.shape[0]}, {cfg.decoder_dim}], "
            f"got {grad_out.shape}"
        )

    # MLP
    d_mlp_out = matmul(cache.activated.T, grad_out)
    d_activated = matmul(grad_out, block.mlp_out.T)
    d_pre = d_activated * gelu_grad(cache.pre_act)
    d_mlp_in = matmul(cache.normed.T, d_pre)
    d_normed = matmul(d_pre, block.mlp_in.T)

    # layer norm
    d_y, d_gain, d_bias = _layer_norm_backward(d_normed, cache.xhat,
                                               cache.inv_std, block.ln_gain)

    # residual split
    d_x_low = d_y.copy() if cfg.residual else np.zeros_like(cache.x_low)
    d_attn_out = d_y

    # output projection
    d_w_out = matmul(cache.attn_concat.T, d_attn_out)
    d_concat = matmul(d_attn_out, block.w_out.T)

    # per-head attention
    head_dim = cfg.visual_dim // cfg.heads
    scale = 1.0 / np.sqrt(head_dim)
    d_q = np.empty_like(cache.q)
    d_k = np.empty_like(cache.k)
    d_v = np.empty_like(cache.v)
    for h in range(cfg.heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        p = cache.probs[h]
        d_piece = d_concat[:, cols]
        d_p = matmul(d_piece, cache.v[:, cols].T)
        d_v[:, cols] = matmul(p.T, d_piece)
        # softmax backward, rows independent
        d_scores = p * (d_p - (d_p * p).sum(axis=1, keepdims=True))
        d_scores = d_scores * scale
        d_q[:, cols] = matmul(d_scores, cache.k[:, cols])
        d_k[:, cols] = matmul(d_scores.T, cache.q[:, cols])

    # input projections
    d_w_query = matmul(cache.x_low.T, d_q)
    d_x_low += matmul(d_q, block.w_query.T)
    d_w_key = matmul(cache.x_src.T, d_k)
    d_w_value = matmul(cache.x_src.T, d_v)
    d_src = matmul(d_k, block.w_key.T) + matmul(d_v, block.w_value.T)

    grads = {
        "w_query": d_w_query, "w_key": d_w_key, "w_value": d_w_value,
        "w_out": d_w_out, "ln_gain": d_gain, "ln_bias": d_bias,
        "mlp_in": d_mlp_in, "mlp_out": d_mlp_out,
    }
    if cache.cross:
        grads["x_low"] = d_x_low
        grads["x_high"] = d_src
    else:
        grads["x_low"] = d_x_low + d_src
    return grads


# ---------------------------------------------------------------------------
# conventional baseline projector (concatenation mode)

@dataclass
class ConcatProjector:
    """Layer norm + MLP applied to every visual token independently.

    This is the conventional design the fusion adapter replaces: all N*M_v
    tokens are projected into the decoder width and prepended, so decoder
    context grows with the tile count.
    """

    ln_gain: np.ndarray
    ln_bias: np.ndarray
    mlp_in: np.ndarray
    mlp_out: np.ndarray
    ln_eps: float = 1e-5

    @classmethod
    def initialize(cls, visual_dim: int, decoder_dim: int, hidden: int,
                   rng: np.random.Generator) -> "ConcatProjector":
        lin = lambda fi, fo: rng.normal(0.0, fi ** -0.5, size=(fi, fo))
        return cls(ln_gain=np.ones(visual_dim), ln_bias=np.zeros(visual_dim),
                   mlp_in=lin(visual_dim, hidden), mlp_out=lin(hidden, decoder_dim))

    def project(self, x) -> np.ndarray:
        normed = layer_norm(x, self.ln_gain, self.ln_bias, eps=self.ln_eps)
        return matmul(gelu(matmul(normed, self.mlp_in)), self.mlp_out)
