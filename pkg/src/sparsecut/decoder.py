"""Causal decoder with shortcut injection points.

The decoder runs over a joint sequence: a visual prefix followed by the
text tokens. The visual prefix starts as zeros; immediately before each
connected layer j, the fused visual tokens assigned to j are added onto
the current visual slice (a plain residual add, no gate). Layers below the
first connection therefore see a zero visual prefix, and a set containing
only (encoder_depth, 1) reproduces the conventional design where the
visual tokens enter once at the bottom.

Learned absolute positions are added once, at sequence entry. Attention is
causal over the whole joint sequence, so text positions may read every
visual position (the prefix comes first) but never the future.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .patterns import ShortcutSet
from .tensorops import layer_norm, matmul
from .vision import BlockWeights, transformer_block

from .adapter import FusedVisualTokens


@dataclass(frozen=True)
class LlmConfig:
    depth: int
    dim: int
    vocab: int
    heads: int = 4
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"decoder depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(
                f"decoder heads ({self.heads}) must divide dim ({self.dim})"
            )
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.dim


@dataclass
class LlmWeights:
    cfg: LlmConfig
    layers: list[BlockWeights]
    token_embed: np.ndarray    # [vocab, D]
    positional: np.ndarray     # [max context, D]
    ln_final_gain: np.ndarray
    ln_final_bias: np.ndarray
    head: np.ndarray           # [D, vocab]

    @classmethod
    def initialize(cls, cfg: LlmConfig, context: int,
                   rng: np.random.Generator) -> "LlmWeights":
        if context < 1:
            raise ConfigError(f"context must be >= 1, got {context}")
        d = cfg.dim
        return cls(
            cfg=cfg,
            layers=[BlockWeights.initialize(d, cfg.hidden, rng)
                    for _ in range(cfg.depth)],
            token_embed=rng.normal(0.0, d ** -0.5, size=(cfg.vocab, d)),
            positional=rng.normal(0.0, d ** -0.5, size=(context, d)),
            ln_final_gain=np.ones(d),
            ln_final_bias=np.zeros(d),
            head=rng.normal(0.0, d ** -0.5, size=(d, cfg.vocab)),
        )

    def named(self, prefix: str = "decoder") -> dict[str, np.ndarray]:
        out = {
            f"{prefix}.token_embed": self.token_embed,
            f"{prefix}.positional": self.positional,
            f"{prefix}.ln_final_gain": self.ln_final_gain,
            f"{prefix}.ln_final_bias": self.ln_final_bias,
            f"{prefix}.head": self.head,
        }
        for idx, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{idx + 1:02d}"))
        return out


def embed_text(token_ids, weights: LlmWeights) -> np.ndarray:
    """Look up [M_t, D] embeddings; ids must be inside the vocabulary."""
    ids = np.asarray(token_ids)
    if ids.ndim != 1:
        raise ShapeError(f"token ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weights.cfg.vocab):
        raise ConfigError(
            f"token ids must lie in [0, {weights.cfg.vocab}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    return weights.token_embed[ids]


def inject(z_prev, z_shortcut=None) -> np.ndarray:
    """The layer-entry rule: add the shortcut state, or pass through.

    With no shortcut the input array itself is returned, unchanged and
    uncopied, so the disconnected case is bit-exact by construction.
    """
    if z_shortcut is None:
        return z_prev
    z_shortcut = np.asarray(z_shortcut, dtype=np.float64)
    if z_prev.shape != z_shortcut.shape:
        raise ShapeError(
            f"shortcut state {z_shortcut.shape} does not match layer input "
            f"{z_prev.shape}"
        )
    return z_prev + z_shortcut


@dataclass
class DecoderTrace:
    """Per-layer states of one forward pass.

    Lists are indexed by layer (entry 0 is layer 1). visual_in[k] is the
    visual slice after injection, before the layer runs; visual_out[k] and
    text_out[k] are the slices of the layer's output. final_hidden is the
    full joint state after the last layer, before the final norm; logits
    stays None until computed from it.
    """

    visual_len: int
    visual_in: list[np.ndarray] = field(default_factory=list)
    visual_out: list[np.ndarray] = field(default_factory=list)
    text_out: list[np.ndarray] = field(default_factory=list)
    final_hidden: np.ndarray | None = None
    logits: np.ndarray | None = None

    @property
    def context_length(self) -> int:
        return self.final_hidden.shape[0] if self.final_hidden is not None else 0


def compute_logits(trace: DecoderTrace, weights: LlmWeights) -> np.ndarray:
    """Final norm plus output head over the recorded final hidden state."""
    if trace.final_hidden is None:
        raise ConfigError("trace holds no final hidden state")
    normed = layer_norm(trace.final_hidden, weights.ln_final_gain,
                        weights.ln_final_bias, eps=weights.cfg.ln_eps)
    trace.logits = matmul(normed, weights.head)
    return trace.logits


def decode_forward(fused: dict[int, FusedVisualTokens],
                   shortcuts: ShortcutSet,
                   text_tokens: np.ndarray,
                   weights: LlmWeights,
                   with_logits: bool = True) -> DecoderTrace:
    """Run the decoder over [visual prefix; text] with shortcut injection.

    fused maps decoder layer -> fused visual tokens and must cover exactly
    the connected layers of the shortcut set. text_tokens is the embedded
    prompt [M_t, D]. The visual prefix length is taken from the fused
    entries (they must agree); an empty shortcut set degenerates to a pure
    text decoder with a zero-length prefix.
    """
    cfg = weights.cfg
    if len(weights.layers) != cfg.depth:
        raise ConfigError(
            f"weights hold {len(weights.layers)} layers, config says {cfg.depth}"
        )
    if shortcuts.decoder_depth != cfg.depth:
        raise ConfigError(
            f"pattern targets a {shortcuts.decoder_depth}-layer decoder, "
            f"model has {cfg.depth}"
        )
    sources = shortcuts.sources()
    if set(fused) != set(sources):
        raise ConfigError(
            f"fused states cover layers {sorted(fused)}, pattern connects "
            f"{sorted(sources)}"
        )
    text_tokens = np.asarray(text_tokens, dtype=np.float64)
    if text_tokens.ndim != 2 or text_tokens.shape[1] != cfg.dim:
        raise ShapeError(f"text tokens must be [M_t, {cfg.dim}], got {text_tokens.shape}")

    lengths = {f.tokens.shape[0] for f in fused.values()}
    if len(lengths) > 1:
        raise ShapeError(f"fused states disagree on token count: {sorted(lengths)}")
    visual_len = lengths.pop() if lengths else 0
    for j, f in fused.items():
        if f.tokens.shape[1] != cfg.dim:
            raise ShapeError(
                f"fused tokens for layer {j} have width {f.tokens.shape[1]}, "
                f"decoder dim is {cfg.dim}"
            )

    context = visual_len + text_tokens.shape[0]
    if weights.positional.shape[0] < context:
        raise ConfigError(
            f"positional table holds {weights.positional.shape[0]} rows, "
            f"context needs {context}"
        )

    state = np.concatenate(
        [np.zeros((visual_len, cfg.dim)), text_tokens], axis=0
    ) + weights.positional[:context]

    trace = DecoderTrace(visual_len=visual_len)
    for j in range(1, cfg.depth + 1):
        if j in fused:
            state = state.copy()
            state[:visual_len] = inject(state[:visual_len], fused[j].tokens)
        trace.visual_in.append(state[:visual_len].copy())
        state = transformer_block(state, weights.layers[j - 1], cfg.heads,
                                  cfg.ln_eps, causal=True)
        trace.visual_out.append(state[:visual_len].copy())
        trace.text_out.append(state[visual_len:].copy())
    trace.final_hidden = state
    if with_logits:
        compute_logits(trace, weights)
    return trace
