"""End-to-end wiring: config -> weights -> forward pass artifacts.

Weight streams are derived from the run seed by name, and adapter streams
are additionally keyed by their connection (i, j). Two runs that share a
seed therefore share every weight that their configurations have in
common; in particular, the adapter on a given connection is identical no
matter which other connections exist, which is what makes the zeroed-run
equivalence check meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import AdapterBlock, AdapterConfig, FusedVisualTokens, fuse
from .config import RunConfig
from .decoder import DecoderTrace, LlmConfig, LlmWeights, decode_forward, embed_text
from .errors import ConfigError
from .patching import EmbedderWeights, PatchBundle, build_bundle, embed_bundle, synthetic_image
from .patterns import PatternSpec, ShortcutSet, generate
from .tensorops import seeded_rng
from .vision import VitActivations, VitConfig, VitWeights, vit_forward


@dataclass
class ModelBundle:
    cfg: RunConfig
    shortcuts: ShortcutSet
    embedder: EmbedderWeights
    encoder: VitWeights
    adapters: dict[tuple[int, int], AdapterBlock]
    decoder: LlmWeights


def resolve_pattern(cfg: RunConfig) -> ShortcutSet:
    if cfg.pattern_file is not None:
        s = ShortcutSet.load(cfg.pattern_file)
        if s.encoder_depth != cfg.encoder_depth or s.decoder_depth != cfg.decoder_depth:
            raise ConfigError(
                f"pattern file is for {s.encoder_depth}/{s.decoder_depth} layers, "
                f"config says {cfg.encoder_depth}/{cfg.decoder_depth}"
            )
        return s
    spec = PatternSpec(order=cfg.pattern_order,
                       distribution=cfg.pattern_distribution,
                       density=cfg.pattern_density,
                       connections=cfg.pattern_connections)
    return generate(spec, cfg.encoder_depth, cfg.decoder_depth)


def build_model(cfg: RunConfig) -> ModelBundle:
    """Allocate every weight tensor from named, seed-derived rng streams."""
    shortcuts = resolve_pattern(cfg)
    vit_cfg = VitConfig(depth=cfg.encoder_depth, dim=cfg.encoder_dim,
                        heads=cfg.encoder_heads, mlp_ratio=cfg.encoder_mlp_ratio)
    llm_cfg = LlmConfig(depth=cfg.decoder_depth, dim=cfg.decoder_dim,
                        heads=cfg.decoder_heads, mlp_ratio=cfg.decoder_mlp_ratio,
                        vocab=cfg.vocab)
    adapter_cfg = AdapterConfig(visual_dim=cfg.encoder_dim,
                                decoder_dim=cfg.decoder_dim,
                                heads=cfg.adapter_heads,
                                mlp_hidden=cfg.adapter_hidden)
    embedder = EmbedderWeights.initialize(
        cfg.base_resolution, cfg.patch_size, cfg.channels, cfg.encoder_dim,
        seeded_rng(cfg.seed, "embedder"))
    encoder = VitWeights.initialize(vit_cfg, seeded_rng(cfg.seed, "encoder"))
    adapters = {
        (i, j): AdapterBlock.initialize(adapter_cfg,
                                        seeded_rng(cfg.seed, "adapter", i, j))
        for i, j in shortcuts
    }
    context = cfg.visual_len + cfg.text_len
    decoder = LlmWeights.initialize(llm_cfg, context, seeded_rng(cfg.seed, "decoder"))
    return ModelBundle(cfg=cfg, shortcuts=shortcuts, embedder=embedder,
                       encoder=encoder, adapters=adapters, decoder=decoder)


def default_image(cfg: RunConfig) -> np.ndarray:
    """Seeded synthetic input at twice the high-res working size."""
    size = 2 * cfg.tiles * cfg.base_resolution
    return synthetic_image(size, seeded_rng(cfg.seed, "image"), channels=cfg.channels)


def default_token_ids(cfg: RunConfig) -> np.ndarray:
    return seeded_rng(cfg.seed, "text").integers(0, cfg.vocab, size=cfg.text_len)


@dataclass
class ForwardArtifacts:
    bundle: PatchBundle
    embedded: np.ndarray           # [N, M_v, D_v]
    activations: VitActivations
    fused: dict[int, FusedVisualTokens]
    token_ids: np.ndarray
    trace: DecoderTrace


def fuse_all(model: ModelBundle, activations: VitActivations,
             zero_beyond_first: bool = False) -> dict[int, FusedVisualTokens]:
    """Run every connection's adapter over its tapped encoder state.

    The tapped state [N, M_v, D_v] is split into the low-res view (patch 0)
    and the flattened tile tokens (the rest); single-patch runs fall back
    to self-attention fusion. With zero_beyond_first, every connection
    except the lowest decoder entry contributes exact zeros, which reduces
    the run to the conventional single-injection design.
    """
    fused: dict[int, FusedVisualTokens] = {}
    first = model.shortcuts.first_entry_layer() if len(model.shortcuts) else None
    for (i, j) in model.shortcuts:
        if zero_beyond_first and j != first:
            rows = activations.states[i].shape[1]
            fused[j] = FusedVisualTokens(
                tokens=np.zeros((rows, model.cfg.decoder_dim)), source_layer=i)
            continue
        tapped = activations.states[i]
        x_low = tapped[0]
        x_high = tapped[1:].reshape(-1, tapped.shape[2]) if tapped.shape[0] > 1 else None
        fused[j] = fuse(x_low, x_high, model.adapters[(i, j)], source_layer=i)
    return fused


def run_forward(model: ModelBundle, image: np.ndarray,
                token_ids: np.ndarray | None = None,
                zero_adapter: bool = False) -> ForwardArtifacts:
    cfg = model.cfg
    if token_ids is None:
        token_ids = default_token_ids(cfg)
    bundle = build_bundle(image, cfg.base_resolution, tiles=cfg.tiles,
                          high_res=cfg.high_res)
    embedded = embed_bundle(bundle, model.embedder)
    activations = vit_forward(embedded, model.encoder)
    fused = fuse_all(model, activations, zero_beyond_first=zero_adapter)
    text = embed_text(np.asarray(token_ids), model.decoder)
    trace = decode_forward(fused, model.shortcuts, text, model.decoder)
    return ForwardArtifacts(bundle=bundle, embedded=embedded,
                            activations=activations, fused=fused,
                            token_ids=np.asarray(token_ids), trace=trace)


def trace_tensors(artifacts: ForwardArtifacts,
                  layers: list[int] | None = None) -> dict[str, np.ndarray]:
    """Flatten a forward run into named tensors for the dump format.

    layers selects decoder layers (1-based); None means all. Fused states,
    the final hidden state, and the logits are always included.
    """
    trace = artifacts.trace
    depth = len(trace.visual_out)
    wanted = set(range(1, depth + 1)) if layers is None else set(layers)
    bad = wanted - set(range(1, depth + 1))
    if bad:
        raise ConfigError(f"no such decoder layers: {sorted(bad)}")
    out: dict[str, np.ndarray] = {}
    for j, f in sorted(artifacts.fused.items()):
        out[f"fused.layer{j:02d}"] = f.tokens
    for j in sorted(wanted):
        out[f"decoder.layer{j:02d}.visual_in"] = trace.visual_in[j - 1]
        out[f"decoder.layer{j:02d}.visual_out"] = trace.visual_out[j - 1]
        out[f"decoder.layer{j:02d}.text_out"] = trace.text_out[j - 1]
    out["final.hidden"] = trace.final_hidden
    out["final.logits"] = trace.logits
    return out


def model_tensors(model: ModelBundle) -> dict[str, np.ndarray]:
    """Every weight in the model under a stable name, for checkpointing."""
    out = model.embedder.named("embedder")
    out.update(model.encoder.named("encoder"))
    for (i, j), block in sorted(model.adapters.items(), key=lambda kv: kv[0][1]):
        prefix = f"adapter.enc{i:02d}_dec{j:02d}"
        for name, tensor in block.weights().items():
            out[f"{prefix}.{name}"] = tensor
    out.update(model.decoder.named("decoder"))
    return out
