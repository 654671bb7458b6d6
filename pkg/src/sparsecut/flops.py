"""Analytic computational cost model, certified against instrumentation.

Costs are stated in FLOPs with the 2-FLOPs-per-MAC convention; internally
everything is exact integer MAC arithmetic. Only matrix products are
counted, on both sides of the comparison: softmax, normalization,
activations, and residual adds are excluded from the analytic formulas and
invisible to the counter alike, so analytic and measured counts must agree
exactly, not approximately.

Per-component MACs, with N patches of M_v tokens each, encoder width D_v,
ratio r_v, decoder width D_t, ratio r_t, decoder context C:

* encoder, per layer per patch: 4 M_v D_v^2 (q/k/v/out) + 2 M_v^2 D_v
  (scores, weighted sum) + 2 r_v M_v D_v^2 (MLP)
* fusion adapter, per connection: M_v D_v^2 (queries) + 2 K D_v^2
  (keys, values over K context tokens) + 2 M_v K D_v (attention)
  + M_v D_v^2 (output) + M_v (D_v H + H D_t) (MLP); K is (N-1) M_v with
  tiles present, else M_v
* concat projector: N M_v (D_v H + H D_t), attention-free
* decoder, per layer: 4 C D_t^2 + 2 C^2 D_t + 2 r_t C D_t^2

The decoder context is where the two modes part ways: fusion keeps
C = M_v + M_t regardless of N, concatenation pays C = N M_v + M_t.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .adapter import AdapterBlock, AdapterConfig, ConcatProjector, FusedVisualTokens, fuse
from .config import parse_kv_text
from .decoder import LlmConfig, LlmWeights, compute_logits, decode_forward
from .errors import ConfigError
from .patterns import PatternSpec, ShortcutSet, generate
from .tensorops import MacCounter, counting, seeded_rng
from .vision import VitConfig, VitWeights, vit_forward

MODES = ("shortcut", "concat")


@dataclass(frozen=True)
class CostScenario:
    """One architecture point to cost out.

    mode 'shortcut' fuses into M_v tokens through the per-connection
    adapters; mode 'concat' projects all N * M_v tokens and prepends them.
    Dimensions default to zero-cost-free toy values only where harmless;
    everything load-bearing is explicit.
    """

    mode: str
    patches: int
    visual_len: int
    text_len: int
    encoder_depth: int
    encoder_dim: int
    decoder_depth: int
    decoder_dim: int
    encoder_mlp_ratio: int = 4
    decoder_mlp_ratio: int = 4
    connections: int = 8
    adapter_hidden: int | None = None  # None: 4 * encoder_dim
    encoder_heads: int = 1
    decoder_heads: int = 1
    adapter_heads: int = 1
    vocab: int = 97

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.patches < 1:
            raise ConfigError(f"patches must be >= 1, got {self.patches}")
        for name in ("visual_len", "text_len", "encoder_depth", "encoder_dim",
                     "decoder_depth", "decoder_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mode == "shortcut" and not (
                1 <= self.connections <= min(self.encoder_depth, self.decoder_depth)):
            raise ConfigError(
                f"connections must lie in [1, "
                f"{min(self.encoder_depth, self.decoder_depth)}], got {self.connections}"
            )

    @property
    def hidden(self) -> int:
        return self.adapter_hidden if self.adapter_hidden is not None else 4 * self.encoder_dim

    @property
    def context_length(self) -> int:
        if self.mode == "concat":
            return self.patches * self.visual_len + self.text_len
        return self.visual_len + self.text_len

    @classmethod
    def from_mapping(cls, mapping: dict) -> "CostScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**mapping)

    @classmethod
    def from_file(cls, path) -> "CostScenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_mapping(parse_kv_text(text))


@dataclass(frozen=True)
class CostReport:
    """FLOPs per component plus the decoder context they imply."""

    encoder_flops: int
    adapter_flops: int
    decoder_attention_flops: int
    decoder_mlp_flops: int
    total_flops: int
    context_length: int

    def format_table(self) -> str:
        rows = [
            ("encoder", self.encoder_flops),
            ("adapter", self.adapter_flops),
            ("decoder attention", self.decoder_attention_flops),
            ("decoder mlp", self.decoder_mlp_flops),
            ("total", self.total_flops),
        ]
        lines = [f"context length: {self.context_length} tokens"]
        for name, flops in rows:
            lines.append(f"{name:<18} {flops:>18,}  ({flops / 1e12:8.3f} TFLOPs)")
        return "\n".join(lines)


def encoder_macs(sc: CostScenario) -> int:
    m, d, r = sc.visual_len, sc.encoder_dim, sc.encoder_mlp_ratio
    per_patch_layer = 4 * m * d * d + 2 * m * m * d + 2 * r * m * d * d
    return sc.encoder_depth * sc.patches * per_patch_layer


def adapter_macs(sc: CostScenario) -> int:
    m, d, dt, h = sc.visual_len, sc.encoder_dim, sc.decoder_dim, sc.hidden
    if sc.mode == "concat":
        return sc.patches * m * (d * h + h * dt)
    k = (sc.patches - 1) * m if sc.patches > 1 else m
    per_connection = (2 * m * d * d          # query and output projections
                      + 2 * k * d * d        # key and value projections
                      + 2 * m * k * d        # scores and weighted sum
                      + m * (d * h + h * dt))
    return sc.connections * per_connection


def decoder_attention_macs(sc: CostScenario) -> int:
    c, d = sc.context_length, sc.decoder_dim
    return sc.decoder_depth * (4 * c * d * d + 2 * c * c * d)


def decoder_mlp_macs(sc: CostScenario) -> int:
    c, d, r = sc.context_length, sc.decoder_dim, sc.decoder_mlp_ratio
    return sc.decoder_depth * 2 * r * c * d * d


def head_macs(sc: CostScenario) -> int:
    # output head, outside CostReport: reported separately by the
    # instrumented comparison
    return sc.context_length * sc.decoder_dim * sc.vocab


def analytic_flops(sc: CostScenario) -> CostReport:
    enc = 2 * encoder_macs(sc)
    ada = 2 * adapter_macs(sc)
    att = 2 * decoder_attention_macs(sc)
    mlp = 2 * decoder_mlp_macs(sc)
    return CostReport(
        encoder_flops=enc, adapter_flops=ada,
        decoder_attention_flops=att, decoder_mlp_flops=mlp,
        total_flops=enc + ada + att + mlp,
        context_length=sc.context_length,
    )


# ---------------------------------------------------------------------------
# instrumented verification

@dataclass(frozen=True)
class ComponentDelta:
    name: str
    analytic_macs: int
    measured_macs: int

    @property
    def matches(self) -> bool:
        return self.analytic_macs == self.measured_macs


@dataclass(frozen=True)
class VerificationReport:
    scenario: CostScenario
    deltas: tuple[ComponentDelta, ...]

    @property
    def all_match(self) -> bool:
        return all(d.matches for d in self.deltas)

    def format_table(self) -> str:
        lines = [f"{'component':<12} {'analytic MACs':>16} {'measured MACs':>16}  ok"]
        for d in self.deltas:
            mark = "yes" if d.matches else "NO"
            lines.append(f"{d.name:<12} {d.analytic_macs:>16,} {d.measured_macs:>16,}  {mark}")
        return "\n".join(lines)


def _toy_model_pieces(sc: CostScenario, seed: int):
    vit_cfg = VitConfig(depth=sc.encoder_depth, dim=sc.encoder_dim,
                        heads=sc.encoder_heads, mlp_ratio=sc.encoder_mlp_ratio)
    llm_cfg = LlmConfig(depth=sc.decoder_depth, dim=sc.decoder_dim,
                        heads=sc.decoder_heads, mlp_ratio=sc.decoder_mlp_ratio,
                        vocab=sc.vocab)
    encoder = VitWeights.initialize(vit_cfg, seeded_rng(seed, "flops", "encoder"))
    decoder = LlmWeights.initialize(llm_cfg, sc.context_length,
                                    seeded_rng(seed, "flops", "decoder"))
    x0 = seeded_rng(seed, "flops", "x0").standard_normal(
        (sc.patches, sc.visual_len, sc.encoder_dim))
    text = seeded_rng(seed, "flops", "text").standard_normal(
        (sc.text_len, sc.decoder_dim))
    return encoder, decoder, x0, text


def measured_vs_analytic(sc: CostScenario, seed: int = 0) -> VerificationReport:
    """Run the actual forward pass under the counter, phase by phase.

    The analytic model and the instrumented model must agree MAC for MAC;
    any mismatch means one of them misdescribes the architecture. The
    output head is verified as its own component since the cost report
    proper covers encoder, adapter, and decoder layers.
    """
    encoder, decoder, x0, text = _toy_model_pieces(sc, seed)

    enc_counter, ada_counter, dec_counter, head_counter = (
        MacCounter() for _ in range(4))

    with counting(enc_counter):
        acts = vit_forward(x0, encoder)

    if sc.mode == "shortcut":
        shortcuts = generate(PatternSpec(connections=sc.connections),
                             sc.encoder_depth, sc.decoder_depth)
        adapter_cfg = AdapterConfig(visual_dim=sc.encoder_dim,
                                    decoder_dim=sc.decoder_dim,
                                    heads=sc.adapter_heads,
                                    mlp_hidden=sc.adapter_hidden)
        fused: dict[int, FusedVisualTokens] = {}
        with counting(ada_counter):
            for i, j in shortcuts:
                block = AdapterBlock.initialize(
                    adapter_cfg, seeded_rng(seed, "flops", "adapter", i, j))
                tapped = acts.states[i]
                x_low = tapped[0]
                x_high = (tapped[1:].reshape(-1, sc.encoder_dim)
                          if sc.patches > 1 else None)
                fused[j] = fuse(x_low, x_high, block, source_layer=i)
    else:
        shortcuts = ShortcutSet(connections=((sc.encoder_depth, 1),),
                                encoder_depth=sc.encoder_depth,
                                decoder_depth=sc.decoder_depth)
        projector = ConcatProjector.initialize(
            sc.encoder_dim, sc.decoder_dim, sc.hidden,
            seeded_rng(seed, "flops", "projector"))
        flat = acts.final.reshape(-1, sc.encoder_dim)
        with counting(ada_counter):
            projected = projector.project(flat)
        fused = {1: FusedVisualTokens(tokens=projected,
                                      source_layer=sc.encoder_depth)}

    with counting(dec_counter):
        trace = decode_forward(fused, shortcuts, text, decoder, with_logits=False)
    with counting(head_counter):
        compute_logits(trace, decoder)

    report = analytic_flops(sc)
    deltas = (
        ComponentDelta("encoder", report.encoder_flops // 2, enc_counter.count),
        ComponentDelta("adapter", report.adapter_flops // 2, ada_counter.count),
        ComponentDelta("decoder",
                       (report.decoder_attention_flops + report.decoder_mlp_flops) // 2,
                       dec_counter.count),
        ComponentDelta("head", head_macs(sc), head_counter.count),
    )
    return VerificationReport(scenario=sc, deltas=deltas)


# ---------------------------------------------------------------------------
# wall-clock benchmarks

@dataclass(frozen=True)
class BenchRow:
    label: str
    context: int
    median_seconds: float


def _median_time(fn, reps: int, warmup: int = 2) -> float:
    import time
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def attention_kernel_bench(contexts, head_dim: int = 64, reps: int = 9,
                           seed: int = 0) -> list[BenchRow]:
    """Median wall time of the projection-free attention kernel vs context.

    The kernel (scores + softmax + weighted sum) is Theta(C^2 d), so
    doubling C should land near 4x once C is large enough for the
    quadratic term to dominate. BLAS threading is pinned to one thread so
    the scaling is not confounded by parallel speedup kicking in at larger
    sizes.
    """
    from threadpoolctl import threadpool_limits

    from .tensorops import scaled_dot_attention

    rng = seeded_rng(seed, "bench", "attention")
    rows = []
    with threadpool_limits(limits=1):
        for c in contexts:
            q = rng.standard_normal((c, head_dim))
            k = rng.standard_normal((c, head_dim))
            v = rng.standard_normal((c, head_dim))
            rows.append(BenchRow(
                label="attention",
                context=int(c),
                median_seconds=_median_time(
                    lambda q=q, k=k, v=v: scaled_dot_attention(q, k, v, causal=True),
                    reps=reps),
            ))
    return rows


def decoder_patch_sweep_bench(patch_counts, visual_len: int = 16,
                              text_len: int = 8, depth: int = 8, dim: int = 64,
                              reps: int = 7, seed: int = 0) -> list[BenchRow]:
    """Decoder wall time across patch counts at fixed M_v, fusion mode.

    The fused visual prefix is M_v tokens no matter how many tiles fed the
    adapter, so the decoder's work should be flat in N. Each N builds its
    own fused states through a real adapter pass; only decode_forward is
    timed.
    """
    from threadpoolctl import threadpool_limits

    from .adapter import AdapterConfig as ACfg

    rows = []
    with threadpool_limits(limits=1):
        for n in patch_counts:
            sc = CostScenario(mode="shortcut", patches=int(n),
                              visual_len=visual_len, text_len=text_len,
                              encoder_depth=4, encoder_dim=32,
                              decoder_depth=depth, decoder_dim=dim,
                              connections=2, encoder_heads=2, decoder_heads=2)
            encoder, decoder, x0, text = _toy_model_pieces(sc, seed)
            shortcuts = generate(PatternSpec(connections=sc.connections),
                                 sc.encoder_depth, sc.decoder_depth)
            acts = vit_forward(x0, encoder)
            adapter_cfg = ACfg(visual_dim=sc.encoder_dim, decoder_dim=sc.decoder_dim)
            fused = {}
            for i, j in shortcuts:
                block = AdapterBlock.initialize(
                    adapter_cfg, seeded_rng(seed, "bench", "adapter", i, j))
                tapped = acts.states[i]
                x_high = (tapped[1:].reshape(-1, sc.encoder_dim)
                          if sc.patches > 1 else None)
                fused[j] = fuse(tapped[0], x_high, block, source_layer=i)
            rows.append(BenchRow(
                label=f"decoder_n{n}",
                context=sc.context_length,
                median_seconds=_median_time(
                    lambda: decode_forward(fused, shortcuts, text, decoder,
                                           with_logits=False),
                    reps=reps),
            ))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["label", "context", "median_seconds"])
    for row in rows:
        writer.writerow([row.label, row.context, f"{row.median_seconds:.9f}"])
    return buf.getvalue()
