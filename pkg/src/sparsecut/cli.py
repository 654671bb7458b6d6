"""Command-line front end.

Subcommands:

* pattern    generate or load a shortcut pattern, render and classify it
* forward    run the full pipeline on an image (or a seeded synthetic one)
* flops      analytic cost tables, optionally verified against the counter
* bench      wall-clock microbenchmarks, CSV output
* gradcheck  certify the adapter backward pass against finite differences

Exit codes: 0 success, 1 usage or input error, 2 a check ran and failed
(counter mismatch, gradient threshold, pattern validation). The
SPARSECUT_SEED environment variable overrides the config seed for forward
runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import flops as flops_mod
from . import gradcheck as gradcheck_mod
from .adapter import AdapterBlock, AdapterConfig, fuse, fuse_with_cache, fuse_backward
from .config import RunConfig
from .errors import SparseCutError
from .patching import load_image
from .patterns import PatternSpec, ShortcutSet, classify, generate, render_ascii
from .pipeline import build_model, default_image, run_forward, trace_tensors
from .tensorops import seeded_rng

_ORDER_TOKENS = {"ushape": "u-shape", "u-shape": "u-shape",
                 "aligned": "aligned-depth", "aligned-depth": "aligned-depth"}


def _resolve_seed(cfg_seed: int) -> int:
    env = os.environ.get("SPARSECUT_SEED")
    if env is None:
        return cfg_seed
    try:
        return int(env)
    except ValueError:
        raise SparseCutError(f"SPARSECUT_SEED must be an integer, got {env!r}")


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    seed = _resolve_seed(cfg.seed)
    if seed != cfg.seed:
        cfg = RunConfig.from_mapping({**cfg.__dict__, "seed": seed})
    return cfg


def cmd_pattern(args) -> int:
    if args.file:
        shortcuts = ShortcutSet.load(args.file)
    else:
        spec = PatternSpec(
            order=_ORDER_TOKENS[args.order],
            distribution=args.dist,
            density="dense" if args.dense else "sparse",
            connections=args.sparse,
        )
        shortcuts = generate(spec, args.lv, args.lt)
    print(render_ascii(shortcuts), end="")
    report = classify(shortcuts)
    print(f"order: {report.order_label}")
    print(f"distribution: {report.distribution_label}")
    print(f"density: {report.connection_count}/{shortcuts.encoder_depth} "
          f"({'dense' if report.is_dense else 'sparse'})")
    if report.is_conventional:
        print("this is the conventional single-injection design")
    if args.out:
        shortcuts.save(args.out)
        print(f"written to {args.out}")
    return 0


def cmd_forward(args) -> int:
    cfg = _load_run_config(args)
    model = build_model(cfg)
    if args.image:
        image = load_image(args.image)
    else:
        image = default_image(cfg)
    layers = None
    if args.layers != "all":
        try:
            layers = [int(part) for part in args.layers.split(",") if part]
        except ValueError:
            raise SparseCutError(f"--layers wants 'all' or a comma list, got {args.layers!r}")
    arts = run_forward(model, image, zero_adapter=args.zero_adapter)

    logits = arts.trace.logits
    print(f"seed: {cfg.seed}")
    print(f"pattern: {len(model.shortcuts)} connection(s) "
          f"{tuple(model.shortcuts.connections)}")
    print(f"patches: {arts.bundle.count}  visual tokens: {arts.trace.visual_len}  "
          f"context: {arts.trace.context_length}")
    print(f"logits: shape {logits.shape}  mean {logits.mean():+.6f}  "
          f"std {logits.std():.6f}")
    last = logits[-1]
    print(f"next-token argmax: {int(last.argmax())}  (logit {last.max():+.6f})")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        bin_path, json_path = checkpoint.save_tensors(
            out_dir / "activations", trace_tensors(arts, layers=layers))
        print(f"dump: {bin_path} + {json_path}")
    return 0


def _reference_scenarios() -> list[tuple[str, flops_mod.CostScenario]]:
    full = dict(visual_len=576, text_len=64, encoder_depth=24, encoder_dim=1024,
                decoder_depth=32, decoder_dim=4096, connections=8,
                adapter_hidden=4096)
    return [
        ("low-res, fusion", flops_mod.CostScenario(mode="shortcut", patches=1, **full)),
        ("high-res, fusion", flops_mod.CostScenario(mode="shortcut", patches=5, **full)),
        ("high-res, concatenation", flops_mod.CostScenario(mode="concat", patches=5, **full)),
    ]


def cmd_flops(args) -> int:
    if args.scenario:
        scenarios = [(args.scenario, flops_mod.CostScenario.from_file(args.scenario))]
    else:
        scenarios = _reference_scenarios()
    failed = False
    for name, sc in scenarios:
        print(f"== {name} (mode={sc.mode}, N={sc.patches}) ==")
        print(flops_mod.analytic_flops(sc).format_table())
        if args.verify:
            report = flops_mod.measured_vs_analytic(sc)
            print(report.format_table())
            failed |= not report.all_match
        print()
    if failed:
        print("counter verification FAILED", file=sys.stderr)
        return 2
    return 0


def cmd_bench(args) -> int:
    if args.kind == "attention":
        contexts = [int(part) for part in args.contexts.split(",") if part]
        rows = flops_mod.attention_kernel_bench(contexts, head_dim=args.head_dim,
                                                reps=args.reps)
    else:
        patch_counts = [int(part) for part in args.patches.split(",") if part]
        rows = flops_mod.decoder_patch_sweep_bench(patch_counts, reps=args.reps)
    csv_text = flops_mod.bench_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"written to {args.out}")
    else:
        print(csv_text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = AdapterConfig(visual_dim=args.visual_dim, decoder_dim=args.decoder_dim,
                        heads=args.heads)
    rng = seeded_rng(args.seed, "cli", "gradcheck")
    block = AdapterBlock.initialize(cfg, rng)
    x_low = rng.standard_normal((args.tokens, cfg.visual_dim))
    x_high = (rng.standard_normal((args.high_tokens, cfg.visual_dim))
              if args.high_tokens else None)
    probe = gradcheck_mod.ScalarProbe.for_shape(
        (args.tokens, cfg.decoder_dim), rng)

    params = dict(block.weights())
    params["x_low"] = x_low
    if x_high is not None:
        params["x_high"] = x_high

    def objective(p):
        blk = AdapterBlock.from_weights(cfg, p)
        return probe(fuse(p["x_low"], p.get("x_high"), blk).tokens)

    rebuilt = AdapterBlock.from_weights(cfg, params)
    _, cache = fuse_with_cache(params["x_low"], params.get("x_high"), rebuilt)
    analytic = fuse_backward(probe.grad(), cache, rebuilt)
    numeric = gradcheck_mod.finite_diff(objective, params, eps=args.eps)
    report = gradcheck_mod.compare_gradients(analytic, numeric,
                                             threshold=args.threshold)
    print(f"mode: {'cross' if x_high is not None else 'self'}-attention, "
          f"eps {args.eps:g}")
    print(report.format_table())
    ratio = gradcheck_mod.convergence_ratio(objective, params, analytic,
                                            eps=args.convergence_eps)
    print(f"truncation ratio err(eps)/err(eps/2) at eps={args.convergence_eps:g}: "
          f"{ratio:.2f} (expect about 4)")
    ok = report.passed and 2.5 <= ratio <= 6.0
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsecut",
        description="multi-level shortcut fusion model: patterns, forward runs, "
                    "cost model, benchmarks, gradient certification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pattern", help="generate, load, render, classify patterns")
    p.add_argument("--order", choices=sorted(_ORDER_TOKENS), default="ushape")
    p.add_argument("--dist", choices=["uniform", "bottom", "top"], default="uniform")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sparse", type=int, default=8, metavar="K",
                       help="connection count (default 8)")
    group.add_argument("--dense", action="store_true",
                       help="one connection per encoder layer")
    p.add_argument("--lv", type=int, default=24, help="encoder depth")
    p.add_argument("--lt", type=int, default=32, help="decoder depth")
    p.add_argument("--file", help="load connections from a pattern file instead")
    p.add_argument("--out", help="write the validated pattern to this file")
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("forward", help="run the full pipeline once")
    p.add_argument("--config", help="key = value run config file")
    p.add_argument("--image", help="input image (PPM or raw dump)")
    p.add_argument("--synthetic", action="store_true",
                   help="use the seeded synthetic image (default when no --image)")
    p.add_argument("--zero-adapter", action="store_true",
                   help="zero every shortcut contribution beyond the first injection")
    p.add_argument("--layers", default="all",
                   help="decoder layers to dump: 'all' or e.g. '1,5,9'")
    p.add_argument("--out", help="directory for the activation dump")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("flops", help="analytic cost model tables")
    p.add_argument("--scenario", help="scenario file; default: reference trio")
    p.add_argument("--verify", action="store_true",
                   help="run the instrumented forward pass and compare counts")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="wall-clock microbenchmarks")
    p.add_argument("--kind", choices=["attention", "decoder-patches"],
                   default="attention")
    p.add_argument("--contexts", default="256,512,1024",
                   help="comma list of context lengths (attention bench)")
    p.add_argument("--patches", default="1,5",
                   help="comma list of patch counts (decoder bench)")
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="certify adapter gradients")
    p.add_argument("--visual-dim", type=int, default=6)
    p.add_argument("--decoder-dim", type=int, default=5)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--tokens", type=int, default=3, help="low-res token count")
    p.add_argument("--high-tokens", type=int, default=5,
                   help="high-res token count; 0 for self-attention mode")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--convergence-eps", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; fold into our usage-error code
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except SparseCutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
