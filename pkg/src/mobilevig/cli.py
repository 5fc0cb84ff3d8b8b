"""Command-line surface: model description and counting, property
verification, aggregation benchmarks, and deterministic forward passes with
weight save/load.

Heavy modules are imported inside the command handlers so the bench command
can pin BLAS thread counts through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _positive_int(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def _size_pair(value: str) -> tuple[int, int]:
    if "x" in value:
        h, w = value.split("x", 1)
        return int(h), int(w)
    n = int(value)
    return n, n


def _default_seed() -> int:
    return int(os.environ.get("MVIG_SEED", "0"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobilevig",
        description="MobileViG models, SVGA verification and benchmarking")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="stage table, parameter and MAC counts")
    p.add_argument("--variant", required=True)
    p.add_argument("--size", type=_positive_int, default=224)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", dest="json_path")

    p = sub.add_parser("verify", help="run property suites")
    p.add_argument("--suite", default="all",
                   choices=["all", "oracle", "equivariance", "grad", "knn"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", dest="json_path")

    p = sub.add_parser("bench", help="time the aggregation mechanisms")
    p.add_argument("--mechanism", default="both", choices=["svga", "knn", "both"])
    p.add_argument("--size", type=_size_pair, default=(14, 14),
                   help="spatial size, N or HxW")
    p.add_argument("--channels", type=_positive_int, default=256)
    p.add_argument("--k", type=_positive_int, default=2,
                   help="connection stride of the fixed graph")
    p.add_argument("--knn-k", type=_positive_int, default=9,
                   help="neighbor count for the KNN baseline")
    p.add_argument("--batch", type=_positive_int, default=1)
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--warmup", type=_positive_int, default=10)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--include-projection", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", dest="json_path")
    p.add_argument("--csv", dest="csv_path")

    p = sub.add_parser("forward", help="run a model forward pass")
    p.add_argument("--variant", required=True)
    p.add_argument("--size", type=_positive_int, default=224)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--input", default="random",
                   help="'random' or a path to a binary PPM (P6) image")
    p.add_argument("--save", dest="save_path")
    p.add_argument("--load", dest="load_path")
    p.add_argument("--json", dest="json_path")
    return parser


def _cmd_describe(args) -> int:
    from .arch import build_model, count_macs, count_params, get_variant, stage_resolutions

    cfg = get_variant(args.variant)
    size = args.size
    if size % 32:
        raise ValueError(f"input size must be divisible by 32, got {size}")
    seed = args.seed if args.seed is not None else _default_seed()
    weights = build_model(cfg, seed)
    params = count_params(weights)
    macs = count_macs(cfg, size, size)
    res = stage_resolutions(size, size)

    rows = [("stem", f"{res[0][0]}x{res[0][1]}", "conv3x3 s2 x2", cfg.stage_channels[0], 2)]
    for i in range(3):
        rows.append((f"stage{i + 1}", f"{res[i][0]}x{res[i][1]}", "MBConv",
                     cfg.stage_channels[i], cfg.stage_depths[i]))
    rows.append(("stage4", f"{res[3][0]}x{res[3][1]}", f"SVGA k={cfg.k}",
                 cfg.stage_channels[3], cfg.stage_depths[3]))
    rows.append(("head", "1x1", f"conv1x1 {cfg.head_hidden} + pool + fc",
                 cfg.num_classes, 1))

    print(f"MobileViG-{cfg.name} @ {size}x{size}")
    print(f"{'stage':<8} {'output':>8} {'op':<28} {'channels':>8} {'blocks':>6}")
    for name, out, op, ch, blocks in rows:
        print(f"{name:<8} {out:>8} {op:<28} {ch:>8} {blocks:>6}")
    print(f"params: {params:,} ({params / 1e6:.2f} M)")
    print(f"macs @ {size}: {macs:,} ({macs / 1e9:.3f} G)")

    if args.json_path:
        doc = {
            "variant": cfg.name,
            "input_size": size,
            "params": params,
            "macs": macs,
            "stages": [
                {"name": name, "output": out, "op": op,
                 "channels": ch, "blocks": blocks}
                for name, out, op, ch, blocks in rows
            ],
        }
        with open(args.json_path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    return 0


def _cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = list(SUITES) if args.suite == "all" else [args.suite]
    seed = args.seed if args.seed is not None else _default_seed()
    results = run_suites(names, seed=seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
        if not r.ok:
            print(f"counterexample: {json.dumps(r.counterexample)}", file=sys.stderr)
    if args.json_path:
        doc = {"seed": seed, "suites": [
            {"name": r.name, "ok": r.ok, "detail": r.detail,
             "counterexample": r.counterexample} for r in results]}
        with open(args.json_path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    return 0 if all(r.ok for r in results) else 1


def _cmd_bench(args) -> int:
    from .bench import run_bench

    mechanisms = ["svga", "knn"] if args.mechanism == "both" else [args.mechanism]
    seed = args.seed if args.seed is not None else _default_seed()
    h, w = args.size
    report = run_bench(
        mechanisms, h, w, args.channels, svga_k=args.k, knn_k=args.knn_k,
        batch=args.batch, reps=args.reps, warmup=args.warmup,
        include_projection=args.include_projection, seed=seed,
        threads=args.threads)
    print(f"{'mechanism':<10} {'h':>4} {'w':>4} {'c':>5} {'k':>3} {'batch':>5} "
          f"{'median':>12} {'p10':>12} {'p90':>12}")
    for r in report.records:
        print(f"{r.mechanism:<10} {r.h:>4} {r.w:>4} {r.c:>5} {r.k:>3} {r.batch:>5} "
              f"{r.median_ns / 1e6:>10.3f}ms {r.p10_ns / 1e6:>10.3f}ms "
              f"{r.p90_ns / 1e6:>10.3f}ms")
    if args.json_path:
        report.write_json(args.json_path)
    if args.csv_path:
        report.write_csv(args.csv_path)
    return 0


def load_ppm(path: str):
    """Minimal binary PPM (P6, maxval 255) reader, to a (1, 3, h, w) float32
    tensor scaled to [0, 1]."""
    import numpy as np

    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    if raw.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    img = raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0
    return img[None]


def _cmd_forward(args) -> int:
    import numpy as np

    from .arch import get_variant, build_model, model_forward
    from .weights_io import load_into_model, save_weights

    cfg = get_variant(args.variant)
    seed = args.seed if args.seed is not None else _default_seed()
    if args.load_path:
        weights = load_into_model(args.load_path, cfg)
    else:
        weights = build_model(cfg, seed)
    if args.save_path:
        save_weights(args.save_path, weights)

    if args.input == "random":
        size = args.size
        if size % 32:
            raise ValueError(f"input size must be divisible by 32, got {size}")
        rng = np.random.default_rng([seed, 1])
        x = rng.standard_normal((1, 3, size, size)).astype(np.float32)
    else:
        x = load_ppm(args.input)
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ValueError(
                f"image dims {x.shape[2]}x{x.shape[3]} must be divisible by 32")

    logits = model_forward(x, weights, cfg)
    top = np.argsort(-logits[0], kind="stable")[:5]
    print(f"MobileViG-{cfg.name} forward, input {x.shape[2]}x{x.shape[3]}, seed {seed}")
    for rank, idx in enumerate(top, start=1):
        print(f"  top{rank}: class {int(idx):>4}  logit {float(logits[0, idx]):+.6e}")
    if args.json_path:
        doc = {
            "variant": cfg.name,
            "seed": seed,
            "input": args.input,
            "top5": [[int(i), float(logits[0, i])] for i in top],
            "logits": [[float(v) for v in row] for row in logits],
        }
        with open(args.json_path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    return 0


_COMMANDS = {
    "describe": _cmd_describe,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
    "forward": _cmd_forward,
}


def _pin_threads(argv: list[str]) -> None:
    threads = "1"
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif a.startswith("--threads="):
            threads = a.split("=", 1)[1]
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = threads


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if argv and argv[0] == "bench":
        _pin_threads(argv)  # must happen before numpy is first imported
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
