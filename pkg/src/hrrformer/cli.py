"""Command-line entry point: ``hrrformer train|bench|viz|selftest|export``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import HrrformerError, IngestionError

log = logging.getLogger("hrrformer")


def _cmd_train(args) -> int:
    from .train import RunConfig, run_training

    cfg = RunConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = RunConfig.from_dict({**cfg.__dict__, **overrides})
    summary = run_training(cfg)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    from . import bench

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []

    def report(rec):
        wall = "-" if rec.wall_seconds is None else f"{rec.wall_seconds:.4f}s"
        print(f"{rec.model} T={rec.T} batch={rec.batch} {rec.status} {wall} "
              f"peak={rec.peak_bytes} fft={rec.fft_calls}", flush=True)

    mem_limit = None if args.mem_limit is None else int(args.mem_limit * 2 ** 20)
    for model in args.model:
        records += bench.sweep(model, args.t_min, args.t_max, args.h, args.heads, batch=args.batch,
                               reps=args.reps, preset=args.preset, log=report, backward=args.backward,
                               mem_limit=mem_limit, dtype=args.dtype)
    bench.write_csv(records, out / "bench.csv")
    for model, slope in sorted(bench.fit_loglog_slope(records).items()):
        print(f"log-log slope {model}: {slope:.3f}")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def _cmd_viz(args) -> int:
    from .viz import export_weights

    for path in export_weights(args.checkpoint, args.input, args.out):
        print(path)
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import all_passed, run_selftest

    return 0 if all_passed(run_selftest()) else 1


def _cmd_export(args) -> int:
    from .train import RunConfig, build_datasets
    from .tasks import export_jsonl

    cfg = RunConfig.from_file(args.config)
    train, test = build_datasets(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_jsonl(train, out / "train.jsonl")
    export_jsonl(test, out / "test.jsonl")
    print(f"wrote {len(train)} train and {len(test)} test samples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrrformer", description="HRR attention library and harness")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an encoder from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.set_defaults(fn=_cmd_train)

    b = sub.add_parser("bench", help="sequence-length scaling sweep")
    b.add_argument("--model", choices=["hrr", "dot"], action="append", required=True,
                   help="repeat to sweep both models")
    b.add_argument("--t-min", type=int, default=512)
    b.add_argument("--t-max", type=int, default=8192)
    b.add_argument("--h", type=int, default=64, help="embedding width H")
    b.add_argument("--heads", type=int, default=8)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--preset", action="store_true", help="use batch = max(2**(16 - log2 T), 1)")
    b.add_argument("--backward", action="store_true", help="time forward plus backward")
    b.add_argument("--mem-limit", type=float, help="live tensor budget in MiB; beyond it a row is OOM")
    b.add_argument("--dtype", default="f32", choices=["f32", "f64"])
    b.add_argument("--out", default="bench_out")
    b.set_defaults(fn=_cmd_bench)

    v = sub.add_parser("viz", help="export per-head attention weights")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--input", required=True, help="JSONL file; the first sample is used")
    v.add_argument("--out", required=True)
    v.set_defaults(fn=_cmd_viz)

    s = sub.add_parser("selftest", help="algebra, gradient and invariance checks")
    s.set_defaults(fn=_cmd_selftest)

    e = sub.add_parser("export", help="write a config's train/test splits as JSONL")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (HrrformerError, ValueError, IngestionError, FileNotFoundError) as exc:
        print(f"hrrformer {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
