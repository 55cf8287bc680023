"""Command-line front end.

Subcommands: gen-model, metrics, sample, bench, verify. Exit codes:
0 success, 1 usage or strategy-text problems, 2 file/format/dimension
problems, 3 verification failure, 4 numerical overflow.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    ModelFormatError,
    ModelVersionError,
    NumericalOverflowError,
    StrategyFormatError,
)
from .flow import ModelConfig, gen_synthetic_model, inverse_model_serial
from .metrics import (
    DEFAULT_DOMINANCE_RATIO,
    DEFAULT_METRIC_BATCH,
    MetricReport,
    metric_pass,
    synthetic_data_batch,
)
from .model_io import load_model, save_model
from .samplers import DEFAULT_EBOUND, sample_model, serial_su_evals
from .strategy import format_strategy, parse_strategy
from .tensor_ops import NORM_KINDS
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VERIFY = 3
EXIT_OVERFLOW = 4

BENCH_HEADER = ["strategy", "wall_ns", "su_evals", "max_abs_dev", "speedup",
                "trace_paths"]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="seed for noise and synthetic data (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads for this run")
    common.add_argument("--ebound", type=float, default=DEFAULT_EBOUND,
                        help="mean-square residual early-stop bound (default 1e-8)")
    common.add_argument("--norm", choices=NORM_KINDS, default="spectral",
                        help="matrix norm for metric reports")
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="out_format", action="store_const",
                     const="json", help="print summaries as JSON")
    fmt.add_argument("--csv", dest="out_format", action="store_const",
                     const="csv", help="print summaries as CSV")

    parser = argparse.ArgumentParser(
        prog="gsjflow",
        description="Accelerated inversion of autoregressive coupling flows")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", parents=[common],
                       help="write a synthetic model file")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--scale", type=str, default=None,
                   help="project-out weight scale; scalar or comma list per block")

    p = sub.add_parser("metrics", parents=[common], help="compute the per-block metric report")
    p.add_argument("model", help="model file")
    p.add_argument("--batch", type=int, default=DEFAULT_METRIC_BATCH)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--dominance-ratio", type=float,
                   default=DEFAULT_DOMINANCE_RATIO)
    p.add_argument("--out", default=None, help="write report JSON here")

    p = sub.add_parser("sample", parents=[common], help="invert seeded noise under a strategy")
    p.add_argument("model", help="model file")
    p.add_argument("--strategy", required=True,
                   help="plan text like [6-8-32-10]; 'serial' for the exact loop")
    p.add_argument("--count", type=int, default=4, help="batch size")
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--out", default=None, help="write samples (.npy)")
    p.add_argument("--trace-dir", default=None, help="write per-block trace CSVs")
    p.add_argument("--metrics", dest="metrics_path", default=None,
                   help="metric report JSON (computed on the fly when absent)")
    p.add_argument("--metric-batch", type=int, default=32)

    p = sub.add_parser("bench", parents=[common], help="compare strategies against the serial loop")
    p.add_argument("model", help="model file")
    p.add_argument("--strategies", nargs="+", required=True,
                   help="one or more plan texts")
    p.add_argument("--repeats", type=int, default=5,
                   help="wall time is the median of this many runs")
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--out", default=None, help="write bench CSV here")
    p.add_argument("--trace-dir", default=None)
    p.add_argument("--metrics", dest="metrics_path", default=None)
    p.add_argument("--metric-batch", type=int, default=32)
    p.add_argument("--parallel", action="store_true",
                   help="run strategies concurrently (deviations only; "
                        "wall times lose timing isolation)")

    p = sub.add_parser("verify", parents=[common], help="run module invariant suites")
    p.add_argument("model", nargs="?", default=None,
                   help="model file (built-in synthetic model when absent)")
    p.add_argument("--suite", default="all", choices=["all", *SUITES])
    return parser


def _limit_threads(n: int | None):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load(path: str):
    return load_model(path)


def _resolve_report(args, model, t_len: int) -> MetricReport:
    if args.metrics_path:
        return MetricReport.load(args.metrics_path)
    batch = synthetic_data_batch(model, args.metric_batch, seq_len=t_len,
                                 seed=args.seed + 1)
    return metric_pass(model, batch, norm=args.norm)


def _noise(model, args, t_len: int) -> np.ndarray:
    channels = model.config.channels
    rng = np.random.default_rng(args.seed)
    return rng.standard_normal((args.count, t_len, channels))


def cmd_gen_model(args) -> int:
    scale = None
    if args.scale is not None:
        parts = [float(p) for p in args.scale.split(",")]
        scale = parts[0] if len(parts) == 1 else parts
    cfg = ModelConfig(channels=args.channels, blocks=args.blocks,
                      depth=args.depth, hidden=args.hidden,
                      patch_size=args.patch_size, noise_std=args.noise_std,
                      seq_len=args.seq_len)
    model = gen_synthetic_model(args.seed, cfg, weight_scale=scale)
    save_model(model, args.out)
    print(f"wrote {args.out}: {cfg.blocks} blocks, C={cfg.channels}, "
          f"depth={cfg.depth}, seq_len={cfg.seq_len}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    model = _load(args.model)
    t_len = args.seq_len or model.config.seq_len
    batch = synthetic_data_batch(model, args.batch, seq_len=t_len,
                                 seed=args.seed)
    report = metric_pass(model, batch, dominance_ratio=args.dominance_ratio,
                         norm=args.norm)
    doc = report.to_json_dict()
    if args.out:
        report.save(args.out)
        print(f"wrote {args.out}")
    if args.out_format == "json" or not args.out:
        print(json.dumps(doc, indent=2))
    else:
        for i, bm in enumerate(doc["blocks"]):
            print(f"block {i}: crm={bm['crm']:.4g} ({bm['percent']:.1f}%) "
                  f"igm_z={bm['igm_z']:.4g} igm_z0={bm['igm_z0']:.4g} "
                  f"init={bm['init']}")
        print(f"stack: {doc['stack']}")
    return EXIT_OK


def _write_traces(trace, model, trace_dir: str, tag: str) -> list[str]:
    out = []
    root = Path(trace_dir)
    root.mkdir(parents=True, exist_ok=True)
    for bi in range(len(model.blocks)):
        records = [r for r in trace.records if r.block == bi]
        if not records:
            continue
        path = root / f"{tag}_block{bi}.csv"
        sub = type(trace)()
        sub.records = records
        sub.write_csv_path(path)
        out.append(str(path))
    return out


def cmd_sample(args) -> int:
    model = _load(args.model)
    t_len = args.seq_len or model.config.seq_len
    z = _noise(model, args, t_len)
    if args.strategy.strip() == "serial":
        x = inverse_model_serial(model, z)
        trace = None
        su = len(model.blocks) * serial_su_evals(t_len)
    else:
        strategy = parse_strategy(args.strategy)
        report = _resolve_report(args, model, t_len)
        x, trace = sample_model(model, z, strategy, report=report,
                                ebound=args.ebound)
        su = trace.su_evals
    if args.out:
        np.save(args.out, x)
        print(f"wrote {args.out}")
    if trace is not None and args.trace_dir:
        paths = _write_traces(trace, model, args.trace_dir, "sample")
        print(f"wrote {len(paths)} trace files to {args.trace_dir}")
    print(f"sampled {x.shape[0]}x{x.shape[1]}x{x.shape[2]}; su_evals={su}; "
          f"max|x|={np.abs(x).max():.4g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = _load(args.model)
    t_len = args.seq_len or model.config.seq_len
    z = _noise(model, args, t_len)
    strategies = [parse_strategy(s) for s in args.strategies]
    report = _resolve_report(args, model, t_len)
    repeats = max(1, args.repeats)

    def timed(fn):
        walls = []
        result = None
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            result = fn()
            walls.append(time.perf_counter_ns() - t0)
        return result, int(statistics.median(walls))

    x_serial, serial_wall = timed(lambda: inverse_model_serial(model, z))
    rows = [{
        "strategy": "serial",
        "wall_ns": serial_wall,
        "su_evals": len(model.blocks) * serial_su_evals(t_len),
        "max_abs_dev": 0.0,
        "speedup": 1.0,
        "trace_paths": "",
    }]

    def run_strategy(strategy):
        text = format_strategy(strategy)
        (x, trace), wall = timed(
            lambda: sample_model(model, z, strategy, report=report,
                                 ebound=args.ebound))
        paths = []
        if args.trace_dir:
            paths = _write_traces(trace, model, args.trace_dir,
                                  text.strip("[]").replace("/", "_"))
        return {
            "strategy": text,
            "wall_ns": wall,
            "su_evals": trace.su_evals,
            "max_abs_dev": float(np.abs(x - x_serial).max()),
            "speedup": serial_wall / wall,
            "trace_paths": ";".join(paths),
        }

    if args.parallel:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor() as pool:
            rows.extend(pool.map(run_strategy, strategies))
    else:
        rows.extend(run_strategy(s) for s in strategies)
    print("# desk-scale CPU timings; not comparable to accelerator-cluster "
          "wall clocks", file=sys.stderr)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=BENCH_HEADER)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    if args.out_format == "json":
        print(json.dumps(rows, indent=2))
    else:
        for row in rows:
            print(f"{row['strategy']}: wall={row['wall_ns'] / 1e6:.1f} ms "
                  f"su={row['su_evals']} dev={row['max_abs_dev']:.2e} "
                  f"speedup={row['speedup']:.2f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    model = _load(args.model) if args.model else None
    results = run_suites(args.suite, model=model, seed=args.seed)
    failures = 0
    for r in results:
        mark = "ok  " if r.ok else "FAIL"
        detail = f" {r.detail}" if r.detail else ""
        print(f"{mark} {r.suite}/{r.name} ({r.wall_ns / 1e6:.0f} ms){detail}")
        failures += 0 if r.ok else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_VERIFY


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    handlers = {
        "gen-model": cmd_gen_model,
        "metrics": cmd_metrics,
        "sample": cmd_sample,
        "bench": cmd_bench,
        "verify": cmd_verify,
    }
    limiter = None
    try:
        limiter = _limit_threads(args.threads)
        return handlers[args.command](args)
    except StrategyFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFormatError, ModelVersionError, DimensionMismatchError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalOverflowError as exc:
        print(f"error: numerical overflow: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
