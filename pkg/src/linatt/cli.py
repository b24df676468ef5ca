"""Command-line interface.

Subcommands:
    bench scaling   time/memory vs sequence length, CSV + figures
    bench latency   per-token decoding time vs position, CSV + figure
    train copy      copy-task training run from a key=value config file
    generate        greedy decoding demo for the three inference modes

When ``--csv`` is given, figures are rendered next to it unless ``--no-plot``
is passed.  Exit code is 0 on success and 2 on any contract violation.
"""

from __future__ import annotations

import os

# Pin kernel execution to one thread for stable timing; must happen before
# numpy is loaded, which is why this module avoids importing the package
# eagerly at the top.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _dims(text: str) -> tuple[int, int, int]:
    parts = _int_list(text)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be D,M,heads")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    from .bench import LATENCY_METHODS, SCALING_METHODS

    parser = argparse.ArgumentParser(prog="linatt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p, latency=False):
        p.add_argument("--repeats", type=int, default=5)
        p.add_argument("--warmup", type=int, default=2)
        p.add_argument("--precision", type=int, choices=(32, 64), default=64)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--csv", type=Path, default=None, help="output CSV path")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering next to the CSV")
        p.add_argument("--memory-budget-mb", type=float, default=4096.0)

    bench = sub.add_parser("bench", help="timing and memory benchmarks")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    scaling = bench_sub.add_parser("scaling", help="time/memory vs sequence length")
    scaling.add_argument("--method", action="append", choices=SCALING_METHODS,
                         help="repeatable; default: softmax, linear-causal")
    scaling.add_argument("--lengths", type=_int_list, default=[512, 1024, 2048, 4096, 8192])
    scaling.add_argument("--dims", type=_dims, default=(16, 16, 1), metavar="D,M,H")
    scaling.add_argument("--batch-mode", choices=("fixed", "inverse"), default="fixed")
    add_shared(scaling)

    latency = bench_sub.add_parser("latency", help="per-token decode time vs position")
    latency.add_argument("--method", action="append", choices=LATENCY_METHODS,
                         help="repeatable; default: all three modes")
    latency.add_argument("--positions", type=_int_list, default=[10, 100, 1000])
    latency.add_argument("--dims", type=_dims, default=(256, 256, 1), metavar="D,M,H")
    add_shared(latency, latency=True)

    train = sub.add_parser("train", help="training runs")
    train_sub = train.add_subparsers(dest="train_command", required=True)
    copy_p = train_sub.add_parser("copy", help="sequence-duplication task")
    copy_p.add_argument("--config", type=Path, required=True,
                        help="flat key=value config file")
    copy_p.add_argument("--csv", type=Path, default=None, help="training report CSV")
    copy_p.add_argument("--no-plot", action="store_true")
    copy_p.add_argument("--quiet", action="store_true")

    gen = sub.add_parser("generate", help="greedy autoregressive decoding demo")
    gen.add_argument("--mode", choices=("linear-rnn", "kv-cache", "naive-recompute"),
                     default="linear-rnn")
    gen.add_argument("--prefix", type=_int_list, required=True, help="comma-separated ids")
    gen.add_argument("--steps", type=int, default=16)
    gen.add_argument("--config", type=Path, default=None,
                     help="optional train-config file describing the model")
    gen.add_argument("--attention", default=None,
                     choices=("softmax", "linear-elu1", "linear-poly2"))
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _emit_records(records, csv_path, plot, kind):
    from .bench import CSV_HEADER, emit_csv

    if csv_path is None:
        print(CSV_HEADER)
        for r in sorted((r for r in records if not r.skipped), key=lambda r: (r.method, r.n)):
            print(f"{r.method},{r.n},{r.time_ms_mean!r},{r.time_ms_std!r},{r.peak_aux_bytes}")
        return
    emit_csv(records, csv_path)
    print(f"wrote {csv_path}")
    if plot:
        from . import plots

        if kind == "scaling":
            fig = plots.plot_scaling(records, csv_path.with_suffix(".png"))
        else:
            fig = plots.plot_latency(records, csv_path.with_suffix(".png"))
        print(f"wrote {fig}")


def _cmd_bench_scaling(args) -> int:
    from .bench import BenchSpec, bench_scaling, loglog_slope

    methods = args.method or ["softmax", "linear-causal"]
    records = []
    for method in methods:
        spec = BenchSpec(
            method=method, lengths=tuple(args.lengths), dims=args.dims,
            repeats=args.repeats, warmup=args.warmup, precision=args.precision,
            seed=args.seed, memory_budget_mb=args.memory_budget_mb,
            batch_mode=args.batch_mode,
        )
        rows = bench_scaling(spec)
        measured = [r for r in rows if not r.skipped]
        if len(measured) >= 2:
            print(f"{method}: log-log slope {loglog_slope(measured):.3f}")
        for r in rows:
            if r.skipped:
                print(f"{method}: N={r.n} skipped (over memory budget)")
        records.extend(rows)
    _emit_records(records, args.csv, not args.no_plot, "scaling")
    return 0


def _cmd_bench_latency(args) -> int:
    from .bench import BenchSpec, bench_latency

    methods = args.method or ["rnn-step", "kv-cache", "naive-recompute"]
    records = []
    for method in methods:
        spec = BenchSpec(
            method=method, dims=args.dims, repeats=args.repeats,
            warmup=args.warmup, precision=args.precision, seed=args.seed,
            memory_budget_mb=args.memory_budget_mb,
        )
        records.extend(bench_latency(spec, positions=tuple(args.positions)))
    _emit_records(records, args.csv, not args.no_plot, "latency")
    return 0


def _cmd_train_copy(args) -> int:
    from .training import parse_config, train_copy_task, write_report_csv

    cfg = parse_config(args.config)
    progress = None if args.quiet else (
        lambda step, loss: print(f"step {step}: loss {loss:.4f}", flush=True)
    )
    report, _model = train_copy_task(cfg, progress=progress)
    if report.failed:
        print("training diverged (NaN loss)", file=sys.stderr)
    else:
        print(f"final loss {report.final_loss:.4f}, "
              f"copied-segment accuracy {report.final_accuracy:.4f}")
    if args.csv is not None:
        write_report_csv(report, args.csv)
        print(f"wrote {args.csv}")
        if not args.no_plot:
            from . import plots

            fig = plots.plot_training(report, args.csv.with_suffix(".png"),
                                      title=f"copy task [{cfg.attention}]")
            print(f"wrote {fig}")
    return 1 if report.failed else 0


def _cmd_generate(args) -> int:
    from .model import Transformer
    from .recurrent import generate
    from .training import CopyTrainConfig, parse_config

    cfg = parse_config(args.config) if args.config else CopyTrainConfig(seed=args.seed)
    if args.attention:
        cfg.attention = args.attention
    cfg.seed = args.seed
    tcfg = cfg.transformer_config()
    tcfg.max_len = max(tcfg.max_len, len(args.prefix) + args.steps)
    model = Transformer(tcfg)
    tokens = generate(model, args.prefix, args.steps, mode=args.mode)
    print(",".join(str(t) for t in tokens))
    return 0


def main(argv=None) -> int:
    from .errors import ContractViolation

    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench" and args.bench_command == "scaling":
            return _cmd_bench_scaling(args)
        if args.command == "bench" and args.bench_command == "latency":
            return _cmd_bench_latency(args)
        if args.command == "train" and args.train_command == "copy":
            return _cmd_train_copy(args)
        if args.command == "generate":
            return _cmd_generate(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
