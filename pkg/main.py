"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 failure while running.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from core.config import (NetworkConfig, RunConfig, ShiftSpec, ShuffleSpec, SyntheticTask, TrainConfig,
                         load_run_config, load_settings)
from core.errors import VShuffleError
from core.models import BenchOp, TaskKind
from core.tensor import load_tensor, save_tensor
from modules.bench.report import save_records, to_csv, to_json
from modules.bench.runner import bench_forward, bench_op
from modules.nn.cost import count_flops, format_table, report_to_json
from modules.temporal.ops import inverse_video_shuffle, video_shuffle
from modules.training.gradcheck import grad_check, shuffle_linear_check
from modules.training.trainer import read_history
from modules.visualization import medians_from_records, plot_ablation, plot_history
from pipeline.Ablation import Ablation, read_ablation_records
from pipeline.Experiment import Experiment
from utils.helpers import resolve_threads, set_progress
from utils.logger import Logger

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace('x', ',').split(',') if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vshuffle", description="Video shuffle operators, cost accounting, "
                                                  "toy-scale training and benchmarks.")
    parser.add_argument('--settings', type=Path, help="settings YAML (default: config/config.yaml)")
    parser.add_argument('--quiet', action='store_true', help="no progress bars, warnings only")
    parser.add_argument('--log-level', help="override the configured log level")
    sub = parser.add_subparsers(dest='command', parser_class=_Parser, required=True)

    p = sub.add_parser('shuffle', help="video shuffle (or inverse) of a VST1 tensor file")
    p.add_argument('--in', dest='src', type=Path, required=True)
    p.add_argument('--out', dest='dst', type=Path, required=True)
    p.add_argument('--inverse', action='store_true')
    p.add_argument('--groups', type=int, help="channel groups (default: T)")

    p = sub.add_parser('count', help="parameter and multiply-add report")
    _network_args(p)
    p.add_argument('--json', action='store_true', help="machine-readable output")

    p = sub.add_parser('train', help="train on a synthetic task, one JSON line per epoch")
    p.add_argument('--config', type=Path, help="run config YAML")
    p.add_argument('--preset', help="network preset when no config is given (default: vsn-toy)")
    p.add_argument('--task', choices=[k.value for k in TaskKind])
    p.add_argument('--seed', type=int)
    p.add_argument('--epochs', type=int)
    p.add_argument('--out', type=Path, required=True, help="metrics JSON-lines file")
    p.add_argument('--checkpoint', type=Path, help="write a VSNCKPT1 checkpoint here")
    p.add_argument('--resume', type=Path, help="continue from a VSNCKPT1 checkpoint written by train")
    p.add_argument('--plot', type=Path, help="write training curves (PNG)")

    p = sub.add_parser('bench', help="forward latency of a network, or of one kernel with --op")
    _network_args(p)
    p.add_argument('--op', choices=[o.value for o in BenchOp])
    p.add_argument('--shape', type=_ints, help="N,T,C,H,W for --op")
    p.add_argument('--groups', type=int)
    p.add_argument('--batch', type=int)
    p.add_argument('--iters', type=int)
    p.add_argument('--warmup', type=int)
    p.add_argument('--threads', type=int)
    p.add_argument('--json', action='store_true', help="JSON line instead of CSV")
    p.add_argument('--out', type=Path, help="also write the record (.csv or .jsonl)")

    p = sub.add_parser('gradcheck', help="finite-difference gradient check in float64")
    p.add_argument('--preset', default='vsn-tiny')
    p.add_argument('--tol', type=float, default=1e-4)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--coords', type=int, default=12, help="sampled coordinates per tensor")
    p.add_argument('--shuffle-linear', action='store_true', help="check the shuffle + linear network instead")
    p.add_argument('--json', action='store_true')

    p = sub.add_parser('ablate', help="block-variant, shuffle-count and component ablations")
    p.add_argument('--config', type=Path, help="run config YAML providing train/task sections")
    p.add_argument('--task', choices=[k.value for k in TaskKind])
    p.add_argument('--epochs', type=int)
    p.add_argument('--seeds', type=_ints, default=[0, 1, 2])
    p.add_argument('--groups', default='variant,count,component')
    p.add_argument('--backbone', default='toy')
    p.add_argument('--out', type=Path, required=True, help="records JSON-lines file")
    p.add_argument('--plot', type=Path)

    p = sub.add_parser('plot', help="plot a metrics or ablation JSON-lines file")
    p.add_argument('--metrics', type=Path, required=True)
    p.add_argument('--out', type=Path, required=True)
    return parser


def _network_args(p: argparse.ArgumentParser) -> None:
    p.add_argument('--preset', default='vsn-r50')
    p.add_argument('--config', type=Path, help="network/run config YAML (overrides --preset)")
    p.add_argument('--frames', type=int)
    p.add_argument('--classes', type=int)
    p.add_argument('--input', dest='input_size', type=int)


def _network_config(args) -> NetworkConfig:
    updates = dict(frames=args.frames, classes=args.classes, input_size=args.input_size)
    if args.config:
        base = load_run_config(args.config).network
        return NetworkConfig.model_validate({**base.model_dump(), **{k: v for k, v in updates.items() if v}})
    return NetworkConfig.from_preset(args.preset, **updates)


def _run_shuffle(args, settings) -> int:
    x = load_tensor(args.src)
    spec = ShuffleSpec(t_frames=x.t, channels=x.c, groups=args.groups)
    out = inverse_video_shuffle(x, spec) if args.inverse else video_shuffle(x, spec)
    save_tensor(out, args.dst)
    return EXIT_OK


def _run_count(args, settings) -> int:
    cfg = _network_config(args)
    report = count_flops(cfg)
    name = cfg.preset or str(args.config)
    print(report_to_json(report, name) if args.json else format_table(report, name))
    return EXIT_OK


def _run_config(args) -> RunConfig:
    run = load_run_config(args.config) if args.config else RunConfig(
        network=NetworkConfig.from_preset(getattr(args, 'preset', None) or 'vsn-toy'))
    train, task = run.train, run.task
    if getattr(args, 'seed', None) is not None:
        train = train.model_copy(update={'seed': args.seed})
    if args.epochs is not None:
        train = TrainConfig.model_validate({**train.model_dump(), 'epochs': args.epochs})
    if args.task:
        task = SyntheticTask.model_validate({**task.model_dump(exclude={'num_classes'}), 'kind': args.task})
    return RunConfig(network=run.network, train=train, task=task)


def _run_train(args, settings) -> int:
    Experiment(_run_config(args), args.out, args.checkpoint, args.plot, args.resume).run()
    return EXIT_OK


def _run_bench(args, settings) -> int:
    threads = resolve_threads(args.threads if args.threads is not None else settings.threads)
    iterations = args.iters if args.iters is not None else settings.bench.iterations
    warmup = args.warmup if args.warmup is not None else settings.bench.warmup
    if args.op:
        if not args.shape or len(args.shape) != 5:
            raise UsageError("bench --op needs --shape N,T,C,H,W")
        record = bench_op(BenchOp(args.op), args.shape, iterations, warmup, groups=args.groups,
                          shift_spec=ShiftSpec())
    else:
        batch = args.batch if args.batch is not None else settings.bench.batch
        record = bench_forward(_network_config(args), batch, iterations, warmup, threads)
    sys.stdout.write(to_json(record) + "\n" if args.json else to_csv([record]))
    if args.out:
        save_records([record], args.out)
    return EXIT_OK


def _run_gradcheck(args, settings) -> int:
    if args.shuffle_linear:
        report = shuffle_linear_check(tolerance=args.tol, seed=args.seed)
    else:
        report = grad_check(NetworkConfig.from_preset(args.preset), args.tol, args.seed, max_coords=args.coords)
    if args.json:
        print(json.dumps({'passed': report.passed, 'tolerance': report.tolerance,
                          'max_rel_error': report.max_rel_error,
                          'checks': [dict(c.__dict__, shape=list(c.shape)) for c in report.checks]}))
    else:
        for c in report.checks:
            print(f"{'ok  ' if c.passed else 'FAIL'} {c.name:<32} {'x'.join(map(str, c.shape)):<14} "
                  f"{c.coords_checked:>3} coords  max rel err {c.max_rel_error:.3e}")
        print(f"{'PASS' if report.passed else 'FAIL'}: max rel err {report.max_rel_error:.3e} "
              f"(tolerance {report.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _run_ablate(args, settings) -> int:
    run = _run_config(args)
    groups = [g for g in args.groups.split(',') if g]
    result = Ablation(run.task, run.train, args.seeds, groups, args.backbone).run(args.out)
    for group, arms in result.summary.items():
        print(group + ": " + ", ".join(f"{arm} {100 * acc:.1f}" for arm, acc in arms.items()))
    for check in result.checks:
        print(f"{'pass' if check.passed else 'FAIL'} {check.name}")
    if args.plot:
        plot_ablation(result.summary, args.plot)
    return EXIT_OK


def _run_plot(args, settings) -> int:
    with open(args.metrics, 'r', encoding='utf-8') as f:
        first = json.loads(next((line for line in f if line.strip()), '{}'))
    if 'group' in first:
        plot_ablation(medians_from_records(read_ablation_records(args.metrics)), args.out)
    else:
        plot_history(read_history(args.metrics), args.out, title=args.metrics.stem)
    return EXIT_OK


_COMMANDS = {
    'shuffle': _run_shuffle,
    'count': _run_count,
    'train': _run_train,
    'bench': _run_bench,
    'gradcheck': _run_gradcheck,
    'ablate': _run_ablate,
    'plot': _run_plot,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        settings = load_settings(args.settings)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except (ValidationError, OSError) as e:
        print(f"{parser.format_usage()}vshuffle: error: invalid settings: {e}", file=sys.stderr)
        return EXIT_USAGE

    Logger().configure(args.log_level or settings.logging.level, settings.logging.file)
    logger = Logger.get_logger()
    if args.quiet:
        logger.setLevel('WARNING')
    set_progress(settings.progress and not args.quiet)

    try:
        return _COMMANDS[args.command](args, settings)
    except UsageError as e:
        print(f"{parser.format_usage()}vshuffle: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as e:
        print(f"{parser.format_usage()}vshuffle: error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VShuffleError, OSError, MemoryError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except ValueError as e:
        # preset names and config values rejected before pydantic sees them
        print(f"{parser.format_usage()}vshuffle: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(cli_main(sys.argv[1:]))
