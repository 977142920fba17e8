"""``tiedlab`` command line: summary | verify | bench | train.

Exit codes: 0 success, 1 verification failure, 2 usage, parse or validation error.
"""

import argparse
import os
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError, InputError, ShapeError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def default_seed():
    try:
        return int(os.environ.get("TIEDLAB_SEED", "0"))
    except ValueError:
        return 0


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def resolve_config(path):
    """A config path, falling back to the bundled configs by file name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("tiedlab") / "configs" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file not found: {path}")


def _load(path):
    from .config import load_config

    return load_config(resolve_config(path))


def _write(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_summary(args):
    from .accounting import model_report

    config = _load(args.config)
    baseline = _load(args.baseline) if args.baseline else None
    shape = None
    if args.input_shape:
        shape = tuple(args.input_shape)
        if len(shape) == 3:
            shape = (1, *shape)
    report = model_report(config, shape, baseline)
    if args.csv:
        _write(report.to_csv(flops=args.flops), args.csv)
    if args.csv != "-":
        sys.stdout.write(report.to_text(flops=args.flops))
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite

    print(f"tiedlab verify suite={args.suite} seeds={args.seeds} seed={args.seed}")
    results = run_suite(args.suite, args.seeds, args.seed)
    for result in results:
        for line in result.lines():
            print(line)
    failed = sum(not r.ok for r in results)
    print(f"{'OK' if not failed else 'FAILED'}: {len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_bench(args):
    from .bench import bench_tbc, fast_direct_ratios, rows_to_csv

    if args.op != "tbc":
        raise InputError(f"unsupported op {args.op!r}")
    for b in args.b_list:
        if b < 1 or args.c % b:
            raise ShapeError(f"c={args.c} is not divisible by B={b}")
    rows = bench_tbc(args.paths, args.c, args.b_list, args.hw, args.reps, args.batch, seed=args.seed)
    _write(rows_to_csv(rows), args.csv)
    for b, ratio in fast_direct_ratios(rows).items():
        print(f"B={b} c={args.c} hw={args.hw}: fast/direct time ratio {ratio:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    from .model import build
    from .trainer import generate_dataset, train

    config = _load(args.config)
    model = build(config)
    data = generate_dataset(args.seed, args.n)
    print(f"tiedlab train config={config.name} seed={args.seed} n={args.n} epochs={args.epochs} "
          f"lr={args.lr} momentum={args.momentum} batch={args.batch} params={model.num_params()}")
    result = train(model, data, args.epochs, args.lr, args.momentum, args.batch, args.seed)
    if args.csv:
        Path(args.csv).write_text(result.to_csv())
    print(result.summary_line())
    print(f"holdout accuracy: {result.final_holdout_acc:.4f}")
    print(f"wall time: {result.wall_time:.2f}s", file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="tiedlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="per-layer parameter / MAC table")
    p.add_argument("config")
    p.add_argument("--input-shape", type=_int_list, help="n,c,h,w or c,h,w (default 1 x config input)")
    p.add_argument("--baseline", help="untied config to compare against")
    p.add_argument("--csv", help="write CSV to this path ('-' for stdout)")
    p.add_argument("--flops", action="store_true", help="report FLOPs (2 x MACs)")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("verify", help="run seeded property suites")
    p.add_argument("--suite", choices=("equiv", "gradcheck", "counts", "all"), default="all")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time direct vs batch-fold TBC")
    p.add_argument("--op", default="tbc")
    p.add_argument("--paths", type=_str_list, default=["direct", "fast"])
    p.add_argument("--c", type=int, default=256)
    p.add_argument("--b-list", type=_int_list, default=[2, 4, 8])
    p.add_argument("--hw", type=int, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--csv", help="write CSV to this path (default stdout)")
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train a config on the synthetic blob dataset")
    p.add_argument("config")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--n", type=int, default=1000, help="dataset size")
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--csv", help="write the epoch,loss,train_acc curve here")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, InputError, OSError) as exc:
        print(f"tiedlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
