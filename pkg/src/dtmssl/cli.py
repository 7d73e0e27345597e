"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from dtmssl.errors import ConfigError, DimensionError, ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtmssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train variants over seeds and write reports")
    run.add_argument("--config", type=Path, help="JSON file of flat key/value overrides")
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--variant", help="baseline | ssl_fixed_threshold | ssl_dtm | ssl_dtm_post | all")
    run.add_argument("--out", help="output directory")
    run.add_argument("--epochs", type=int)
    run.add_argument("--jobs", type=int, help="parallel worker processes")

    cmp_ = sub.add_parser("compare", help="tabulate summary.json files from variant directories")
    cmp_.add_argument("dirs", nargs="+", type=Path)
    cmp_.add_argument("--out", type=Path, help="write comparison.csv/.txt here")

    sm = sub.add_parser("smooth", help="majority-vote smooth a segment_id,frame_index,label CSV")
    sm.add_argument("input", type=Path)
    sm.add_argument("output", type=Path)
    sm.add_argument("--window", type=int, default=10)

    gen = sub.add_parser("generate", help="dump the synthetic pools of one seed as CSV")
    gen.add_argument("--config", type=Path)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)
    return parser


def _load_config(path, **overrides):
    """Config file values, then any non-None flag overrides."""
    from dtmssl.experiment import ExperimentConfig

    data = asdict(ExperimentConfig.load(path)) if path is not None else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _cmd_run(args) -> int:
    from dtmssl.experiment import compare_variants, format_table, run_experiment

    cfg = _load_config(args.config, seeds=None if args.seed is None else [args.seed], variant=args.variant,
                       out_dir=args.out, epochs=args.epochs, jobs=args.jobs)
    summaries = run_experiment(cfg)
    rows = compare_variants([Path(cfg.out_dir) / v for v in summaries])
    sys.stdout.write(format_table(rows))
    return EXIT_OK


def _cmd_compare(args) -> int:
    from dtmssl.experiment import compare_variants, format_table, write_comparison

    rows = compare_variants(args.dirs)
    sys.stdout.write(format_table(rows))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_comparison(args.out, rows)
    return EXIT_OK


def _cmd_smooth(args) -> int:
    from dtmssl.postprocess import read_sequence_csv, smooth, write_sequence_csv

    if not args.input.is_file():
        raise ConfigError(f"no such file: {args.input}")
    labels, segs = read_sequence_csv(args.input)
    write_sequence_csv(args.output, smooth(labels, args.window, segs), segs)
    return EXIT_OK


def _cmd_generate(args) -> int:
    from dtmssl.dataflow import save_csv
    from dtmssl.postprocess import write_sequence_csv

    cfg = _load_config(args.config)
    pools = cfg.pools(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_csv(pools.labeled, args.out / "labeled.csv")
    save_csv(pools.unlabeled, args.out / "unlabeled.csv")
    save_csv(pools.heldout, args.out / "heldout.csv")
    write_sequence_csv(args.out / "heldout_labels.csv", pools.heldout.labels, pools.heldout.segment_ids)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "smooth": _cmd_smooth, "generate": _cmd_generate}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
