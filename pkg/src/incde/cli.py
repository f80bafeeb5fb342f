"""Command line: ``incde prepare|plan|train|eval|ablate|report``.

Exit codes: 0 success, 1 usage error, 2 invalid input (dataset, config,
checkpoint), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datagen import (
    ORDERS,
    PATTERNS,
    GrowthSchedule,
    build_growth_dataset,
    desk_benchmark,
    make_translational_kg,
    write_growth_dataset,
)
from .kg import DatasetError, load_dataset, read_triple_file
from .pipeline import (
    VARIANTS,
    ConfigError,
    RunConfig,
    ablate,
    collect_rows,
    eval_run,
    format_table,
    read_config_file,
    read_manifest,
    seed_dir,
    summarise,
    train_run,
    write_summary,
)
from .trainer import TrainingError, make_plan

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

logger = logging.getLogger("incde")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _train_options(p):
    g = p.add_argument_group("training options (override --config)")
    g.add_argument("--config", type=Path, help="flat key = value file")
    g.add_argument("--seed", dest="seeds", help="seed or comma-separated seed list")
    g.add_argument("--dim", type=int)
    g.add_argument("--margin", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch", dest="batch_size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--neg", dest="n_neg", type=int, help="negatives per positive")
    g.add_argument("--norm", choices=("L1", "L2"))
    g.add_argument("--max-layer-size", dest="max_layer_size", type=int)
    g.add_argument("--stage1-fraction", dest="stage1_fraction", type=float)
    g.add_argument("--stage-mode", dest="stage_mode", choices=("per_layer", "per_timestep"))
    g.add_argument("--patience", type=int)
    g.add_argument("--eval-every", dest="eval_every", type=int)
    for flag in ("no-ho", "no-id", "no-ts"):
        g.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="incde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="cut a base KG into a growing dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--base", type=Path, help="head<TAB>relation<TAB>tail file")
    src.add_argument("--synthetic", type=int, metavar="N", help="generate an N-triple lattice KG instead")
    src.add_argument("--desk", action="store_true", help="the 1,900-triple desk benchmark (ignores --pattern etc.)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pattern", choices=PATTERNS, default="Equal")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--sizes", help="comma-separated per-time sizes (Explicit pattern)")
    p.add_argument("--order", choices=ORDERS, default="shuffle")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plan", help="export the layer plan of one time step as JSON")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--time", type=int, default=None, help="default: last time step")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    _train_options(p)

    p = sub.add_parser("train", help="train across time steps, one run per seed")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--resume", type=Path, help="checkpoint of time i-1 to continue from")
    p.add_argument("--until", type=int, help="last time step to train")
    _train_options(p)

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("--run", type=Path, required=True, help="run directory or manifest.json")
    p.add_argument("--dataset", type=Path, help="default: dataset recorded in the manifest")
    p.add_argument("--time", type=int, help="model time (default: last)")
    p.add_argument("--raw", action="store_true", help="raw instead of filtered ranking")
    p.add_argument("--both", action="store_true", help="emit raw and filtered reports")
    p.add_argument("--format", default="json,csv")

    p = sub.add_parser("ablate", help="train and compare ablation variants over shared seeds")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--raw", action="store_const", const=True)
    _train_options(p)

    p = sub.add_parser("report", help="mean ± stddev table over finished runs")
    p.add_argument("runs", nargs="+", type=Path, help="run directories or manifests")
    p.add_argument("--dataset", type=Path, help="needed only for runs without reports")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", type=Path, help="directory for report.csv/report.json")
    return parser


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    keys = ("seeds", "dim", "margin", "lr", "batch_size", "epochs", "n_neg", "norm", "max_layer_size",
            "stage1_fraction", "stage_mode", "patience", "eval_every", "no_ho", "no_id", "no_ts")
    overrides = {k: getattr(args, k, None) for k in keys}
    for key in ("dataset", "out", "raw"):
        overrides[key] = getattr(args, key, None)
    return RunConfig.from_sources(file_values, overrides)


def _require(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required (on the command line or in --config)")
    return value


def cmd_prepare(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.desk:
        dataset = desk_benchmark(args.seed)
        schedule = GrowthSchedule("Equal", tuple(s["n_triples"] for s in dataset.stats()), args.seed)
        write_growth_dataset(dataset, schedule, args.out)
        _print_stats(dataset)
        return EXIT_OK
    if args.base is not None:
        base, vocab = read_triple_file(args.base)
    else:
        base, vocab = make_translational_kg(n_triples=args.synthetic, seed=args.seed), None
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else None
    if args.pattern == "Explicit" and sizes is None:
        raise UsageError("--pattern Explicit needs --sizes")
    schedule = GrowthSchedule.make(args.pattern, len(np.unique(base, axis=0)), args.steps,
                                   seed=args.seed, sizes=sizes)
    dataset = build_growth_dataset(base, schedule, vocab=vocab, order=args.order)
    write_growth_dataset(dataset, schedule, args.out)
    _print_stats(dataset)
    return EXIT_OK


def _print_stats(dataset):
    for row in dataset.stats():
        print(f"time {row['time']}: {row['n_entities']} entities, {row['n_relations']} relations, "
              f"{row['n_triples']} triples")


def cmd_plan(args) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.dataset)
    time = len(dataset) if args.time is None else args.time
    if not 1 <= time <= len(dataset):
        raise UsageError(f"--time must lie in 1..{len(dataset)}")
    plan = make_plan(dataset, time, cfg.train)
    text = plan.to_json(indent=1) + "\n"
    if args.out:
        args.out.write_text(text)
        print(f"{len(plan)} layers, sizes {plan.sizes()} -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    data_path = _require(cfg.dataset, "--dataset")
    out = _require(cfg.out, "--out")
    if args.resume and len(cfg.seeds) > 1:
        raise UsageError("--resume continues a single run; pass one --seed")
    dataset = load_dataset(data_path)
    for seed in cfg.seeds:
        run_dir = seed_dir(out, seed)
        manifest = train_run(dataset, cfg.for_seed(seed), run_dir, dataset_path=str(data_path),
                             resume=args.resume, until=args.until)
        print(f"seed {seed}: {len(manifest.checkpoints)} checkpoints, manifest {run_dir / 'manifest.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest, run_dir = read_manifest(args.run)
    data_path = args.dataset or _require(manifest.dataset or None, "--dataset")
    dataset = load_dataset(data_path)
    modes = ("filtered", "raw") if args.both else (("raw",) if args.raw else ("filtered",))
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    if not set(formats) <= {"json", "csv"}:
        raise UsageError("--format takes json and/or csv")
    for path in eval_run(run_dir, dataset, time=args.time, modes=modes, formats=formats,
                         name=Path(data_path).name):
        print(path)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    data_path = _require(cfg.dataset, "--dataset")
    out = _require(cfg.out, "--out")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    dataset = load_dataset(data_path)
    _, summary = ablate(dataset, cfg.train, cfg.seeds, out, variants=variants, dataset_path=str(data_path),
                        dataset_name=Path(data_path).name, raw=cfg.raw)
    print(format_table(summary))
    return EXIT_OK


def cmd_report(args) -> int:
    dataset = load_dataset(args.dataset) if args.dataset else None
    name = args.dataset.name if args.dataset else ""
    rows = collect_rows(args.runs, dataset, raw=args.raw, dataset_name=name)
    summary = summarise(rows, name)
    print(format_table(summary))
    if args.out:
        for path in write_summary(rows, summary, args.out, stem="report"):
            print(path)
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "plan": cmd_plan, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"incde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"incde: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingError, OSError, RuntimeError) as exc:
        print(f"incde: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything unexpected is still a runtime failure, not a crash
        logger.debug("unhandled error", exc_info=True)
        print(f"incde: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
