"""Command-line entry point: prepare, train, gridsearch, augment, analyze.

Exit codes: 0 success, 1 validation failure (bad config, missing files,
invariant violations), 2 runtime failure (training divergence, unexpected
errors). Every command is idempotent given the same seed and inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .augment import expand_training_set
from .config import ExperimentConfig, load_config
from .corpus import CorpusFormatError, load_corpus, save_corpus
from .gridsearch import grid_search
from .prepare import prepare_all
from .reports import analyze_run, analyze_trials
from .trainer import DivergenceError, save_run_record, train
from .validation import ValidationError


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="experiment config YAML")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="patch a config entry by dotted path (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentmtl",
        description="Multitask sentence-level discourse classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("prepare", "run adapter chains and write canonical corpora + statistics"),
        ("train", "train one weighted multitask model and serialize the run"),
        ("gridsearch", "train once per weight vector and rank the trials"),
        ("augment", "expand the training split with paraphrase copies"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)

    p = sub.add_parser("analyze", help="build the report bundle for a run or trials directory")
    p.add_argument("target", help="run directory or grid-search trials directory")
    p.add_argument("--out", default=None, help="report output directory (default: <target>/report)")
    return parser


def _load(args) -> ExperimentConfig:
    return load_config(args.config, overrides=args.override, seed=args.seed, out=args.out)


def cmd_prepare(args) -> int:
    config = _load(args)
    config.validate("prepare")
    datasets = config.prepare_datasets()
    merged_out = config.prepare.get("merged_out")
    stats_out = config.prepare.get("stats_out")
    merged = prepare_all(datasets, config.seed, merged_out=merged_out, stats_out=stats_out)
    print(f"prepared {len(datasets)} dataset(s); merged corpus has "
          f"{len(merged.documents)} documents across {len(merged.tasks)} task(s)")
    if merged_out:
        print(f"merged corpus: {merged_out}")
    if stats_out:
        print(f"statistics: {stats_out}/stats.csv")
    return 0


def cmd_train(args) -> int:
    config = _load(args)
    config.validate("train")
    corpus = load_corpus(config.corpus)
    record = train(
        corpus,
        config.task_weighting(corpus),
        config.train_config(),
        encoder_config=config.encoder_config(),
        head_configs=config.head_configs(),
        hierarchies=config.label_hierarchies(corpus),
        loss_overrides=config.loss_overrides(),
    )
    run_dir = save_run_record(record, config.out)
    primary = record.primary_task()
    if primary in record.final_metrics:
        report = record.final_metrics[primary]
        print(f"run: {run_dir}")
        print(f"{primary} macro_f1={report.macro_f1:.4f} micro_f1={report.micro_f1:.4f}")
    else:
        print(f"run: {run_dir} (no evaluation coverage for {primary!r})")
    return 0


def cmd_gridsearch(args) -> int:
    config = _load(args)
    config.validate("gridsearch")
    corpus = load_corpus(config.corpus)
    trials_dir = Path(config.out) / "trials"
    result = grid_search(
        corpus,
        config.grid_alphas(),
        config.train_config(),
        encoder_config=config.encoder_config(),
        head_configs=config.head_configs(),
        hierarchies=config.label_hierarchies(corpus),
        loss_overrides=config.loss_overrides(),
        out_dir=trials_dir,
    )
    print(f"trials: {trials_dir} ({len(result.trials)} points)")
    for name, best in (("macro", result.best_by_macro), ("micro", result.best_by_micro)):
        if best is not None:
            value = best.macro_f1 if name == "macro" else best.micro_f1
            print(f"best by {name}: f1={value:.4f} alpha={best.alpha}")
    return 0


def cmd_augment(args) -> int:
    config = _load(args)
    config.validate("augment")
    corpus = load_corpus(config.corpus)
    n = int(config.augment["n"])
    expanded = expand_training_set(corpus, config.build_augmenter(), n)
    out = config.augment.get("out") or config.out
    save_corpus(expanded, out)
    before = sum(len(d) for d in corpus.split_documents("train"))
    after = sum(len(d) for d in expanded.split_documents("train"))
    print(f"augmented corpus: {out} (train sentences {before} -> {after})")
    return 0


def cmd_analyze(args) -> int:
    target = Path(args.target)
    if not target.exists():
        raise ValidationError(f"target directory does not exist: {target}")
    out = Path(args.out) if args.out else target / "report"
    if (target / "trials.json").exists():
        analyze_trials(target, out)
        print(f"trials report: {out}")
    elif (target / "config.json").exists():
        analyze_run(target, out)
        print(f"run report: {out}")
    else:
        raise ValidationError(
            f"{target} is neither a run directory (config.json) nor a "
            "trials directory (trials.json)"
        )
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "gridsearch": cmd_gridsearch,
    "augment": cmd_augment,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, CorpusFormatError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
