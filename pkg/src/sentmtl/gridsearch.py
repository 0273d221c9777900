"""Grid search over task-weight vectors, one trial per point, fixed seed."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus
from .encoder import EncoderConfig
from .evaluation import AlphaTrial
from .heads import HeadConfig, LabelHierarchy
from .trainer import (
    DivergenceError,
    RunRecord,
    TaskWeighting,
    TrainConfig,
    save_run_record,
    train,
)
from .validation import ValidationError


@dataclass
class GridResult:
    trials: list[AlphaTrial]
    best_by_macro: AlphaTrial | None
    best_by_micro: AlphaTrial | None
    per_tag_best: dict[str, dict] = field(default_factory=dict)
    task_order: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trials": [t.to_dict() for t in self.trials],
            "best_by_macro": self.best_by_macro.to_dict() if self.best_by_macro else None,
            "best_by_micro": self.best_by_micro.to_dict() if self.best_by_micro else None,
            "per_tag_best": self.per_tag_best,
            "task_order": self.task_order,
        }


def simplex_grid(tasks: Sequence[str], resolution: int = 10) -> list[dict[str, float]]:
    """All weight vectors over ``tasks`` with entries in multiples of 1/resolution."""
    if resolution < 1:
        raise ValidationError("resolution must be >= 1")
    if not tasks:
        raise ValidationError("need at least one task")
    points = []
    for split_points in combinations_with_replacement(range(len(tasks)), resolution):
        counts = [0] * len(tasks)
        for idx in split_points:
            counts[idx] += 1
        points.append({t: c / resolution for t, c in zip(tasks, counts)})
    return points


def _alpha_key(alpha: Mapping[str, float], task_order: Sequence[str]) -> tuple[float, ...]:
    return tuple(alpha.get(t, 0.0) for t in task_order)


def _argmax(trials: list[AlphaTrial], metric: str,
            task_order: Sequence[str]) -> AlphaTrial | None:
    usable = [t for t in trials if not t.failed]
    if not usable:
        return None
    best_value = max(getattr(t, metric) for t in usable)
    tied = [t for t in usable if getattr(t, metric) == best_value]
    return min(tied, key=lambda t: _alpha_key(t.alpha, task_order))


def grid_search(
    corpus: Corpus,
    grid: Sequence[Mapping[str, float]],
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    head_configs: Mapping[str, HeadConfig] | None = None,
    hierarchies: Mapping[str, LabelHierarchy] | None = None,
    loss_overrides: Mapping | None = None,
    out_dir: str | Path | None = None,
) -> GridResult:
    """Train once per grid point with the shared fixed seed and rank by F1.

    Diverged trials are recorded as failed and excluded from the argmax;
    ties break toward the lexicographically smallest weight vector in
    corpus task order. Also reports, per primary-task tag, the weighting
    that maximizes that tag's F1.
    """
    if not grid:
        raise ValidationError("grid must be non-empty")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    grid_tasks = {t for alpha in grid for t in alpha}
    task_order = [t for t in corpus.task_names() if t in grid_tasks]

    trials: list[AlphaTrial] = []
    records: list[RunRecord | None] = []
    for i, alpha in enumerate(grid):
        weighting = TaskWeighting(alpha=dict(alpha), c=sum(alpha.values()))
        run_dir = str(out_path / f"trial_{i:03d}") if out_path is not None else None
        try:
            record = train(
                corpus,
                weighting,
                config,
                encoder_config=encoder_config,
                head_configs=head_configs,
                hierarchies=hierarchies,
                loss_overrides=loss_overrides,
            )
        except DivergenceError as exc:
            warnings.warn(f"trial {i} diverged: {exc}")
            trials.append(
                AlphaTrial(alpha=dict(alpha), macro_f1=float("nan"), micro_f1=float("nan"),
                           failed=True, run_dir=run_dir)
            )
            records.append(None)
            continue
        report = record.primary_report()
        trials.append(
            AlphaTrial(
                alpha=dict(alpha),
                macro_f1=report.macro_f1,
                micro_f1=report.micro_f1,
                per_class_f1={
                    label: f1 for label, f1 in zip(report.labels, report.f1)
                },
                run_dir=run_dir,
            )
        )
        records.append(record)
        if run_dir is not None:
            save_run_record(record, run_dir)

    per_tag_best: dict[str, dict] = {}
    tags = sorted({tag for t in trials if not t.failed for tag in t.per_class_f1})
    for tag in tags:
        candidates = [t for t in trials if not t.failed and tag in t.per_class_f1]
        best_value = max(t.per_class_f1[tag] for t in candidates)
        tied = [t for t in candidates if t.per_class_f1[tag] == best_value]
        winner = min(tied, key=lambda t: _alpha_key(t.alpha, task_order))
        per_tag_best[tag] = {"alpha": dict(winner.alpha), "f1": best_value}

    result = GridResult(
        trials=trials,
        best_by_macro=_argmax(trials, "macro_f1", task_order),
        best_by_micro=_argmax(trials, "micro_f1", task_order),
        per_tag_best=per_tag_best,
        task_order=task_order,
    )
    if out_path is not None:
        with open(out_path / "trials.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(result.to_dict(), fh, ensure_ascii=False, sort_keys=True, indent=2)
            fh.write("\n")
    return result


def load_grid_result(trials_dir: str | Path) -> GridResult:
    path = Path(trials_dir) / "trials.json"
    if not path.exists():
        raise ValidationError(f"not a trials directory: missing {path}")
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return GridResult(
        trials=[AlphaTrial.from_dict(t) for t in raw["trials"]],
        best_by_macro=AlphaTrial.from_dict(raw["best_by_macro"]) if raw["best_by_macro"] else None,
        best_by_micro=AlphaTrial.from_dict(raw["best_by_micro"]) if raw["best_by_micro"] else None,
        per_tag_best=raw.get("per_tag_best", {}),
        task_order=raw.get("task_order", []),
    )
