"""Declarative experiment configuration (YAML) with full up-front validation.

One config file drives every command; all randomness flows from the single
top-level seed. ``--override key.path=value`` flags patch the loaded tree
before validation. Validation resolves every cross-reference (files, task
names, head kinds, grid tasks) before any compute starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import Augmenter, ExternalProcessAugmenter, MockBacktranslator
from .corpus import Corpus
from .encoder import EncoderConfig
from .gridsearch import simplex_grid
from .heads import HeadConfig, LabelHierarchy
from .losses import LossConfig
from .prepare import DatasetPrep
from .trainer import TaskWeighting, TrainConfig
from .validation import ValidationError

TOP_LEVEL_KEYS = {
    "seed", "out", "corpus", "prepare", "encoder", "heads", "training",
    "weighting", "grid", "augment", "hierarchies", "losses",
}


@dataclass
class ExperimentConfig:
    seed: int
    out: str
    corpus: str | None = None
    prepare: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    heads: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    weighting: dict | None = None
    grid: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    hierarchies: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)

    # -- typed accessors -----------------------------------------------------

    def train_config(self) -> TrainConfig:
        raw = dict(self.training)
        raw["seed"] = self.seed
        return TrainConfig.from_dict(raw)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_dict(dict(self.encoder))

    def head_configs(self) -> dict[str, HeadConfig] | None:
        if not self.heads:
            return None
        return {
            task: HeadConfig.from_dict({"task": task, **dict(raw)})
            for task, raw in self.heads.items()
        }

    def loss_overrides(self) -> dict[str, LossConfig] | None:
        if not self.losses:
            return None
        return {task: LossConfig.from_dict(dict(raw)) for task, raw in self.losses.items()}

    def task_weighting(self, corpus: Corpus) -> TaskWeighting:
        if self.weighting:
            alpha = {t: float(a) for t, a in self.weighting.items()}
            return TaskWeighting(alpha=alpha, c=sum(alpha.values()))
        defaults = {t.name: t.alpha_default for t in corpus.tasks if t.alpha_default > 0}
        if not defaults:
            raise ValidationError("no weighting given and no task has a positive default")
        return TaskWeighting.normalized(defaults)

    def label_hierarchies(self, corpus: Corpus) -> dict[str, LabelHierarchy] | None:
        if not self.hierarchies:
            return None
        return {
            task: LabelHierarchy.from_dict(dict(raw), corpus.task(task).vocabulary)
            for task, raw in self.hierarchies.items()
        }

    def prepare_datasets(self) -> list[DatasetPrep]:
        datasets = self.prepare.get("datasets", [])
        if not datasets:
            raise ValidationError("prepare section has no datasets")
        return [DatasetPrep.from_dict(dict(raw)) for raw in datasets]

    def grid_alphas(self) -> list[dict[str, float]]:
        tasks = self.grid.get("tasks", [])
        points: list[dict[str, float]] = []
        if tasks:
            points.extend(simplex_grid(tasks, int(self.grid.get("resolution", 10))))
        for alpha in self.grid.get("explicit", []):
            points.append({t: float(a) for t, a in alpha.items()})
        if not points:
            raise ValidationError("grid section defines no points")
        return points

    def build_augmenter(self) -> Augmenter:
        raw = dict(self.augment)
        external = raw.get("external")
        temperature = float(raw.get("temperature", 0.8))
        if external:
            return ExternalProcessAugmenter(
                out_command=external["out_command"],
                back_command=external["back_command"],
                temperature=temperature,
                seed=self.seed,
            )
        return MockBacktranslator(
            temperature=temperature,
            seed=self.seed,
            n_variants=int(raw.get("n_variants", 3)),
            substitution_rate=float(raw.get("substitution_rate", 0.3)),
            swap_rate=float(raw.get("swap_rate", 0.1)),
        )

    # -- validation ----------------------------------------------------------

    def validate(self, command: str) -> None:
        """Resolve every cross-reference the command will rely on."""
        if command == "prepare":
            for prep in self.prepare_datasets():
                for path in prep.input_paths():
                    if not Path(path).exists():
                        raise ValidationError(
                            f"dataset {prep.name!r}: input path does not exist: {path}"
                        )
            return

        if command in ("train", "gridsearch", "augment"):
            if not self.corpus:
                raise ValidationError(f"command {command!r} needs a corpus path")
            corpus_dir = Path(self.corpus)
            tasks_file = corpus_dir / "tasks.json" if corpus_dir.is_dir() else None
            if tasks_file is None or not tasks_file.exists():
                raise ValidationError(f"corpus path {self.corpus} is not a corpus directory")
            with open(tasks_file, encoding="utf-8") as fh:
                declared = {entry["name"] for entry in json.load(fh)}
            referenced: set[str] = set()
            if self.weighting:
                referenced.update(self.weighting)
            referenced.update(self.heads)
            referenced.update(self.hierarchies)
            referenced.update(self.losses)
            if command == "gridsearch":
                for alpha in self.grid_alphas():
                    referenced.update(alpha)
            primary = self.training.get("primary_task")
            if primary:
                referenced.add(primary)
            unknown = referenced - declared
            if unknown:
                raise ValidationError(
                    f"config references undeclared tasks: {sorted(unknown)}"
                )
            for task, raw in self.heads.items():
                HeadConfig.from_dict({"task": task, **dict(raw)})
                if raw.get("kind", "").startswith("hierarchical") and task not in self.hierarchies:
                    raise ValidationError(f"hierarchical head {task!r} needs a hierarchy entry")
            self.loss_overrides()
            self.train_config()
            self.encoder_config()
            if command == "augment" and "n" not in self.augment:
                raise ValidationError("augment section needs 'n'")
            external = self.augment.get("external")
            if external:
                for key in ("out_command", "back_command"):
                    if key not in external:
                        raise ValidationError(f"external augmenter needs {key!r}")
            return

        if command == "analyze":
            return
        raise ValidationError(f"unknown command {command!r}")


def apply_override(tree: dict, assignment: str) -> None:
    """Patch ``tree`` in place with a ``key.path=value`` assignment."""
    if "=" not in assignment:
        raise ValidationError(f"override must look like key.path=value, got {assignment!r}")
    path, raw_value = assignment.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ValidationError(f"override has an empty key path: {assignment!r}")
    value = yaml.safe_load(raw_value)
    node = tree
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def load_config(path: str | Path, overrides: list[str] | None = None,
                seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file does not exist: {path}")
    with open(path, encoding="utf-8") as fh:
        tree = yaml.safe_load(fh) or {}
    if not isinstance(tree, dict):
        raise ValidationError("config root must be a mapping")
    for assignment in overrides or []:
        apply_override(tree, assignment)
    unknown = set(tree) - TOP_LEVEL_KEYS
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    if seed is not None:
        tree["seed"] = seed
    if out is not None:
        tree["out"] = out
    if "seed" not in tree:
        raise ValidationError("config needs a top-level seed")
    return ExperimentConfig(
        seed=int(tree["seed"]),
        out=str(tree.get("out", "runs/run")),
        corpus=tree.get("corpus"),
        prepare=tree.get("prepare") or {},
        encoder=tree.get("encoder") or {},
        heads=tree.get("heads") or {},
        training=tree.get("training") or {},
        weighting=tree.get("weighting"),
        grid=tree.get("grid") or {},
        augment=tree.get("augment") or {},
        hierarchies=tree.get("hierarchies") or {},
        losses=tree.get("losses") or {},
    )
