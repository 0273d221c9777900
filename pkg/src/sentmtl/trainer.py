"""Multitask training loop: task sampling, weighted losses, run records.

Each step samples one task uniformly among the active (positive-weight)
tasks and a small document batch from that task's training documents; the
task weight multiplies the loss rather than biasing the sampling. All
randomness flows from one mandatory seed through keyed derivation, so a run
is reproducible bit-for-bit with the deterministic toy embedder, and a
weighting that is one-hot on the primary task is computationally identical
to single-task training.

A finished run serializes as a directory::

    config.json          # full config snapshot (tasks, encoder, heads, weights)
    metrics.json         # per-epoch dev metrics + final metrics per head
    predictions.jsonl    # one row per evaluation sentence, all heads
    checkpoint.tensors   # flat named-tensor archive of the final parameters
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from . import losses
from .corpus import Corpus, Document, TaskSpec
from .encoder import EncoderConfig, SharedEncoder, trainable_parameter_count
from .evaluation import MetricReport, metric_report, multilabel_metric_report
from .heads import CRFHead, HeadConfig, LabelHierarchy, TaskHead, build_head
from .validation import ValidationError, derive_seed


class DivergenceError(RuntimeError):
    """Training loss went non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class TaskWeighting:
    """Per-task loss coefficients summing to the constant ``c``.

    Zero-weight tasks are excluded from sampling entirely; weights scale
    losses, not sampling probabilities.
    """

    alpha: dict[str, float]
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", dict(self.alpha))
        if not self.alpha:
            raise ValidationError("weighting needs at least one task")
        if any(a < 0 for a in self.alpha.values()):
            raise ValidationError("task weights must be non-negative")
        total = sum(self.alpha.values())
        if abs(total - self.c) > 1e-9:
            raise ValidationError(f"weights sum to {total}, declared constant is {self.c}")
        if not any(a > 0 for a in self.alpha.values()):
            raise ValidationError("at least one task must have positive weight")

    def active_tasks(self) -> list[str]:
        return [t for t, a in self.alpha.items() if a > 0]

    def active_alpha(self) -> dict[str, float]:
        return {t: a for t, a in self.alpha.items() if a > 0}

    @classmethod
    def one_hot(cls, task: str, c: float = 1.0) -> "TaskWeighting":
        return cls(alpha={task: c}, c=c)

    @classmethod
    def normalized(cls, alpha: Mapping[str, float]) -> "TaskWeighting":
        total = sum(alpha.values())
        if total <= 0:
            raise ValidationError("cannot normalize an all-zero weighting")
        return cls(alpha={t: a / total for t, a in alpha.items()}, c=1.0)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 1
    lr_heads: float = 1e-3
    lr_embedder: float = 2e-5
    early_stop_metric: str = "micro_f1"
    patience: int = 0
    eval_split: str = "test"
    primary_task: str | None = None
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.steps_per_epoch <= 0 or self.batch_size <= 0:
            raise ValidationError("epochs must be >= 0, steps and batch size positive")
        if self.early_stop_metric not in ("micro_f1", "macro_f1"):
            raise ValidationError("early_stop_metric must be micro_f1 or macro_f1")
        if self.patience < 0:
            raise ValidationError("patience must be >= 0")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "batch_size": self.batch_size,
            "lr_heads": self.lr_heads,
            "lr_embedder": self.lr_embedder,
            "early_stop_metric": self.early_stop_metric,
            "patience": self.patience,
            "eval_split": self.eval_split,
            "primary_task": self.primary_task,
            "restore_best": self.restore_best,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise ValidationError("train config requires an explicit seed")
        return cls(**raw)


@dataclass
class RunRecord:
    """Everything one trial produced; the unit every analysis consumes."""

    config: dict
    alpha: dict[str, float]
    epoch_metrics: list[dict]
    final_metrics: dict[str, MetricReport]
    predictions: list[dict]
    checkpoint: dict[str, np.ndarray] = field(default_factory=dict)

    def primary_task(self) -> str:
        return self.config["train"]["primary_task"]

    def primary_report(self) -> MetricReport:
        return self.final_metrics[self.primary_task()]


class MultitaskModel(nn.Module):
    """Shared encoder plus one head per active task."""

    def __init__(self, encoder: SharedEncoder, heads: dict[str, TaskHead]):
        super().__init__()
        self.encoder = encoder
        self.heads = nn.ModuleDict(heads)

    def document_rows(self, doc: Document) -> torch.Tensor:
        return self.encoder(doc)


def default_head_config(spec: TaskSpec, frozen: bool = False) -> HeadConfig:
    kind = "ffnn-multiclass" if spec.kind == "multiclass" else "ffnn-multilabel"
    return HeadConfig(task=spec.name, kind=kind, frozen=frozen)


def build_model(
    corpus: Corpus,
    active_tasks: Sequence[str],
    encoder_config: EncoderConfig,
    head_configs: Mapping[str, HeadConfig],
    seed: int,
    hierarchies: Mapping[str, LabelHierarchy] | None = None,
    loss_overrides: Mapping[str, losses.LossConfig] | None = None,
) -> MultitaskModel:
    encoder = SharedEncoder(encoder_config, seed=derive_seed(seed, "encoder"))
    heads: dict[str, TaskHead] = {}
    for task in active_tasks:
        spec = corpus.task(task)
        config = head_configs[task]
        heads[task] = build_head(
            config,
            spec,
            encoder.output_width,
            seed=derive_seed(seed, "head", task),
            hierarchy=(hierarchies or {}).get(task),
            loss_config=(loss_overrides or {}).get(task),
        )
    return MultitaskModel(encoder, heads)


def freeze_auxiliary_heads(
    heads: Mapping[str, TaskHead], flags: Mapping[str, bool], primary: str
) -> None:
    """Exclude flagged auxiliary head parameters from updates.

    Frozen heads still backpropagate into the shared layers and still
    produce predictions; only their own parameters stop moving. Freezing
    the primary head is rejected.
    """
    for task, frozen in flags.items():
        if not frozen:
            continue
        if task == primary:
            raise ValidationError("cannot freeze the primary task head")
        if task not in heads:
            raise ValidationError(f"freeze flag for unknown head {task!r}")
        for param in heads[task].parameters():
            param.requires_grad_(False)


# ---------------------------------------------------------------------------
# Sampling and loss aggregation


def sample_step(
    corpus: Corpus,
    weighting: TaskWeighting,
    rng: random.Random,
    split: str = "train",
    batch_size: int = 1,
) -> tuple[str, list[Document]]:
    """Draw (task, document batch): task uniform among active tasks,
    documents uniform without replacement from that task's documents."""
    active = weighting.active_tasks()
    pools = {t: corpus.task_documents(t, split) for t in active}
    return _sample_from_pools(pools, active, rng, batch_size)


def _sample_from_pools(
    pools: Mapping[str, list[Document]],
    active: Sequence[str],
    rng: random.Random,
    batch_size: int,
) -> tuple[str, list[Document]]:
    task = active[rng.randrange(len(active))]
    pool = pools[task]
    if not pool:
        raise ValidationError(f"task {task!r} has no documents to sample")
    return task, rng.sample(pool, min(batch_size, len(pool)))


def joint_loss(task_losses: Mapping[str, float], weighting: TaskWeighting):
    """Weighted sum of per-task losses under the weighting vector."""
    missing = [t for t in task_losses if t not in weighting.alpha]
    if missing:
        raise ValidationError(f"tasks without a weight: {missing}")
    total = 0.0
    for task, value in task_losses.items():
        total = total + weighting.alpha[task] * value
    return total


def _multilabel_targets(value_sets, k: int) -> np.ndarray:
    out = np.zeros((len(value_sets), k), dtype=np.float64)
    for i, value in enumerate(value_sets):
        for j in value:
            out[i, j] = 1.0
    return out


def _document_task_loss(model: MultitaskModel, corpus: Corpus, task: str,
                        doc: Document) -> torch.Tensor:
    spec = corpus.task(task)
    head = model.heads[task]
    rows = model.document_rows(doc)
    if isinstance(head, CRFHead):
        if any(task not in s.labels for s in doc.sentences):
            raise ValidationError(
                f"CRF head {task!r} needs full sentence coverage in {doc.doc_id!r}"
            )
        targets = [s.labels[task] for s in doc.sentences]
        return head.loss(rows, targets)
    covered = [j for j, s in enumerate(doc.sentences) if task in s.labels]
    if not covered:
        raise ValidationError(f"document {doc.doc_id!r} has no sentences covered by {task!r}")
    sub = rows[covered]
    if spec.kind == "multiclass":
        targets = [doc.sentences[j].labels[task] for j in covered]
        return head.loss(sub, targets)
    targets = _multilabel_targets([doc.sentences[j].labels[task] for j in covered], spec.k)
    return head.loss(sub, targets)


def _batch_task_loss(model: MultitaskModel, corpus: Corpus, task: str,
                     docs: Sequence[Document]) -> torch.Tensor:
    per_doc = [_document_task_loss(model, corpus, task, doc) for doc in docs]
    return torch.stack(per_doc).mean()


# ---------------------------------------------------------------------------
# Evaluation over a split


def _predict_document(model: MultitaskModel, corpus: Corpus, doc: Document,
                      tasks: Sequence[str]) -> list[dict]:
    with torch.no_grad():
        rows = model.document_rows(doc)
    entries: dict[str, tuple[list, np.ndarray]] = {}
    for task in tasks:
        head = model.heads[task]
        entries[task] = (head.predict(rows), head.predict_proba(rows))
    out = []
    for j, sent in enumerate(doc.sentences):
        heads_payload = {}
        for task in tasks:
            spec = corpus.task(task)
            preds, probs = entries[task]
            pred = preds[j]
            if isinstance(pred, frozenset):
                pred_payload = [spec.label_name(i) for i in sorted(pred)]
            else:
                pred_payload = spec.label_name(int(pred))
            gold = sent.labels.get(task)
            if gold is None:
                gold_payload = None
            elif spec.kind == "multiclass":
                gold_payload = spec.label_name(gold)
            else:
                gold_payload = [spec.label_name(i) for i in sorted(gold)]
            heads_payload[task] = {
                "predicted": pred_payload,
                "probabilities": [float(x) for x in probs[j]],
                "gold": gold_payload,
            }
        out.append({"doc_id": doc.doc_id, "sentence_index": j, "heads": heads_payload})
    return out


def evaluate_split(model: MultitaskModel, corpus: Corpus, tasks: Sequence[str],
                   split: str) -> tuple[list[dict], dict[str, MetricReport]]:
    """Prediction dump (one row per sentence, all heads) plus per-task metrics."""
    dump: list[dict] = []
    for doc in corpus.split_documents(split):
        dump.extend(_predict_document(model, corpus, doc, tasks))
    reports = metrics_from_dump(dump, {t: corpus.task(t) for t in tasks})
    return dump, reports


def metrics_from_dump(dump: Sequence[dict],
                      specs: Mapping[str, TaskSpec]) -> dict[str, MetricReport]:
    """Recompute every head's metrics from a prediction dump alone."""
    reports: dict[str, MetricReport] = {}
    for task, spec in specs.items():
        gold_list = []
        pred_list = []
        for row in dump:
            entry = row["heads"].get(task)
            if entry is None or entry["gold"] is None:
                continue
            if spec.kind == "multiclass":
                gold_list.append(spec.label_id(entry["gold"]))
                predicted = entry["predicted"]
                if isinstance(predicted, list):
                    raise ValidationError(f"multiclass head {task!r} dumped a label list")
                pred_list.append(spec.label_id(predicted))
            else:
                gold_list.append({spec.label_id(name) for name in entry["gold"]})
                pred_list.append({spec.label_id(name) for name in entry["predicted"]})
        if not gold_list:
            continue
        if spec.kind == "multiclass":
            reports[task] = metric_report(gold_list, pred_list, spec.k, labels=spec.vocabulary)
        else:
            reports[task] = multilabel_metric_report(
                gold_list, pred_list, spec.k, labels=spec.vocabulary
            )
    return reports


# ---------------------------------------------------------------------------
# The training loop


def _config_snapshot(corpus: Corpus, active: Sequence[str], weighting: TaskWeighting,
                     config: TrainConfig, encoder_config: EncoderConfig,
                     head_configs: Mapping[str, HeadConfig], primary: str,
                     loss_overrides: Mapping[str, losses.LossConfig] | None = None) -> dict:
    tasks_payload = []
    for task in active:
        spec = corpus.task(task)
        effective_loss = (loss_overrides or {}).get(task) or losses.LossConfig.from_dict(
            dict(spec.loss)
        )
        tasks_payload.append(
            {
                "name": spec.name,
                "kind": spec.kind,
                "vocabulary": list(spec.vocabulary),
                "loss": effective_loss.to_dict(),
                "alpha_default": spec.alpha_default,
            }
        )
    train_dict = config.to_dict()
    train_dict["primary_task"] = primary
    return {
        "weighting": {"alpha": weighting.active_alpha(), "c": weighting.c},
        "train": train_dict,
        "encoder": encoder_config.to_dict(),
        "heads": {t: head_configs[t].to_dict() for t in active},
        "tasks": tasks_payload,
    }


def _snapshot_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _diagnostic(model: nn.Module, task: str, epoch: int, step: int, loss_value: float) -> dict:
    return {
        "task": task,
        "epoch": epoch,
        "step": step,
        "loss": loss_value,
        "parameter_norms": {
            name: float(p.detach().norm()) for name, p in model.named_parameters()
        },
    }


def train(
    corpus: Corpus,
    weighting: TaskWeighting,
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    head_configs: Mapping[str, HeadConfig] | None = None,
    hierarchies: Mapping[str, LabelHierarchy] | None = None,
    loss_overrides: Mapping[str, losses.LossConfig] | None = None,
) -> RunRecord:
    """Run the weighted multitask loop and return the complete RunRecord.

    Deterministic given seed and config (bitwise with the toy embedder).
    Raises :class:`DivergenceError` with a diagnostic snapshot if the loss
    goes non-finite.
    """
    torch.set_num_threads(1)
    encoder_config = encoder_config or EncoderConfig()
    active = weighting.active_tasks()
    for task in active:
        if task not in corpus.task_names():
            raise ValidationError(f"weighted task {task!r} is not declared in the corpus")
        if not corpus.task_documents(task, "train"):
            raise ValidationError(f"task {task!r} has no training documents")
    primary = config.primary_task or active[0]
    if primary not in active:
        raise ValidationError(f"primary task {primary!r} must have positive weight")

    head_configs = dict(head_configs or {})
    for task in active:
        head_configs.setdefault(task, default_head_config(corpus.task(task)))
    if head_configs[primary].frozen:
        raise ValidationError("cannot freeze the primary task head")

    model = build_model(corpus, active, encoder_config, head_configs, config.seed,
                        hierarchies=hierarchies, loss_overrides=loss_overrides)
    freeze_auxiliary_heads(
        dict(model.heads), {t: head_configs[t].frozen for t in active}, primary
    )

    embedder_params = [p for p in model.encoder.embedder.parameters() if p.requires_grad]
    embedder_ids = {id(p) for p in embedder_params}
    shared_params = [
        p for p in model.parameters() if p.requires_grad and id(p) not in embedder_ids
    ]
    groups = []
    if embedder_params:
        groups.append({"params": embedder_params, "lr": config.lr_embedder})
    if shared_params:
        groups.append({"params": shared_params, "lr": config.lr_heads})
    optimizer = torch.optim.Adam(groups) if groups else None

    rng = random.Random(derive_seed(config.seed, "sampling"))
    pools = {t: corpus.task_documents(t, "train") for t in active}

    epoch_metrics: list[dict] = []
    best_state: dict[str, torch.Tensor] | None = None
    best_value = -np.inf
    epochs_since_best = 0

    for epoch in range(1, config.epochs + 1):
        for step in range(config.steps_per_epoch):
            task, docs = _sample_from_pools(pools, active, rng, config.batch_size)
            loss = weighting.alpha[task] * _batch_task_loss(model, corpus, task, docs)
            loss_value = float(loss.detach())
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {step} (task {task!r})",
                    _diagnostic(model, task, epoch, step, loss_value),
                )
            if optimizer is not None:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

        _, dev_reports = evaluate_split(model, corpus, active, "dev")
        entry = {
            "epoch": epoch,
            "dev": {
                t: {"macro_f1": r.macro_f1, "micro_f1": r.micro_f1}
                for t, r in dev_reports.items()
            },
        }
        epoch_metrics.append(entry)

        if primary in dev_reports:
            value = entry["dev"][primary][config.early_stop_metric]
            if value > best_value:
                best_value = value
                best_state = _snapshot_state(model)
                epochs_since_best = 0
            else:
                epochs_since_best += 1
            if config.patience and epochs_since_best >= config.patience:
                break

    if config.restore_best and best_state is not None:
        model.load_state_dict(best_state)

    predictions, final_metrics = evaluate_split(model, corpus, active, config.eval_split)
    if not final_metrics:
        warnings.warn(f"no task coverage in evaluation split {config.eval_split!r}")

    checkpoint = {
        name: tensor.detach().numpy().copy() for name, tensor in model.state_dict().items()
    }
    snapshot = _config_snapshot(
        corpus, active, weighting, config, encoder_config, head_configs, primary,
        loss_overrides=loss_overrides,
    )
    return RunRecord(
        config=snapshot,
        alpha=weighting.active_alpha(),
        epoch_metrics=epoch_metrics,
        final_metrics=final_metrics,
        predictions=predictions,
        checkpoint=checkpoint,
    )


# ---------------------------------------------------------------------------
# Run serialization


_TENSOR_MAGIC = b"SENTMTL-TENSORS-1\n"


def save_named_tensors(arrays: Mapping[str, np.ndarray], path: str | Path) -> None:
    """Flat named-tensor archive: JSON index then raw little-endian buffers."""
    names = sorted(arrays)
    index = []
    buffers = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        buffers.append(arr.tobytes())
    header = json.dumps({"tensors": index}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_named_tensors(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_TENSOR_MAGIC))
        if magic != _TENSOR_MAGIC:
            raise ValidationError(f"{path} is not a named-tensor archive")
        header_len = int.from_bytes(fh.read(8), "little")
        index = json.loads(fh.read(header_len).decode("utf-8"))["tensors"]
        out = {}
        for entry in index:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            dtype = np.dtype(entry["dtype"])
            buf = fh.read(count * dtype.itemsize)
            out[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"]).copy()
    return out


def save_run_record(record: RunRecord, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record.config, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    metrics_payload = {
        "alpha": record.alpha,
        "epochs": record.epoch_metrics,
        "final": {t: r.to_dict() for t, r in record.final_metrics.items()},
    }
    with open(out / "metrics.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics_payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out / "predictions.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for row in record.predictions:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    save_named_tensors(record.checkpoint, out / "checkpoint.tensors")
    return out


def load_run_record(run_dir: str | Path) -> RunRecord:
    run_dir = Path(run_dir)
    for name in ("config.json", "metrics.json", "predictions.jsonl"):
        if not (run_dir / name).exists():
            raise ValidationError(f"run directory {run_dir} is missing {name}")
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        config = json.load(fh)
    with open(run_dir / "metrics.json", encoding="utf-8") as fh:
        metrics_payload = json.load(fh)
    predictions = []
    with open(run_dir / "predictions.jsonl", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                predictions.append(json.loads(line))
    checkpoint_path = run_dir / "checkpoint.tensors"
    checkpoint = load_named_tensors(checkpoint_path) if checkpoint_path.exists() else {}
    return RunRecord(
        config=config,
        alpha=metrics_payload["alpha"],
        epoch_metrics=metrics_payload["epochs"],
        final_metrics={
            t: MetricReport.from_dict(r) for t, r in metrics_payload["final"].items()
        },
        predictions=predictions,
        checkpoint=checkpoint,
    )
