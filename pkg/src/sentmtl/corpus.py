"""Canonical multi-task sentence-labeled corpus: types, IO, statistics.

A corpus lives on disk as a directory with two files:

* ``tasks.json`` — list of task declarations (name, kind, vocabulary,
  loss settings, default weight).
* ``documents.jsonl`` — one document per line::

    {"doc_id": str, "headline": str|null, "source": str,
     "split": "train"|"dev"|"test",
     "sentences": [{"text": str, "labels": {task: str | [str, ...]}}]}

UTF-8, LF line endings. Labels are strings in files and are interned to
integer ids (positions in the task vocabulary) at load time. In-memory
objects are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .validation import ValidationError

SPLITS = ("train", "dev", "test")

MULTICLASS = "multiclass"
MULTILABEL = "multilabel"


class CorpusFormatError(ValueError):
    """Malformed on-disk record; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class CorpusValidationError(ValidationError):
    """Structurally valid file whose content violates a corpus invariant."""


@dataclass(frozen=True)
class TaskSpec:
    """A named classification task over sentence labels.

    ``kind`` is ``multiclass`` (exactly one label per covered sentence) or
    ``multilabel`` (zero or more). ``loss`` holds the loss identifier and
    parameters as a plain mapping; it is interpreted by the trainer.
    """

    name: str
    kind: str
    vocabulary: tuple[str, ...]
    loss: Mapping[str, object] = field(default_factory=lambda: {"kind": "ce"})
    alpha_default: float = 1.0

    def __post_init__(self):
        if self.kind not in (MULTICLASS, MULTILABEL):
            raise CorpusValidationError(f"task {self.name!r}: unknown kind {self.kind!r}")
        if len(self.vocabulary) < 2:
            raise CorpusValidationError(f"task {self.name!r}: vocabulary needs k >= 2 labels")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise CorpusValidationError(f"task {self.name!r}: duplicate vocabulary labels")
        if self.alpha_default < 0:
            raise CorpusValidationError(f"task {self.name!r}: alpha_default must be >= 0")
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "loss", dict(self.loss))

    @property
    def k(self) -> int:
        return len(self.vocabulary)

    def label_id(self, label: str) -> int:
        try:
            return self.vocabulary.index(label)
        except ValueError:
            raise CorpusValidationError(
                f"label {label!r} not in vocabulary of task {self.name!r}"
            ) from None

    def label_name(self, label_id: int) -> str:
        return self.vocabulary[label_id]


@dataclass(frozen=True)
class Sentence:
    """One sentence with its 0-based position and per-task label ids.

    ``labels`` maps task name to a single label id (multiclass) or a
    frozenset of ids (multilabel). A task absent from the map does not
    cover this sentence.
    """

    text: str
    index: int
    labels: Mapping[str, int | frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "labels", dict(self.labels))


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]
    split: str = "train"
    headline: str | None = None
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise CorpusValidationError(f"document {self.doc_id!r} has no sentences")
        if self.split not in SPLITS:
            raise CorpusValidationError(f"document {self.doc_id!r}: unknown split {self.split!r}")
        for j, sent in enumerate(self.sentences):
            if sent.index != j:
                raise CorpusValidationError(
                    f"document {self.doc_id!r}: sentence index {sent.index} at position {j}; "
                    "indices must be contiguous from 0"
                )

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Corpus:
    tasks: tuple[TaskSpec, ...]
    documents: tuple[Document, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "documents", tuple(self.documents))
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise CorpusValidationError("duplicate task names")
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise CorpusValidationError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
        by_name = {t.name: t for t in self.tasks}
        for doc in self.documents:
            for sent in doc.sentences:
                for task_name, value in sent.labels.items():
                    task = by_name.get(task_name)
                    if task is None:
                        raise CorpusValidationError(
                            f"document {doc.doc_id!r} sentence {sent.index}: "
                            f"labels reference undeclared task {task_name!r}"
                        )
                    _check_label_value(task, value, doc.doc_id, sent.index)

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise CorpusValidationError(f"unknown task {name!r}")

    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]

    def split_documents(self, split: str) -> list[Document]:
        if split not in SPLITS:
            raise CorpusValidationError(f"unknown split {split!r}")
        return [d for d in self.documents if d.split == split]

    def task_documents(self, task: str, split: str) -> list[Document]:
        """Documents in ``split`` with at least one sentence covered by ``task``."""
        self.task(task)
        return [
            d
            for d in self.split_documents(split)
            if any(task in s.labels for s in d.sentences)
        ]

    def covered_sentences(self, task: str, split: str) -> Iterator[tuple[Document, Sentence]]:
        self.task(task)
        for doc in self.split_documents(split):
            for sent in doc.sentences:
                if task in sent.labels:
                    yield doc, sent


def _check_label_value(task: TaskSpec, value, doc_id: str, sent_index: int) -> None:
    where = f"task {task.name!r}, document {doc_id!r}, sentence {sent_index}"
    if task.kind == MULTICLASS:
        if not isinstance(value, int):
            raise CorpusValidationError(f"{where}: multiclass task needs exactly one label")
        ids = [value]
    else:
        if not isinstance(value, frozenset):
            raise CorpusValidationError(f"{where}: multilabel task needs a set of labels")
        ids = sorted(value)
    for label_id in ids:
        if not (0 <= label_id < task.k):
            raise CorpusValidationError(f"{where}: label id {label_id} out of range")


# ---------------------------------------------------------------------------
# IO


def _intern_labels(task_by_name: Mapping[str, TaskSpec], raw: Mapping[str, object],
                   doc_id: str, sent_index: int) -> dict[str, int | frozenset[int]]:
    labels: dict[str, int | frozenset[int]] = {}
    for task_name, value in raw.items():
        task = task_by_name.get(task_name)
        if task is None:
            raise CorpusValidationError(
                f"document {doc_id!r} sentence {sent_index}: undeclared task {task_name!r}"
            )
        where = f"task {task_name!r}, document {doc_id!r}, sentence {sent_index}"
        if task.kind == MULTICLASS:
            if not isinstance(value, str):
                raise CorpusValidationError(f"{where}: multiclass label must be a single string")
            labels[task_name] = _resolve(task, value, where)
        else:
            if isinstance(value, str):
                value = [value]
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise CorpusValidationError(f"{where}: multilabel labels must be a list of strings")
            labels[task_name] = frozenset(_resolve(task, v, where) for v in value)
    return labels


def _resolve(task: TaskSpec, label: str, where: str) -> int:
    try:
        return task.vocabulary.index(label)
    except ValueError:
        raise CorpusValidationError(f"{where}: unknown label {label!r}") from None


def _task_from_dict(entry: Mapping[str, object]) -> TaskSpec:
    try:
        return TaskSpec(
            name=entry["name"],
            kind=entry.get("kind", MULTICLASS),
            vocabulary=tuple(entry["vocabulary"]),
            loss=entry.get("loss", {"kind": "ce"}),
            alpha_default=float(entry.get("alpha_default", 1.0)),
        )
    except KeyError as exc:
        raise CorpusFormatError(f"task declaration missing key {exc}") from None


def _resolve_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        return path / "tasks.json", path / "documents.jsonl"
    if path.name == "documents.jsonl":
        return path.parent / "tasks.json", path
    raise CorpusFormatError(f"{path} is not a corpus directory or documents.jsonl file")


def load_corpus(path: str | Path) -> Corpus:
    """Load and fully validate a corpus from its canonical on-disk form."""
    tasks_path, docs_path = _resolve_paths(path)
    if not tasks_path.exists():
        raise CorpusFormatError(f"missing task declarations: {tasks_path}")
    if not docs_path.exists():
        raise CorpusFormatError(f"missing documents file: {docs_path}")

    with open(tasks_path, encoding="utf-8") as fh:
        try:
            task_entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid tasks.json: {exc}") from None
    tasks = tuple(_task_from_dict(e) for e in task_entries)
    by_name = {t.name: t for t in tasks}

    documents: list[Document] = []
    with open(docs_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line=lineno) from None
            documents.append(_document_from_record(record, by_name, lineno))
    return Corpus(tasks=tasks, documents=tuple(documents))


def _document_from_record(record: Mapping[str, object],
                          task_by_name: Mapping[str, TaskSpec], lineno: int) -> Document:
    for key in ("doc_id", "split", "sentences"):
        if key not in record:
            raise CorpusFormatError(f"document record missing key {key!r}", line=lineno)
    sentences = []
    for j, sent in enumerate(record["sentences"]):
        if "text" not in sent:
            raise CorpusFormatError(
                f"sentence {j} of {record['doc_id']!r} missing 'text'", line=lineno
            )
        labels = _intern_labels(task_by_name, sent.get("labels", {}), record["doc_id"], j)
        sentences.append(Sentence(text=sent["text"], index=j, labels=labels))
    return Document(
        doc_id=record["doc_id"],
        headline=record.get("headline"),
        source=record.get("source", ""),
        split=record["split"],
        sentences=tuple(sentences),
    )


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical form: tasks.json plus documents.jsonl (UTF-8, LF).

    The writer is a fixpoint: saving a loaded corpus reproduces the file
    bytes of any corpus previously written by this function.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    task_entries = [
        {
            "name": t.name,
            "kind": t.kind,
            "vocabulary": list(t.vocabulary),
            "loss": dict(sorted(t.loss.items())),
            "alpha_default": t.alpha_default,
        }
        for t in corpus.tasks
    ]
    with open(out / "tasks.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(task_entries, fh, ensure_ascii=False, indent=2)
        fh.write("\n")

    task_order = corpus.task_names()
    with open(out / "documents.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus.documents:
            fh.write(json.dumps(_document_to_record(doc, corpus, task_order), ensure_ascii=False))
            fh.write("\n")


def _document_to_record(doc: Document, corpus: Corpus, task_order: Sequence[str]) -> dict:
    sentences = []
    for sent in doc.sentences:
        labels: dict[str, object] = {}
        for task_name in task_order:
            if task_name not in sent.labels:
                continue
            task = corpus.task(task_name)
            value = sent.labels[task_name]
            if task.kind == MULTICLASS:
                labels[task_name] = task.label_name(value)
            else:
                labels[task_name] = [task.label_name(i) for i in sorted(value)]
        sentences.append({"text": sent.text, "labels": labels})
    return {
        "doc_id": doc.doc_id,
        "headline": doc.headline,
        "source": doc.source,
        "split": doc.split,
        "sentences": sentences,
    }


def merge_corpora(corpora: Sequence[Corpus]) -> Corpus:
    """Join per-dataset corpora into one multitask corpus.

    Task names and document ids must be globally unique; the merged corpus
    re-validates every invariant.
    """
    if not corpora:
        raise CorpusValidationError("nothing to merge")
    tasks: list[TaskSpec] = []
    documents: list[Document] = []
    for corpus in corpora:
        tasks.extend(corpus.tasks)
        documents.extend(corpus.documents)
    return Corpus(tasks=tuple(tasks), documents=tuple(documents))


# ---------------------------------------------------------------------------
# Statistics


def class_counts(corpus: Corpus, task: str, split: str) -> list[tuple[str, int]]:
    """Per-label assignment counts for ``task`` in ``split``.

    Sorted descending by count, ties broken by vocabulary order. Every
    vocabulary label appears, including zero-count ones. An empty split is
    legal but flagged with a warning.
    """
    spec = corpus.task(task)
    counts = {label: 0 for label in spec.vocabulary}
    covered = 0
    for _, sent in corpus.covered_sentences(task, split):
        covered += 1
        value = sent.labels[task]
        ids = [value] if spec.kind == MULTICLASS else sorted(value)
        for label_id in ids:
            counts[spec.vocabulary[label_id]] += 1
    if covered == 0:
        warnings.warn(f"no sentences covered by task {task!r} in split {split!r}")
        return []
    order = {label: i for i, label in enumerate(spec.vocabulary)}
    return sorted(counts.items(), key=lambda kv: (-kv[1], order[kv[0]]))


def imbalance_ratio(counts: Sequence[int | float], k: int | None = None) -> float:
    """Class-imbalance statistic over descending class counts.

    Mean of the top ``floor(k/2)`` counts divided by the sum of the
    remaining counts over ``floor(k/2) + 1``. For even ``k`` the bottom
    group holds ``k/2`` counts yet is still divided by ``k/2 + 1``; this is
    deliberate and matches the statistic as published (see README notes).
    """
    values = [float(c) for c in counts]
    if k is None:
        k = len(values)
    if k < 2 or len(values) != k:
        raise ValidationError(f"need k >= 2 counts, got k={k} with {len(values)} counts")
    if any(values[i] < values[i + 1] for i in range(len(values) - 1)):
        raise ValidationError("counts must be sorted descending")
    half = k // 2
    top_mean = sum(values[:half]) / half
    bottom_sum = sum(values[half:])
    if bottom_sum == 0:
        raise ValidationError("degenerate corpus: bottom count group sums to zero")
    return top_mean / (bottom_sum / (half + 1))
