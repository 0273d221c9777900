"""Dataset preparation chains: raw annotations to canonical corpora.

Each dataset entry describes one chain: already-canonical corpora pass
through validation and re-serialization; relation datasets get projected to
sentence label sets, optionally tag-mapped, temporally filtered, rare-tag
cut and length-matched; event-nugget datasets get trigger types projected
per sentence. The chains end in canonical corpus directories, a merged
multitask corpus, and a dataset statistics report (documents, covered
sentences, tag count, imbalance ratio per task).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import adapters
from .corpus import (
    Corpus,
    CorpusFormatError,
    Document,
    TaskSpec,
    class_counts,
    imbalance_ratio,
    load_corpus,
    merge_corpora,
    save_corpus,
)
from .validation import ValidationError, derive_seed

PREP_KINDS = ("passthrough", "relations", "nuggets")


@dataclass(frozen=True)
class DatasetPrep:
    """One dataset's adapter chain."""

    name: str
    kind: str
    out: str
    corpus: str | None = None
    documents: str | None = None
    relations: str | None = None
    nuggets: str | None = None
    tag_map: str | None = None
    pdtb_temporal: bool = False
    min_tag_sentences: int | None = None
    downsample_to: str | None = None
    include_empty: bool = False
    task: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PREP_KINDS:
            raise ValidationError(f"dataset {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "passthrough" and not self.corpus:
            raise ValidationError(f"dataset {self.name!r}: passthrough needs 'corpus'")
        if self.kind == "relations" and not (self.documents and self.relations):
            raise ValidationError(
                f"dataset {self.name!r}: relations chain needs 'documents' and 'relations'"
            )
        if self.kind == "nuggets" and not (self.documents and self.nuggets):
            raise ValidationError(
                f"dataset {self.name!r}: nuggets chain needs 'documents' and 'nuggets'"
            )

    def input_paths(self) -> list[str]:
        paths = [p for p in (self.corpus, self.documents, self.relations,
                             self.nuggets, self.tag_map, self.downsample_to) if p]
        return paths

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetPrep":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown prepare keys: {sorted(unknown)}")
        return cls(**raw)


def load_raw_documents(path: str | Path) -> list[Document]:
    """Documents in the canonical record format but without task labels."""
    from .corpus import Sentence

    documents = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line=lineno) from None
            sentences = []
            for j, sent in enumerate(record["sentences"]):
                if sent.get("labels"):
                    raise CorpusFormatError(
                        "raw documents must not carry labels; use a passthrough corpus",
                        line=lineno,
                    )
                sentences.append(Sentence(text=sent["text"], index=j))
            documents.append(
                Document(
                    doc_id=record["doc_id"],
                    headline=record.get("headline"),
                    source=record.get("source", ""),
                    split=record.get("split", "train"),
                    sentences=tuple(sentences),
                )
            )
    return documents


def _task_spec(prep: DatasetPrep, vocabulary: tuple[str, ...]) -> TaskSpec:
    task = dict(prep.task)
    return TaskSpec(
        name=task.get("name", prep.name),
        kind=task.get("kind", "multilabel"),
        vocabulary=vocabulary,
        loss=task.get("loss", {"kind": "bce"}),
        alpha_default=float(task.get("alpha_default", 1.0)),
    )


def prepare_dataset(prep: DatasetPrep, seed: int) -> Corpus:
    """Run one dataset chain and return the resulting corpus (not yet saved)."""
    if prep.kind == "passthrough":
        return load_corpus(prep.corpus)

    docs = load_raw_documents(prep.documents)

    if prep.kind == "relations":
        relations = adapters.load_relations(prep.relations)
        if prep.pdtb_temporal:
            relations, docs = adapters.filter_pdtb_temporal(relations, docs)
        tag_map = adapters.load_tag_map(prep.tag_map) if prep.tag_map else None
        by_doc: dict[str, list[adapters.RelationRecord]] = {}
        for rel in relations:
            by_doc.setdefault(rel.doc_id, []).append(rel)
        per_doc_labels = {}
        for doc in docs:
            label_sets = adapters.project_relations_to_sentences(doc, by_doc.get(doc.doc_id, []))
            if tag_map is not None:
                label_sets = adapters.map_tags(label_sets, tag_map)
            per_doc_labels[doc.doc_id] = label_sets
    else:
        nuggets = adapters.load_nuggets(prep.nuggets)
        per_doc_labels = {
            doc.doc_id: adapters.project_event_nuggets(doc, nuggets.get(doc.doc_id, []))
            for doc in docs
        }

    explicit_vocab = prep.task.get("vocabulary")
    if explicit_vocab:
        vocabulary = tuple(explicit_vocab)
    else:
        vocabulary = tuple(
            sorted({tag for sets in per_doc_labels.values() for tags in sets for tag in tags})
        )
    spec = _task_spec(prep, vocabulary)

    labeled = [
        adapters.attach_labels(
            doc, spec.name, per_doc_labels[doc.doc_id], spec.vocabulary,
            include_empty=prep.include_empty,
        )
        for doc in docs
    ]
    corpus = Corpus(tasks=(spec,), documents=tuple(labeled))

    if prep.min_tag_sentences is not None:
        corpus = adapters.filter_rare_tags(corpus, spec.name, prep.min_tag_sentences)

    if prep.downsample_to:
        target = load_corpus(prep.downsample_to)
        corpus = adapters.downsample_to_length_distribution(
            corpus, target, seed=derive_seed(seed, "downsample", prep.name)
        )
    return corpus


def corpus_statistics(corpus: Corpus, dataset: str) -> list[dict]:
    """Table-style dataset statistics, one row per task."""
    rows = []
    for spec in corpus.tasks:
        covered = sum(
            1
            for split in ("train", "dev", "test")
            for _ in corpus.covered_sentences(spec.name, split)
        )
        totals = {label: 0 for label in spec.vocabulary}
        for split in ("train", "dev", "test"):
            if not corpus.split_documents(split):
                continue
            for label, count in class_counts(corpus, spec.name, split) or []:
                totals[label] += count
        counts_sorted = sorted(totals.values(), reverse=True)
        try:
            imbalance = imbalance_ratio(counts_sorted, spec.k)
        except ValidationError:
            imbalance = None
        rows.append(
            {
                "dataset": dataset,
                "task": spec.name,
                "documents": len(corpus.documents),
                "sentences": covered,
                "tags": spec.k,
                "type": "MC" if spec.kind == "multiclass" else "ML",
                "imbalance": imbalance,
            }
        )
    return rows


def write_statistics(rows: list[dict], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stats.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(rows, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    fields = ["dataset", "task", "documents", "sentences", "tags", "type", "imbalance"]
    with open(out / "stats.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})


def prepare_all(
    datasets: list[DatasetPrep],
    seed: int,
    merged_out: str | Path | None = None,
    stats_out: str | Path | None = None,
) -> Corpus:
    """Run every chain, save per-dataset corpora, merge, and write stats."""
    if not datasets:
        raise ValidationError("prepare needs at least one dataset")
    corpora = []
    stats_rows = []
    for prep in datasets:
        for path in prep.input_paths():
            if not Path(path).exists():
                raise ValidationError(f"dataset {prep.name!r}: missing input {path}")
        corpus = prepare_dataset(prep, seed)
        save_corpus(corpus, prep.out)
        stats_rows.extend(corpus_statistics(corpus, prep.name))
        corpora.append(corpus)
    merged = merge_corpora(corpora)
    if merged_out is not None:
        save_corpus(merged, merged_out)
    if stats_out is not None:
        write_statistics(stats_rows, stats_out)
    return merged
