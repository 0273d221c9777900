"""Project relational and event annotations onto sentence-level label sets.

Covers the corpus-shaping steps that turn clause-pair treebank relations and
event-nugget annotations into per-sentence tag sets, reduce tag inventories
through a heuristic many-to-one map, filter rare tags and off-topic
documents, and match an auxiliary corpus to the document-length distribution
of a target corpus.

Relation input is JSONL with sentence-index spans already resolved upstream::

    {"doc_id": str, "label": str, "span_a": [first, last], "span_b": [first, last]}

Spans are inclusive sentence-index intervals. Event nuggets come as::

    {"doc_id": str, "sentence_index": int, "event_type": str}

Tag maps are two-column TSV (source-tag TAB target-class) with ``#``
comments; a target of ``-`` puts the source tag on the drop list. Target
classes are implicitly mapped to themselves, which makes mapping idempotent.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, Document, Sentence, TaskSpec
from .validation import ValidationError

# Temporal-relation whitelist used to slim the PDTB label space down to the
# senses that discriminate before/after structure around a main event.
PDTB_TEMPORAL_TAGS = frozenset(
    {"Temporal", "Asynchronous", "Precedence", "Synchrony", "Succession"}
)

KBP_EVENT_TYPES = frozenset({"Actual Event", "Generic Event", "Event Mention", "Other"})


class AdapterError(ValidationError):
    pass


@dataclass(frozen=True)
class RelationRecord:
    """One clause-pair relation with both spans resolved to sentence indices."""

    doc_id: str
    label: str
    span_a: tuple[int, int]
    span_b: tuple[int, int]

    def __post_init__(self):
        if not self.label:
            raise AdapterError(f"relation in {self.doc_id!r} has an empty label")
        for span in (self.span_a, self.span_b):
            if len(span) != 2 or span[0] > span[1] or span[0] < 0:
                raise AdapterError(f"relation {self.label!r} in {self.doc_id!r}: bad span {span}")

    def touched_sentences(self) -> set[int]:
        touched = set(range(self.span_a[0], self.span_a[1] + 1))
        touched.update(range(self.span_b[0], self.span_b[1] + 1))
        return touched


@dataclass(frozen=True)
class TagMap:
    """Many-to-one source-tag to target-class map plus a drop list."""

    mapping: dict[str, str]
    drop: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "mapping", dict(self.mapping))
        object.__setattr__(self, "drop", frozenset(self.drop))

    def targets(self) -> set[str]:
        return set(self.mapping.values())

    def apply(self, tag: str) -> str | None:
        """Target class for ``tag``, None if dropped. Unknown tags raise."""
        if tag in self.mapping:
            return self.mapping[tag]
        if tag in self.drop:
            return None
        if tag in self.targets():
            return tag
        raise AdapterError(f"tag {tag!r} is neither mapped nor on the drop list")


def load_tag_map(path: str | Path) -> TagMap:
    mapping: dict[str, str] = {}
    drop: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise AdapterError(f"{path}: line {lineno}: expected two tab-separated columns")
            source, target = parts[0].strip(), parts[1].strip()
            if target == "-":
                drop.add(source)
            else:
                mapping[source] = target
    return TagMap(mapping=mapping, drop=frozenset(drop))


def load_relations(path: str | Path) -> list[RelationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(
                RelationRecord(
                    doc_id=raw["doc_id"],
                    label=raw["label"],
                    span_a=tuple(raw["span_a"]),
                    span_b=tuple(raw["span_b"]),
                )
            )
    return records


def load_nuggets(path: str | Path) -> dict[str, list[tuple[int, str]]]:
    """Event nuggets grouped by doc_id, as (sentence_index, event_type) pairs."""
    by_doc: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            by_doc.setdefault(raw["doc_id"], []).append(
                (int(raw["sentence_index"]), raw["event_type"])
            )
    return by_doc


# ---------------------------------------------------------------------------
# Projections


def project_relations_to_sentences(
    doc: Document, relations: Iterable[RelationRecord]
) -> list[set[str]]:
    """Per-sentence sets of relation labels touching each sentence.

    A sentence receives label ``r`` iff some relation labeled ``r`` touches
    it on either side; duplicates collapse. Returns one (possibly empty) set
    per sentence.
    """
    label_sets: list[set[str]] = [set() for _ in doc.sentences]
    n = len(doc.sentences)
    for rel in relations:
        if rel.doc_id != doc.doc_id:
            continue
        touched = rel.touched_sentences()
        if touched and max(touched) >= n:
            raise AdapterError(
                f"relation {rel.label!r} spans sentence {max(touched)} outside "
                f"document {doc.doc_id!r} of length {n}"
            )
        for j in touched:
            label_sets[j].add(rel.label)
    return label_sets


def map_tags(label_sets: Sequence[set[str]], tag_map: TagMap) -> list[set[str]]:
    """Replace tags by their target classes; drop-listed tags are removed.

    Raises listing every tag that is neither mapped nor dropped. Empty
    output sets are preserved. Idempotent on its own output because target
    classes map to themselves.
    """
    known = set(tag_map.mapping) | tag_map.drop | tag_map.targets()
    unknown = sorted({tag for labels in label_sets for tag in labels} - known)
    if unknown:
        raise AdapterError(f"tags neither mapped nor dropped: {', '.join(unknown)}")
    mapped: list[set[str]] = []
    for labels in label_sets:
        out = {tag_map.apply(tag) for tag in labels}
        out.discard(None)
        mapped.append(out)  # type: ignore[arg-type]
    return mapped


def project_event_nuggets(
    doc: Document,
    nuggets: Iterable[tuple[int, str]],
    allowed_types: frozenset[str] = KBP_EVENT_TYPES,
) -> list[set[str]]:
    """Per-sentence sets of event types for all triggers inside each sentence."""
    label_sets: list[set[str]] = [set() for _ in doc.sentences]
    n = len(doc.sentences)
    for sentence_index, event_type in nuggets:
        if event_type not in allowed_types:
            raise AdapterError(f"unknown event type {event_type!r} in {doc.doc_id!r}")
        if not (0 <= sentence_index < n):
            raise AdapterError(
                f"event trigger at sentence {sentence_index} outside "
                f"document {doc.doc_id!r} of length {n}"
            )
        label_sets[sentence_index].add(event_type)
    return label_sets


def attach_labels(
    doc: Document,
    task: str,
    label_sets: Sequence[set[str]],
    vocabulary: Sequence[str],
    include_empty: bool = False,
) -> Document:
    """New document whose sentences carry ``task`` labels from ``label_sets``.

    Sentences with an empty set stay unannotated for the task (excluded from
    its loss and metrics) unless ``include_empty`` marks them as covered
    negative examples.
    """
    if len(label_sets) != len(doc.sentences):
        raise AdapterError(
            f"{doc.doc_id!r}: {len(label_sets)} label sets for {len(doc.sentences)} sentences"
        )
    index = {label: i for i, label in enumerate(vocabulary)}
    sentences = []
    for sent, labels in zip(doc.sentences, label_sets):
        new_labels = dict(sent.labels)
        if labels or include_empty:
            new_labels[task] = frozenset(index[tag] for tag in sorted(labels))
        sentences.append(Sentence(text=sent.text, index=sent.index, labels=new_labels))
    return Document(
        doc_id=doc.doc_id,
        headline=doc.headline,
        source=doc.source,
        split=doc.split,
        sentences=tuple(sentences),
    )


# ---------------------------------------------------------------------------
# Filters


def expand_label_path(label: str) -> list[str]:
    """Split a dotted hierarchical sense path into its component labels."""
    return [part for part in label.split(".") if part]


def filter_pdtb_temporal(
    relations: Iterable[RelationRecord],
    docs: Iterable[Document],
    whitelist: frozenset[str] = PDTB_TEMPORAL_TAGS,
) -> tuple[list[RelationRecord], list[Document]]:
    """Keep only whitelisted temporal senses and the documents carrying them.

    Hierarchical sense paths (dot-separated) contribute every whitelisted
    component as its own relation; documents left with zero surviving
    relations are removed.
    """
    surviving: list[RelationRecord] = []
    docs_with_relations: set[str] = set()
    for rel in relations:
        kept = [part for part in expand_label_path(rel.label) if part in whitelist]
        for part in dict.fromkeys(kept):
            surviving.append(
                RelationRecord(doc_id=rel.doc_id, label=part, span_a=rel.span_a, span_b=rel.span_b)
            )
            docs_with_relations.add(rel.doc_id)
    kept_docs = [d for d in docs if d.doc_id in docs_with_relations]
    return surviving, kept_docs


def filter_rare_tags(corpus: Corpus, task: str, min_sentences: int) -> Corpus:
    """Drop ``task`` labels that appear in at most ``min_sentences`` training sentences.

    Counts come from the train split only; surviving tags are removed from
    the vocabulary and from every sentence in every split. A cut that leaves
    fewer than two tags fails downstream vocabulary validation.
    """
    spec = corpus.task(task)
    counts = {label: 0 for label in spec.vocabulary}
    for _, sent in corpus.covered_sentences(task, "train"):
        value = sent.labels[task]
        ids = [value] if spec.kind == "multiclass" else sorted(value)
        for label_id in set(ids):
            counts[spec.vocabulary[label_id]] += 1
    kept = [label for label in spec.vocabulary if counts[label] > min_sentences]
    new_spec = TaskSpec(
        name=spec.name,
        kind=spec.kind,
        vocabulary=tuple(kept),
        loss=spec.loss,
        alpha_default=spec.alpha_default,
    )
    old_to_new = {spec.label_id(label): i for i, label in enumerate(kept)}

    new_docs = []
    for doc in corpus.documents:
        sentences = []
        for sent in doc.sentences:
            labels = dict(sent.labels)
            if task in labels:
                value = labels[task]
                if spec.kind == "multiclass":
                    if value in old_to_new:
                        labels[task] = old_to_new[value]
                    else:
                        del labels[task]
                else:
                    remapped = frozenset(old_to_new[i] for i in value if i in old_to_new)
                    if remapped or value == frozenset():
                        labels[task] = remapped
                    else:
                        del labels[task]
            sentences.append(Sentence(text=sent.text, index=sent.index, labels=labels))
        new_docs.append(
            Document(
                doc_id=doc.doc_id,
                headline=doc.headline,
                source=doc.source,
                split=doc.split,
                sentences=tuple(sentences),
            )
        )
    tasks = tuple(new_spec if t.name == task else t for t in corpus.tasks)
    return Corpus(tasks=tasks, documents=tuple(new_docs))


# ---------------------------------------------------------------------------
# Length-distribution matching


def downsample_to_length_distribution(
    aux: Corpus,
    target: Corpus,
    seed: int,
    max_documents: int | None = None,
) -> Corpus:
    """Subset of ``aux`` documents matching ``target``'s length histogram.

    Length is the number of sentences per document. The target's decile bins
    define the histogram; documents are rejection-sampled per bin so the
    retained set's bin proportions track the target's. Deterministic given
    the seed. Bins the auxiliary corpus cannot fill are filled to capacity
    with a warning.
    """
    if not aux.documents or not target.documents:
        raise AdapterError("both corpora must be non-empty")
    target_lengths = np.array([len(d) for d in target.documents], dtype=float)
    edges = np.quantile(target_lengths, np.linspace(0.0, 1.0, 11))

    def bin_of(length: int) -> int | None:
        if length < edges[0] or length > edges[-1]:
            return None
        # right-closed last bin so the maximum length lands in bin 9
        idx = int(np.searchsorted(edges[1:-1], length, side="right"))
        return min(idx, 9)

    target_bins = np.zeros(10, dtype=float)
    for length in target_lengths:
        b = bin_of(int(length))
        target_bins[b] += 1
    proportions = target_bins / target_bins.sum()

    aux_by_bin: dict[int, list[Document]] = {b: [] for b in range(10)}
    dropped = 0
    for doc in aux.documents:
        b = bin_of(len(doc))
        if b is None:
            dropped += 1
        else:
            aux_by_bin[b].append(doc)

    if dropped == len(aux.documents):
        warnings.warn("no auxiliary document falls inside the target length range")
        return Corpus(tasks=aux.tasks, documents=())

    feasible = [
        len(aux_by_bin[b]) / proportions[b]
        for b in range(10)
        if proportions[b] > 0 and aux_by_bin[b]
    ]
    total = int(min(feasible)) if feasible else 0
    if max_documents is not None:
        total = min(total, max_documents)

    rng = random.Random(seed)
    selected_ids: set[str] = set()
    for b in range(10):
        if proportions[b] == 0:
            continue
        want = int(round(proportions[b] * total))
        have = aux_by_bin[b]
        if want > len(have):
            warnings.warn(
                f"length bin {b} needs {want} documents but only {len(have)} available; "
                "filling to capacity"
            )
            want = len(have)
        chosen = rng.sample(sorted(have, key=lambda d: d.doc_id), want)
        selected_ids.update(d.doc_id for d in chosen)

    documents = tuple(d for d in aux.documents if d.doc_id in selected_ids)
    return Corpus(tasks=aux.tasks, documents=documents)
