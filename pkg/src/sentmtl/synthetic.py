"""Synthetic corpora for desk-scale experiments.

Generates an imbalanced multiclass primary task plus an auxiliary task
whose labels correlate, by construction, with the primary task's rarest
classes. Each class owns a pool of signature tokens; sentences mix
signature tokens with shared noise tokens, so the toy hash embedder can
learn class structure while rare classes stay data-starved on the primary
side. Auxiliary-only documents oversample rare-class sentences, carrying
the correlated signal the multitask setup exploits.

Class assignment uses exact shuffled quotas, so the generated imbalance
ratio matches the requested proportions rather than drifting with sampling
noise.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Corpus, Document, Sentence, TaskSpec
from .validation import ValidationError, derive_seed

PRIMARY_TASK = "core"
AUX_TASK = "marker"


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_primary_docs: int = 80
    n_aux_docs: int = 160
    sentences_per_doc: int = 8
    primary_proportions: tuple[float, ...] = (0.30, 0.24, 0.20, 0.16, 0.05, 0.05)
    aux_proportions: tuple[float, ...] = (0.125, 0.125, 0.125, 0.125, 0.25, 0.25)
    rare_classes: tuple[int, ...] = (4, 5)
    marker_noise: float = 0.03
    signature_tokens: int = 4
    noise_tokens: int = 4
    pool_size: int = 40
    noise_pool: int = 200
    dev_fraction: float = 0.2
    test_fraction: float = 0.2

    def __post_init__(self):
        if abs(sum(self.primary_proportions) - 1.0) > 1e-9:
            raise ValidationError("primary proportions must sum to 1")
        if abs(sum(self.aux_proportions) - 1.0) > 1e-9:
            raise ValidationError("aux proportions must sum to 1")
        if len(self.aux_proportions) != len(self.primary_proportions):
            raise ValidationError("proportions must cover the same classes")
        if any(c >= len(self.primary_proportions) for c in self.rare_classes):
            raise ValidationError("rare class index out of range")


def _quota_assignment(total: int, proportions: tuple[float, ...],
                      rng: random.Random) -> list[int]:
    counts = [int(round(p * total)) for p in proportions]
    while sum(counts) < total:
        counts[counts.index(max(counts))] += 1
    while sum(counts) > total:
        counts[counts.index(max(counts))] -= 1
    assignment = [c for c, n in enumerate(counts) for _ in range(n)]
    rng.shuffle(assignment)
    return assignment


def _sentence_text(klass: int, spec: SyntheticSpec, rng: random.Random) -> str:
    tokens = [
        f"w{klass}_{rng.randrange(spec.pool_size)}" for _ in range(spec.signature_tokens)
    ]
    tokens += [f"n_{rng.randrange(spec.noise_pool)}" for _ in range(spec.noise_tokens)]
    rng.shuffle(tokens)
    return " ".join(tokens)


def _marker_label(klass: int, spec: SyntheticSpec, rng: random.Random) -> int:
    """Aux label ids: 0 = none, 1 + position = marker for that rare class."""
    if klass in spec.rare_classes:
        true_label = 1 + spec.rare_classes.index(klass)
    else:
        true_label = 0
    if rng.random() < spec.marker_noise:
        others = [i for i in range(1 + len(spec.rare_classes)) if i != true_label]
        return others[rng.randrange(len(others))]
    return true_label


def make_multitask_corpus(spec: SyntheticSpec) -> Corpus:
    """Primary + auxiliary corpus with construction-level label correlation.

    Primary documents carry both tasks' labels on every sentence and split
    train/dev/test; auxiliary-only documents carry marker labels and live
    entirely in the train split.
    """
    k = len(spec.primary_proportions)
    primary_spec = TaskSpec(
        name=PRIMARY_TASK,
        kind="multiclass",
        vocabulary=tuple(f"c{i}" for i in range(k)),
        loss={"kind": "ce"},
        alpha_default=1.0,
    )
    aux_spec = TaskSpec(
        name=AUX_TASK,
        kind="multiclass",
        vocabulary=("none",) + tuple(f"m{c}" for c in spec.rare_classes),
        loss={"kind": "ce"},
        alpha_default=0.3,
    )

    documents: list[Document] = []

    text_rng = random.Random(derive_seed(spec.seed, "synthetic", "text"))
    class_rng = random.Random(derive_seed(spec.seed, "synthetic", "classes"))
    marker_rng = random.Random(derive_seed(spec.seed, "synthetic", "marker"))

    n_primary_sentences = spec.n_primary_docs * spec.sentences_per_doc
    primary_classes = _quota_assignment(
        n_primary_sentences, spec.primary_proportions, class_rng
    )
    n_dev = int(spec.n_primary_docs * spec.dev_fraction)
    n_test = int(spec.n_primary_docs * spec.test_fraction)
    for d in range(spec.n_primary_docs):
        if d < spec.n_primary_docs - n_dev - n_test:
            split = "train"
        elif d < spec.n_primary_docs - n_test:
            split = "dev"
        else:
            split = "test"
        sentences = []
        for j in range(spec.sentences_per_doc):
            klass = primary_classes[d * spec.sentences_per_doc + j]
            sentences.append(
                Sentence(
                    text=_sentence_text(klass, spec, text_rng),
                    index=j,
                    labels={
                        PRIMARY_TASK: klass,
                        AUX_TASK: _marker_label(klass, spec, marker_rng),
                    },
                )
            )
        documents.append(
            Document(doc_id=f"p{d:04d}", split=split, source="synthetic-primary",
                     sentences=tuple(sentences)))

    n_aux_sentences = spec.n_aux_docs * spec.sentences_per_doc
    aux_classes = _quota_assignment(n_aux_sentences, spec.aux_proportions, class_rng)
    for d in range(spec.n_aux_docs):
        sentences = []
        for j in range(spec.sentences_per_doc):
            klass = aux_classes[d * spec.sentences_per_doc + j]
            sentences.append(
                Sentence(
                    text=_sentence_text(klass, spec, text_rng),
                    index=j,
                    labels={AUX_TASK: _marker_label(klass, spec, marker_rng)},
                )
            )
        documents.append(
            Document(doc_id=f"a{d:04d}", split="train", source="synthetic-aux",
                     sentences=tuple(sentences)))

    return Corpus(tasks=(primary_spec, aux_spec), documents=tuple(documents))


@dataclass(frozen=True)
class SeparableSpec:
    """Linearly separable single-task corpus for convergence checks."""

    seed: int = 0
    n_docs: int = 40
    sentences_per_doc: int = 6
    n_classes: int = 3
    signature_tokens: int = 6
    pool_size: int = 8


def make_separable_corpus(spec: SeparableSpec) -> Corpus:
    """Single multiclass task whose classes use disjoint token pools only."""
    task = TaskSpec(
        name=PRIMARY_TASK,
        kind="multiclass",
        vocabulary=tuple(f"c{i}" for i in range(spec.n_classes)),
        loss={"kind": "ce"},
    )
    rng = random.Random(derive_seed(spec.seed, "separable"))
    documents = []
    n_dev = max(1, spec.n_docs // 5)
    for d in range(spec.n_docs):
        split = "dev" if d >= spec.n_docs - n_dev else "train"
        sentences = []
        for j in range(spec.sentences_per_doc):
            klass = rng.randrange(spec.n_classes)
            tokens = [
                f"s{klass}_{rng.randrange(spec.pool_size)}"
                for _ in range(spec.signature_tokens)
            ]
            sentences.append(
                Sentence(text=" ".join(tokens), index=j, labels={PRIMARY_TASK: klass})
            )
        documents.append(
            Document(doc_id=f"d{d:04d}", split=split, source="synthetic-separable",
                     sentences=tuple(sentences)))
    return Corpus(tasks=(task,), documents=tuple(documents))
