"""Label-preserving training-data augmentation via pluggable backtranslation.

Augmenters paraphrase one sentence at a time through a pivot
(translate out, translate back) with temperature-controlled sampling
diversity; every sample is deterministic given (text, seed, sample index).
Real translation models stay outside the package: a seeded mock ships for
tests and experiments, and an adapter speaks a line-in/line-out protocol to
external translator processes over standard streams.

Corpus expansion keeps document structure intact: each training document
contributes whole-document paraphrase copies whose sentences carry the
original label sequence. Dev and test splits are never touched.
"""

from __future__ import annotations

import random
import subprocess
import warnings
from typing import Sequence

from .corpus import Corpus, Document, Sentence
from .validation import ValidationError, derive_seed


class Augmenter:
    """Backtranslation-shaped paraphrase source.

    Subclasses implement the two translation legs; ``paraphrase`` wires
    them together with a sample-keyed random stream.
    """

    def __init__(self, temperature: float = 0.8, seed: int = 0):
        if temperature < 0:
            raise ValidationError("temperature must be >= 0")
        self.temperature = temperature
        self.seed = seed

    def translate_out(self, text: str, rng: random.Random) -> str:
        raise NotImplementedError

    def translate_back(self, text: str, rng: random.Random) -> str:
        raise NotImplementedError

    def paraphrase(self, text: str, sample_index: int) -> str:
        rng = random.Random(derive_seed(self.seed, "augment", text, str(sample_index)))
        pivot = self.translate_out(text, rng)
        result = self.translate_back(pivot, rng)
        if text and not result:
            raise ValidationError("augmenter produced empty output for non-empty input")
        return result


class MockBacktranslator(Augmenter):
    """Deterministic stand-in for sampling-based backtranslation.

    Emulates the lexical and ordering noise of a round trip through a pivot
    language: tokens are swapped with near neighbours and substituted with
    synonym variants at rates scaled by the temperature. At temperature 0
    the round trip is the identity, mirroring greedy decoding.
    """

    def __init__(self, temperature: float = 0.8, seed: int = 0,
                 synonyms: dict[str, list[str]] | None = None,
                 n_variants: int = 3, substitution_rate: float = 0.3,
                 swap_rate: float = 0.1):
        super().__init__(temperature=temperature, seed=seed)
        self.synonyms = synonyms or {}
        self.n_variants = n_variants
        self.substitution_rate = substitution_rate
        self.swap_rate = swap_rate

    def translate_out(self, text: str, rng: random.Random) -> str:
        tokens = text.split()
        p_swap = min(1.0, self.temperature * self.swap_rate)
        i = 0
        while i < len(tokens) - 1:
            if rng.random() < p_swap:
                tokens[i], tokens[i + 1] = tokens[i + 1], tokens[i]
                i += 2
            else:
                i += 1
        return " ".join(tokens)

    def translate_back(self, text: str, rng: random.Random) -> str:
        tokens = text.split()
        p_sub = min(1.0, self.temperature * self.substitution_rate)
        out = []
        for token in tokens:
            if rng.random() < p_sub:
                choices = self.synonyms.get(token)
                if choices:
                    out.append(choices[rng.randrange(len(choices))])
                else:
                    out.append(f"{token}~{rng.randrange(1, self.n_variants + 1)}")
            else:
                out.append(token)
        return " ".join(out)


class ExternalProcessAugmenter(Augmenter):
    """Adapter for external translator processes.

    Each leg is a command that reads one UTF-8 line from stdin and writes
    the translated line to stdout. Sampling temperature and seeding are the
    external process's responsibility.
    """

    def __init__(self, out_command: Sequence[str], back_command: Sequence[str],
                 temperature: float = 0.8, seed: int = 0, timeout: float = 30.0):
        super().__init__(temperature=temperature, seed=seed)
        self.out_command = list(out_command)
        self.back_command = list(back_command)
        self.timeout = timeout

    def _roundtrip(self, command: list[str], text: str) -> str:
        line = text.replace("\n", " ")
        result = subprocess.run(
            command,
            input=line + "\n",
            capture_output=True,
            text=True,
            timeout=self.timeout,
        )
        if result.returncode != 0:
            raise ValidationError(
                f"translator {command[0]!r} exited {result.returncode}: {result.stderr.strip()}"
            )
        return result.stdout.splitlines()[0] if result.stdout else ""

    def translate_out(self, text: str, rng: random.Random) -> str:
        return self._roundtrip(self.out_command, text)

    def translate_back(self, text: str, rng: random.Random) -> str:
        return self._roundtrip(self.back_command, text)


def augment_sentence(text: str, augmenter: Augmenter, n: int) -> list[str]:
    """``n`` paraphrases of one sentence; duplicates are possible.

    Individual augmenter failures are skipped with a warning, so the result
    may be shorter than ``n``.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    out = []
    failures = 0
    for i in range(n):
        try:
            out.append(augmenter.paraphrase(text, i))
        except Exception as exc:  # augmenter plug-ins may fail arbitrarily
            failures += 1
            warnings.warn(f"augmenter failed on sample {i}: {exc}")
    if failures:
        warnings.warn(f"returning {len(out)} of {n} requested augmentations")
    return out


def expand_training_set(corpus: Corpus, augmenter: Augmenter, n: int) -> Corpus:
    """Add ``n`` whole-document paraphrase copies of every training document.

    Copies keep the sentence count and the full label sequence of their
    source; dev and test documents pass through untouched. ``n = 0`` is the
    identity.
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    if n == 0:
        return corpus
    augmented: list[Document] = []
    for doc in corpus.documents:
        if doc.split != "train":
            continue
        for copy in range(1, n + 1):
            sentences = tuple(
                Sentence(
                    text=augmenter.paraphrase(sent.text, copy),
                    index=sent.index,
                    labels=dict(sent.labels),
                )
                for sent in doc.sentences
            )
            headline = (
                augmenter.paraphrase(doc.headline, copy) if doc.headline else doc.headline
            )
            augmented.append(
                Document(
                    doc_id=f"{doc.doc_id}~aug{copy}",
                    headline=headline,
                    source=doc.source,
                    split="train",
                    sentences=sentences,
                )
            )
    return Corpus(tasks=corpus.tasks, documents=tuple(corpus.documents) + tuple(augmented))
