"""Task-specific classification heads over contextualized sentence embeddings.

Four head families: plain feed-forward multiclass/multilabel heads, a
linear-chain CRF over the document's sentence sequence, and hierarchical
heads that factor the label space into a-priori clusters, either as a
2-level hierarchy (cluster head plus per-cluster sub-heads) or as one flat
multilabel head over the concatenated cluster/label indicator vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import losses
from .corpus import TaskSpec
from .encoder import reinit_module
from .validation import ValidationError, derive_seed

HEAD_KINDS = (
    "ffnn-multiclass",
    "ffnn-multilabel",
    "crf",
    "hierarchical-2level",
    "hierarchical-flat-multilabel",
)

MULTICLASS_HEADS = {"ffnn-multiclass", "crf", "hierarchical-2level",
                    "hierarchical-flat-multilabel"}


@dataclass(frozen=True)
class HeadConfig:
    task: str
    kind: str = "ffnn-multiclass"
    frozen: bool = False
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValidationError(f"unknown head kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def to_dict(self) -> dict:
        return {"task": self.task, "kind": self.kind, "frozen": self.frozen,
                "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, raw: dict) -> "HeadConfig":
        known = {"task", "kind", "frozen", "hidden"}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown head config keys: {sorted(unknown)}")
        return cls(
            task=raw["task"],
            kind=raw.get("kind", "ffnn-multiclass"),
            frozen=bool(raw.get("frozen", False)),
            hidden=tuple(raw.get("hidden", ())),
        )


@dataclass(frozen=True)
class LabelHierarchy:
    """Partition of a label vocabulary into named clusters."""

    vocabulary: tuple[str, ...]
    clusters: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(
            self, "clusters", tuple((name, tuple(members)) for name, members in self.clusters)
        )
        seen: list[str] = []
        for _, members in self.clusters:
            seen.extend(members)
        if sorted(seen) != sorted(self.vocabulary) or len(seen) != len(set(seen)):
            raise ValidationError("clusters must partition the vocabulary exactly")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_labels(self) -> int:
        return len(self.vocabulary)

    def cluster_sizes(self) -> list[int]:
        return [len(members) for _, members in self.clusters]

    def locate(self, label_id: int) -> tuple[int, int]:
        """(cluster index, within-cluster index) of a vocabulary label id."""
        label = self.vocabulary[label_id]
        for c, (_, members) in enumerate(self.clusters):
            if label in members:
                return c, members.index(label)
        raise ValidationError(f"label {label!r} not in any cluster")

    def label_id(self, cluster: int, within: int) -> int:
        label = self.clusters[cluster][1][within]
        return self.vocabulary.index(label)

    @classmethod
    def from_dict(cls, raw: dict, vocabulary: tuple[str, ...]) -> "LabelHierarchy":
        clusters = tuple(
            (entry["name"], tuple(entry["labels"])) for entry in raw["clusters"]
        )
        return cls(vocabulary=vocabulary, clusters=clusters)


def build_hierarchical_labels(y: int, hierarchy: LabelHierarchy) -> np.ndarray:
    """Binary target of width C + L: cluster one-hot then per-cluster blocks.

    Exactly one bit in the cluster block and one in the owning cluster's
    label block are set, so the vector always sums to 2 and the encoding is
    injective over the vocabulary.
    """
    if not (0 <= y < hierarchy.n_labels):
        raise ValidationError(f"label id {y} out of range")
    cluster, within = hierarchy.locate(y)
    out = np.zeros(hierarchy.n_clusters + hierarchy.n_labels, dtype=np.float64)
    out[cluster] = 1.0
    offset = hierarchy.n_clusters + sum(hierarchy.cluster_sizes()[:cluster])
    out[offset + within] = 1.0
    return out


def decide_two_level(cluster_probs, sub_probs, hierarchy: LabelHierarchy) -> int:
    """Argmax cluster, then argmax inside that cluster's sub-head."""
    cluster = int(np.argmax(np.asarray(cluster_probs)))
    within = int(np.argmax(np.asarray(sub_probs[cluster])))
    return hierarchy.label_id(cluster, within)


def decide_flat(flat_probs, hierarchy: LabelHierarchy) -> int:
    """Argmax over the cluster block, then inside that cluster's label block."""
    vec = np.asarray(flat_probs)
    expect = hierarchy.n_clusters + hierarchy.n_labels
    if vec.shape != (expect,):
        raise ValidationError(f"expected flat vector of width {expect}, got {vec.shape}")
    cluster = int(np.argmax(vec[: hierarchy.n_clusters]))
    sizes = hierarchy.cluster_sizes()
    offset = hierarchy.n_clusters + sum(sizes[:cluster])
    within = int(np.argmax(vec[offset: offset + sizes[cluster]]))
    return hierarchy.label_id(cluster, within)


def hierarchical_classify(row: torch.Tensor, head: "HierarchicalHead") -> int:
    """Predicted vocabulary label id for one contextualized embedding."""
    return head.predict(row.reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# Linear-chain CRF


def crf_loss(emissions: torch.Tensor, transitions: torch.Tensor, gold) -> torch.Tensor:
    """Negative log-likelihood of ``gold`` under a linear-chain CRF.

    ``emissions`` is ``(N, k)`` per-position label scores, ``transitions``
    is ``(k, k)`` indexed [from, to]; there are no start/stop transition
    scores (uniform boundary). ``logZ`` comes from the forward algorithm in
    log space.
    """
    if emissions.dim() != 2 or emissions.shape[0] < 1:
        raise ValidationError("emissions must be (N, k) with N >= 1")
    n, k = emissions.shape
    gold_t = torch.as_tensor(gold, dtype=torch.long).reshape(-1)
    if gold_t.shape[0] != n:
        raise ValidationError(f"gold sequence length {gold_t.shape[0]} != {n}")
    if int(gold_t.min()) < 0 or int(gold_t.max()) >= k:
        raise ValidationError("gold label out of range")

    score = emissions[0, gold_t[0]]
    for t in range(1, n):
        score = score + transitions[gold_t[t - 1], gold_t[t]] + emissions[t, gold_t[t]]

    alpha = emissions[0]
    for t in range(1, n):
        alpha = torch.logsumexp(alpha.unsqueeze(1) + transitions, dim=0) + emissions[t]
    log_z = torch.logsumexp(alpha, dim=0)
    return log_z - score


def crf_decode(emissions, transitions) -> list[int]:
    """Max-scoring label sequence (Viterbi); ties break to the lowest label id."""
    e = np.asarray(emissions.detach() if isinstance(emissions, torch.Tensor) else emissions,
                   dtype=np.float64)
    t = np.asarray(transitions.detach() if isinstance(transitions, torch.Tensor) else transitions,
                   dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValidationError("emissions must be (N, k) with N >= 1")
    n, k = e.shape
    delta = e[0]
    back: list[np.ndarray] = []
    for i in range(1, n):
        scores = delta[:, None] + t
        best_from = np.argmax(scores, axis=0)
        delta = scores[best_from, np.arange(k)] + e[i]
        back.append(best_from)
    path = [int(np.argmax(delta))]
    for best_from in reversed(back):
        path.append(int(best_from[path[-1]]))
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# Head modules


class TaskHead(nn.Module):
    """Common surface: loss over a batch of rows, predictions, probabilities."""

    def __init__(self, config: HeadConfig, spec: TaskSpec, input_width: int):
        super().__init__()
        self.config = config
        self.spec = spec
        self.input_width = input_width

    def loss(self, rows: torch.Tensor, targets) -> torch.Tensor:
        raise NotImplementedError

    def predict(self, rows: torch.Tensor):
        raise NotImplementedError

    def predict_proba(self, rows: torch.Tensor) -> np.ndarray:
        raise NotImplementedError

    def _check_rows(self, rows: torch.Tensor) -> torch.Tensor:
        if rows.dim() == 1:
            rows = rows.unsqueeze(0)
        if rows.shape[1] != self.input_width:
            raise ValidationError(
                f"head {self.config.task!r} expects width {self.input_width}, "
                f"got {rows.shape[1]}"
            )
        return rows


def _make_ffnn(input_width: int, hidden: tuple[int, ...], out_width: int,
               seed: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    width = input_width
    for h in hidden:
        layers.append(nn.Linear(width, h, dtype=torch.float64))
        layers.append(nn.Tanh())
        width = h
    layers.append(nn.Linear(width, out_width, dtype=torch.float64))
    ffnn = nn.Sequential(*layers)
    gen = torch.Generator()
    gen.manual_seed(seed)
    reinit_module(ffnn, gen)
    return ffnn


class FeedForwardHead(TaskHead):
    """Affine stack producing softmax (multiclass) or sigmoid (multilabel) output."""

    def __init__(self, config: HeadConfig, spec: TaskSpec, input_width: int,
                 loss_config: losses.LossConfig, seed: int = 0):
        super().__init__(config, spec, input_width)
        self.loss_config = loss_config
        self.multiclass = config.kind == "ffnn-multiclass"
        self.ffnn = _make_ffnn(input_width, config.hidden, spec.k, seed)

    def probabilities(self, rows: torch.Tensor) -> torch.Tensor:
        logits = self.ffnn(self._check_rows(rows))
        if self.multiclass:
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)

    def loss(self, rows: torch.Tensor, targets) -> torch.Tensor:
        probs = self.probabilities(rows)
        if self.multiclass:
            return losses.multiclass_loss(self.loss_config, probs, targets)
        return losses.multilabel_loss(self.loss_config, probs, targets)

    def predict(self, rows: torch.Tensor):
        probs = self.predict_proba(rows)
        if self.multiclass:
            return [int(i) for i in probs.argmax(axis=1)]
        return [frozenset(np.flatnonzero(row >= 0.5).tolist()) for row in probs]

    def predict_proba(self, rows: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return self.probabilities(rows).numpy()


def classify(row: torch.Tensor, head: FeedForwardHead) -> np.ndarray:
    """Probability vector for a single contextualized embedding."""
    return head.predict_proba(row.reshape(1, -1))[0]


class CRFHead(TaskHead):
    """Affine emissions plus learned label-transition matrix over the sequence."""

    def __init__(self, config: HeadConfig, spec: TaskSpec, input_width: int,
                 seed: int = 0):
        super().__init__(config, spec, input_width)
        self.emitter = _make_ffnn(input_width, config.hidden, spec.k, derive_seed(seed, "emit"))
        self.transitions = nn.Parameter(torch.zeros(spec.k, spec.k, dtype=torch.float64))
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "transitions"))
        with torch.no_grad():
            self.transitions.copy_(
                (torch.rand(spec.k, spec.k, generator=gen, dtype=torch.float64) * 2 - 1) * 0.1
            )

    def emissions(self, rows: torch.Tensor) -> torch.Tensor:
        return self.emitter(self._check_rows(rows))

    def loss(self, rows: torch.Tensor, targets) -> torch.Tensor:
        # mean per-sentence NLL keeps magnitudes comparable across doc lengths
        e = self.emissions(rows)
        return crf_loss(e, self.transitions, targets) / e.shape[0]

    def predict(self, rows: torch.Tensor) -> list[int]:
        with torch.no_grad():
            return crf_decode(self.emissions(rows), self.transitions)

    def predict_proba(self, rows: torch.Tensor) -> np.ndarray:
        """Per-position label marginals are not modeled; softmaxed emissions."""
        with torch.no_grad():
            return torch.softmax(self.emissions(rows), dim=1).numpy()


class HierarchicalHead(TaskHead):
    """Cluster-factored classification, 2-level or flat-multilabel."""

    def __init__(self, config: HeadConfig, spec: TaskSpec, input_width: int,
                 hierarchy: LabelHierarchy, loss_config: losses.LossConfig,
                 seed: int = 0):
        super().__init__(config, spec, input_width)
        if tuple(hierarchy.vocabulary) != tuple(spec.vocabulary):
            raise ValidationError("hierarchy vocabulary must match the task vocabulary")
        self.hierarchy = hierarchy
        self.two_level = config.kind == "hierarchical-2level"
        if self.two_level:
            self.cluster_head = _make_ffnn(
                input_width, config.hidden, hierarchy.n_clusters, derive_seed(seed, "cluster")
            )
            self.sub_heads = nn.ModuleList(
                [
                    _make_ffnn(input_width, config.hidden, size, derive_seed(seed, f"sub_{c}"))
                    for c, size in enumerate(hierarchy.cluster_sizes())
                ]
            )
        else:
            width = hierarchy.n_clusters + hierarchy.n_labels
            self.flat = _make_ffnn(input_width, config.hidden, width, derive_seed(seed, "flat"))
            if loss_config.kind == "ce":
                loss_config = losses.LossConfig(kind="bce")
            self.loss_config = loss_config

    def loss(self, rows: torch.Tensor, targets) -> torch.Tensor:
        rows = self._check_rows(rows)
        ys = [int(y) for y in targets]
        if self.two_level:
            located = [self.hierarchy.locate(y) for y in ys]
            cluster_probs = torch.softmax(self.cluster_head(rows), dim=1)
            total = losses.cross_entropy(cluster_probs, [c for c, _ in located])
            for c in sorted({c for c, _ in located}):
                idx = [i for i, (ci, _) in enumerate(located) if ci == c]
                sub_probs = torch.softmax(self.sub_heads[c](rows[idx]), dim=1)
                within = [located[i][1] for i in idx]
                total = total + losses.cross_entropy(sub_probs, within) * (len(idx) / len(ys))
            return total
        targets_flat = np.stack([build_hierarchical_labels(y, self.hierarchy) for y in ys])
        probs = torch.sigmoid(self.flat(rows))
        return losses.multilabel_loss(self.loss_config, probs, targets_flat)

    def predict(self, rows: torch.Tensor) -> list[int]:
        rows = self._check_rows(rows)
        with torch.no_grad():
            if self.two_level:
                cluster_probs = torch.softmax(self.cluster_head(rows), dim=1).numpy()
                sub_probs = [
                    torch.softmax(sub(rows), dim=1).numpy() for sub in self.sub_heads
                ]
                return [
                    decide_two_level(
                        cluster_probs[i], [sp[i] for sp in sub_probs], self.hierarchy
                    )
                    for i in range(rows.shape[0])
                ]
            flat_probs = torch.sigmoid(self.flat(rows)).numpy()
            return [decide_flat(row, self.hierarchy) for row in flat_probs]

    def predict_proba(self, rows: torch.Tensor) -> np.ndarray:
        """Probabilities over the original vocabulary.

        Two-level: cluster probability times within-cluster probability.
        Flat: the label-block sigmoid outputs (unnormalized across labels).
        """
        rows = self._check_rows(rows)
        with torch.no_grad():
            out = np.zeros((rows.shape[0], self.hierarchy.n_labels))
            if self.two_level:
                cluster_probs = torch.softmax(self.cluster_head(rows), dim=1).numpy()
                for c, sub in enumerate(self.sub_heads):
                    sub_probs = torch.softmax(sub(rows), dim=1).numpy()
                    for within in range(sub_probs.shape[1]):
                        label = self.hierarchy.label_id(c, within)
                        out[:, label] = cluster_probs[:, c] * sub_probs[:, within]
                return out
            flat_probs = torch.sigmoid(self.flat(rows)).numpy()
            sizes = self.hierarchy.cluster_sizes()
            for c in range(self.hierarchy.n_clusters):
                offset = self.hierarchy.n_clusters + sum(sizes[:c])
                for within in range(sizes[c]):
                    label = self.hierarchy.label_id(c, within)
                    out[:, label] = flat_probs[:, offset + within]
            return out


def build_head(
    config: HeadConfig,
    spec: TaskSpec,
    input_width: int,
    seed: int = 0,
    hierarchy: LabelHierarchy | None = None,
    loss_config: losses.LossConfig | None = None,
) -> TaskHead:
    """Construct the head for a task, checking kind compatibility."""
    if config.task != spec.name:
        raise ValidationError(f"head config for {config.task!r} given task {spec.name!r}")
    if config.kind in MULTICLASS_HEADS and spec.kind != "multiclass":
        raise ValidationError(f"head kind {config.kind!r} requires a multiclass task")
    if config.kind == "ffnn-multilabel" and spec.kind != "multilabel":
        raise ValidationError("ffnn-multilabel requires a multilabel task")
    loss_config = loss_config or losses.LossConfig.from_dict(dict(spec.loss))
    if config.kind in ("ffnn-multiclass", "ffnn-multilabel"):
        return FeedForwardHead(config, spec, input_width, loss_config, seed=seed)
    if config.kind == "crf":
        return CRFHead(config, spec, input_width, seed=seed)
    if hierarchy is None:
        raise ValidationError(f"head kind {config.kind!r} needs a label hierarchy")
    return HierarchicalHead(config, spec, input_width, hierarchy, loss_config, seed=seed)
