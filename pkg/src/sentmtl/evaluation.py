"""Classification metrics and the cross-run analysis battery.

Pure functions over gold/predicted labels and serialized prediction dumps:
per-class precision/recall/F1 with confusion matrices, Spearman correlation
between the predicted-tag indicators of two task heads, OLS regression of
task-weight vectors onto F1 outcomes, KL divergence between prediction
distributions, and Cohen's kappa.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .validation import ValidationError, check_equal_length


@dataclass(frozen=True)
class MetricReport:
    """Per-class and aggregate F1 metrics for one task on one split.

    ``confusion`` (rows = gold, columns = predicted) is present for
    multiclass tasks only. Macro F1 is the unweighted mean of per-class F1
    with zero-support classes included at 0; micro F1 comes from global
    TP/FP/FN counts and equals accuracy for single-label multiclass data.
    """

    labels: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    macro_f1: float
    micro_f1: float
    confusion: tuple[tuple[int, ...], ...] | None = None

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "support": list(self.support),
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "confusion": [list(row) for row in self.confusion] if self.confusion else None,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricReport":
        confusion = raw.get("confusion")
        return cls(
            labels=tuple(raw["labels"]),
            precision=tuple(raw["precision"]),
            recall=tuple(raw["recall"]),
            f1=tuple(raw["f1"]),
            support=tuple(raw["support"]),
            macro_f1=raw["macro_f1"],
            micro_f1=raw["micro_f1"],
            confusion=tuple(tuple(row) for row in confusion) if confusion else None,
        )


def _prf(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray):
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        f1 = np.where(
            precision + recall > 0,
            2 * precision * recall / np.maximum(precision + recall, 1e-300),
            0.0,
        )
    return precision, recall, f1


def _micro(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> float:
    tp_s, fp_s, fn_s = tp.sum(), fp.sum(), fn.sum()
    denom = 2 * tp_s + fp_s + fn_s
    return float(2 * tp_s / denom) if denom > 0 else 0.0


def metric_report(gold, pred, k: int, labels: tuple[str, ...] | None = None) -> MetricReport:
    """Multiclass metrics from parallel gold/predicted label-id lists."""
    gold = [int(g) for g in gold]
    pred = [int(p) for p in pred]
    check_equal_length(gold, pred, "gold", "pred")
    if any(not (0 <= g < k) for g in gold) or any(not (0 <= p < k) for p in pred):
        raise ValidationError(f"labels out of range for k={k}")
    confusion = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, pred):
        confusion[g, p] += 1
    tp = np.diag(confusion).astype(float)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    precision, recall, f1 = _prf(tp, fp, fn)
    label_names = labels if labels is not None else tuple(str(i) for i in range(k))
    return MetricReport(
        labels=tuple(label_names),
        precision=tuple(float(x) for x in precision),
        recall=tuple(float(x) for x in recall),
        f1=tuple(float(x) for x in f1),
        support=tuple(int(x) for x in confusion.sum(axis=1)),
        macro_f1=float(f1.mean()),
        micro_f1=_micro(tp, fp, fn),
        confusion=tuple(tuple(int(x) for x in row) for row in confusion),
    )


def multilabel_metric_report(gold, pred, k: int,
                             labels: tuple[str, ...] | None = None) -> MetricReport:
    """Per-tag binary metrics from parallel lists of gold/predicted label-id sets."""
    check_equal_length(gold, pred, "gold", "pred")
    tp = np.zeros(k)
    fp = np.zeros(k)
    fn = np.zeros(k)
    support = np.zeros(k, dtype=np.int64)
    for g_set, p_set in zip(gold, pred):
        g_set, p_set = set(g_set), set(p_set)
        for j in g_set:
            support[j] += 1
        for j in p_set & g_set:
            tp[j] += 1
        for j in p_set - g_set:
            fp[j] += 1
        for j in g_set - p_set:
            fn[j] += 1
    precision, recall, f1 = _prf(tp, fp, fn)
    label_names = labels if labels is not None else tuple(str(i) for i in range(k))
    return MetricReport(
        labels=tuple(label_names),
        precision=tuple(float(x) for x in precision),
        recall=tuple(float(x) for x in recall),
        f1=tuple(float(x) for x in f1),
        support=tuple(int(x) for x in support),
        macro_f1=float(f1.mean()),
        micro_f1=_micro(tp, fp, fn),
        confusion=None,
    )


# ---------------------------------------------------------------------------
# Cross-head correlation


def _indicator(entry: dict, tag: str, vocab: dict[str, int] | None) -> float:
    if vocab is not None:
        probs = entry.get("probabilities")
        if probs is None or tag not in vocab:
            raise ValidationError("probabilistic correlation needs probabilities and vocabulary")
        return float(probs[vocab[tag]])
    predicted = entry["predicted"]
    if isinstance(predicted, list):
        return 1.0 if tag in predicted else 0.0
    return 1.0 if predicted == tag else 0.0


def cross_head_correlation(
    dump: list[dict],
    head_a: str,
    head_b: str,
    tags_a: list[str],
    tags_b: list[str],
    probabilistic: bool = False,
    vocab_a: dict[str, int] | None = None,
    vocab_b: dict[str, int] | None = None,
) -> np.ndarray:
    """Spearman rho between predicted-tag indicators of two heads.

    ``dump`` rows are prediction records with per-head entries (see the run
    serialization format). Entry ``[i, j]`` correlates "head A predicted
    ``tags_a[i]``" with "head B predicted ``tags_b[j]``" across all
    sentences; pairs undefined because an indicator is constant come back
    as NaN. With ``probabilistic`` set, predicted-tag probabilities replace
    the 0/1 indicators (``vocab_*`` map tag name to probability index).
    """
    if probabilistic and (vocab_a is None or vocab_b is None):
        raise ValidationError("probabilistic mode requires vocab_a and vocab_b")
    lookup_a = vocab_a if probabilistic else None
    lookup_b = vocab_b if probabilistic else None
    rows_a = []
    rows_b = []
    for row in dump:
        heads = row["heads"]
        if head_a not in heads or head_b not in heads:
            raise ValidationError(
                f"both heads {head_a!r} and {head_b!r} must cover every dumped sentence"
            )
        rows_a.append([_indicator(heads[head_a], tag, lookup_a) for tag in tags_a])
        rows_b.append([_indicator(heads[head_b], tag, lookup_b) for tag in tags_b])
    a = np.asarray(rows_a)
    b = np.asarray(rows_b)
    out = np.full((len(tags_a), len(tags_b)), np.nan)
    for i in range(len(tags_a)):
        if np.all(a[:, i] == a[0, i]):
            continue
        for j in range(len(tags_b)):
            if np.all(b[:, j] == b[0, j]):
                continue
            rho = stats.spearmanr(a[:, i], b[:, j]).statistic
            out[i, j] = float(rho)
    return out


# ---------------------------------------------------------------------------
# Alpha-to-F1 regression


@dataclass(frozen=True)
class AlphaTrial:
    """One grid-search outcome: the weight vector and its F1 scores."""

    alpha: dict[str, float]
    macro_f1: float
    micro_f1: float
    per_class_f1: dict[str, float] = field(default_factory=dict)
    failed: bool = False
    run_dir: str | None = None

    def to_dict(self) -> dict:
        def _finite(x: float):
            return x if np.isfinite(x) else None

        return {
            "alpha": dict(self.alpha),
            "macro_f1": _finite(self.macro_f1),
            "micro_f1": _finite(self.micro_f1),
            "per_class_f1": dict(self.per_class_f1),
            "failed": self.failed,
            "run_dir": self.run_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AlphaTrial":
        macro = raw["macro_f1"]
        micro = raw["micro_f1"]
        return cls(
            alpha=dict(raw["alpha"]),
            macro_f1=float("nan") if macro is None else macro,
            micro_f1=float("nan") if micro is None else micro,
            per_class_f1=dict(raw.get("per_class_f1", {})),
            failed=bool(raw.get("failed", False)),
            run_dir=raw.get("run_dir"),
        )


def regress_alpha_to_f1(
    trials: list[AlphaTrial], target: str = "micro"
) -> tuple[dict[str, float], float]:
    """OLS fit of F1 scores on task-weight vectors: returns (betas, intercept)."""
    if target not in ("macro", "micro"):
        raise ValidationError("target must be 'macro' or 'micro'")
    usable = [t for t in trials if not t.failed]
    tasks = sorted({task for t in usable for task in t.alpha})
    if len(usable) < len(tasks) + 1:
        raise ValidationError(
            f"need at least {len(tasks) + 1} trials for {len(tasks)} tasks, got {len(usable)}"
        )
    X = np.array([[t.alpha.get(task, 0.0) for task in tasks] for t in usable])
    X = np.hstack([X, np.ones((X.shape[0], 1))])
    y = np.array([t.micro_f1 if target == "micro" else t.macro_f1 for t in usable])
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        collinear = _collinear_columns(X, tasks)
        raise ValidationError(
            f"design matrix is rank deficient (rank {rank} < {X.shape[1]}); "
            f"collinear tasks: {', '.join(collinear) or 'intercept only'}"
        )
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    betas = {task: float(c) for task, c in zip(tasks, coef[:-1])}
    return betas, float(coef[-1])


def _collinear_columns(X: np.ndarray, tasks: list[str]) -> list[str]:
    names = []
    for j, task in enumerate(tasks):
        others = np.delete(X, j, axis=1)
        fitted, *_ = np.linalg.lstsq(others, X[:, j], rcond=None)
        residual = X[:, j] - others @ fitted
        if np.linalg.norm(residual) < 1e-10 * max(1.0, np.linalg.norm(X[:, j])):
            names.append(task)
    return names


# ---------------------------------------------------------------------------
# Distribution comparisons


def prediction_distribution_kl(pred_counts_model, pred_counts_reference) -> float:
    """KL(model || reference) over class-prediction distributions, natural log.

    Inputs may be raw counts; both are normalized. Reference zeros facing
    nonzero model mass are smoothed to 1e-9 with a warning.
    """
    p = np.asarray(pred_counts_model, dtype=float)
    q = np.asarray(pred_counts_reference, dtype=float)
    if p.shape != q.shape:
        raise ValidationError("distributions must cover the same classes")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValidationError("distributions must have positive mass")
    p = p / p.sum()
    q = q / q.sum()
    bad = (q == 0) & (p > 0)
    if bad.any():
        warnings.warn("reference distribution smoothed with epsilon=1e-9 at zero entries")
        q = np.where(bad, 1e-9, q)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def cohens_kappa(labels_a, labels_b) -> float | None:
    """Chance-corrected agreement; None when chance agreement is total."""
    check_equal_length(labels_a, labels_b, "labels_a", "labels_b")
    if len(labels_a) == 0:
        raise ValidationError("label lists must be non-empty")
    a = list(labels_a)
    b = list(labels_b)
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    values = sorted(set(a) | set(b), key=str)
    p_e = sum((a.count(v) / n) * (b.count(v) / n) for v in values)
    if abs(1.0 - p_e) < 1e-15:
        return None
    return (p_o - p_e) / (1.0 - p_e)
