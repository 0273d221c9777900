"""Training losses: cross-entropy variants and the Dice family.

The binary Dice losses treat per-datum predicted probability as precision
and the 0/1 ground truth as recall, giving a differentiable F1 surrogate.
With ``gamma`` smoothing (default 1) negative examples also contribute:

* plain form:           ``1 - (2*sum(p*y) + N*gamma) / (sum(p) + sum(y) + N*gamma)``
* squared form:         denominator uses ``sum(p^2) + sum(y^2)``
* self-adjusting form:  per-datum, ``p`` replaced by ``(1-p)*p`` to
  downweight easy examples, smoothed by ``gamma`` alone
* generalized form:     per-class plain Dice combined with ``1/N_j^2``
  class weights, skipping classes absent from the batch

Multiclass tasks go through one-vs-rest probability columns; ``dice`` and
``dice-squared`` use an (optionally class-weighted) macro mean over columns
while ``generalized-dice`` uses the ``1/N_j^2`` scheme. All functions accept
tensors or array-likes and return a 0-dim torch tensor so gradients flow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .validation import ValidationError

LOSS_KINDS = ("ce", "bce", "dice", "dice-squared", "self-adjusting-dice", "generalized-dice")

_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ce"
    gamma: float = 1.0
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if self.class_weights is not None:
            weights = tuple(float(w) for w in self.class_weights)
            if any(w < 0 for w in weights):
                raise ValidationError("class weights must be non-negative")
            object.__setattr__(self, "class_weights", weights)
        if self.kind == "generalized-dice" and self.class_weights is not None:
            raise ValidationError("generalized-dice defines its own class weighting")

    @classmethod
    def from_dict(cls, raw: dict) -> "LossConfig":
        known = {"kind", "gamma", "class_weights"}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown loss config keys: {sorted(unknown)}")
        weights = raw.get("class_weights")
        return cls(
            kind=raw.get("kind", "ce"),
            gamma=float(raw.get("gamma", 1.0)),
            class_weights=tuple(weights) if weights is not None else None,
        )

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "gamma": self.gamma}
        if self.class_weights is not None:
            out["class_weights"] = list(self.class_weights)
        return out


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def cross_entropy(p, y, weights=None) -> torch.Tensor:
    """Negative log-probability of the gold label(s), optionally class-weighted.

    ``p`` is a probability vector ``(k,)`` with an int label, or a batch
    ``(N, k)`` with label ids ``(N,)``; the batch form mean-reduces. Zero
    gold-class probabilities are clamped at 1e-12 with a warning.
    """
    p = _as_tensor(p)
    if p.dim() == 1:
        p = p.unsqueeze(0)
        y = torch.as_tensor([int(y)])
    else:
        y = torch.as_tensor(y, dtype=torch.long)
    gold = p[torch.arange(p.shape[0]), y]
    if bool((gold.detach() <= 0).any()):
        warnings.warn("gold-class probability of 0 clamped to 1e-12")
        gold = gold.clamp(min=_EPS)
    nll = -torch.log(gold)
    if weights is not None:
        w = _as_tensor(weights).to(p.dtype)
        nll = nll * w[y]
    return nll.mean()


def binary_cross_entropy(p, y, weights=None) -> torch.Tensor:
    """Elementwise BCE, mean-reduced; ``weights`` are per-class for 2-d input."""
    p = _as_tensor(p)
    y = _as_tensor(y).to(p.dtype)
    if p.numel() == 0:
        raise ValidationError("empty input")
    clamped = p.clamp(min=_EPS, max=1.0 - _EPS)
    per_entry = -(y * torch.log(clamped) + (1.0 - y) * torch.log(1.0 - clamped))
    if weights is not None:
        w = _as_tensor(weights).to(p.dtype)
        per_entry = per_entry * w
    return per_entry.mean()


def dice_loss(p, y, gamma: float = 1.0, squared: bool = False) -> torch.Tensor:
    """Binary Dice loss over a batch of per-datum positive-class probabilities.

    ``squared`` switches the denominator to squared sums.
    """
    p = _as_tensor(p).reshape(-1)
    y = _as_tensor(y).to(p.dtype).reshape(-1)
    n = p.shape[0]
    if n == 0:
        raise ValidationError("dice loss needs at least one datum")
    if y.shape[0] != n:
        raise ValidationError(f"p and y length mismatch: {n} vs {y.shape[0]}")
    smooth = n * gamma
    numer = 2.0 * (p * y).sum() + smooth
    if squared:
        denom = (p * p).sum() + (y * y).sum() + smooth
    else:
        denom = p.sum() + y.sum() + smooth
    return 1.0 - numer / denom


def self_adjusting_dice(p, y, gamma: float = 1.0) -> torch.Tensor:
    """Self-adjusting Dice: per-datum with ``(1-p)*p`` focus, mean-reduced."""
    p = _as_tensor(p).reshape(-1)
    y = _as_tensor(y).to(p.dtype).reshape(-1)
    if p.shape[0] == 0:
        raise ValidationError("self-adjusting dice needs at least one datum")
    if y.shape[0] != p.shape[0]:
        raise ValidationError(f"p and y length mismatch: {p.shape[0]} vs {y.shape[0]}")
    focal = (1.0 - p) * p
    per_datum = 1.0 - (2.0 * focal * y + gamma) / (focal + y + gamma)
    return per_datum.mean()


def generalized_dice(P, Y, gamma: float = 1.0, form: str = "plain") -> torch.Tensor:
    """Multiclass Dice over one-vs-rest columns weighted by ``1/N_j^2``.

    ``N_j`` is the number of class-``j`` positives in ``Y``; absent classes
    are skipped. ``form`` selects the per-column binary loss
    (``plain``/``squared``/``self-adjusting``).
    """
    P = _as_tensor(P)
    Y = _as_tensor(Y).to(P.dtype)
    if P.dim() != 2 or Y.shape != P.shape:
        raise ValidationError("P and Y must be matching (N, k) matrices")
    support = Y.sum(dim=0)
    if bool((support == 0).all()):
        raise ValidationError("every class has zero support")
    total = P.new_zeros(())
    for j in range(P.shape[1]):
        n_j = support[j]
        if float(n_j) == 0:
            continue
        column = _binary_dice_by_form(P[:, j], Y[:, j], gamma, form)
        total = total + column / (n_j * n_j)
    return total


def _binary_dice_by_form(p, y, gamma: float, form: str) -> torch.Tensor:
    if form == "plain":
        return dice_loss(p, y, gamma=gamma)
    if form == "squared":
        return dice_loss(p, y, gamma=gamma, squared=True)
    if form == "self-adjusting":
        return self_adjusting_dice(p, y, gamma=gamma)
    raise ValidationError(f"unknown dice form {form!r}")


def one_hot(labels, k: int) -> torch.Tensor:
    ys = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if ys.numel() and (int(ys.min()) < 0 or int(ys.max()) >= k):
        raise ValidationError(f"label id out of range for k={k}")
    out = torch.zeros((ys.shape[0], k), dtype=torch.float64)
    out[torch.arange(ys.shape[0]), ys] = 1.0
    return out


def _macro_columns(P: torch.Tensor, Y: torch.Tensor, config: LossConfig,
                   form: str) -> torch.Tensor:
    columns = [
        _binary_dice_by_form(P[:, j], Y[:, j], config.gamma, form) for j in range(P.shape[1])
    ]
    stacked = torch.stack(columns)
    if config.class_weights is not None:
        w = torch.as_tensor(config.class_weights, dtype=stacked.dtype)
        if w.shape[0] != stacked.shape[0]:
            raise ValidationError("class_weights length must equal number of classes")
        return (stacked * w).sum() / w.sum()
    return stacked.mean()


def multiclass_loss(config: LossConfig, P, labels) -> torch.Tensor:
    """Task loss for a multiclass batch: ``P`` is ``(N, k)`` probabilities."""
    P = _as_tensor(P)
    if P.dim() != 2:
        raise ValidationError("P must be (N, k)")
    if config.kind == "ce":
        return cross_entropy(P, labels, weights=config.class_weights)
    if config.kind == "bce":
        raise ValidationError("bce is for multilabel tasks")
    Y = one_hot(labels, P.shape[1]).to(P.dtype)
    if config.kind == "dice":
        return _macro_columns(P, Y, config, "plain")
    if config.kind == "dice-squared":
        return _macro_columns(P, Y, config, "squared")
    if config.kind == "self-adjusting-dice":
        return _macro_columns(P, Y, config, "self-adjusting")
    return generalized_dice(P, Y, gamma=config.gamma)


def multilabel_loss(config: LossConfig, P, Y) -> torch.Tensor:
    """Task loss for a multilabel batch: ``P`` and binary ``Y`` are ``(N, k)``."""
    P = _as_tensor(P)
    Y = _as_tensor(Y).to(P.dtype)
    if P.dim() != 2 or Y.shape != P.shape:
        raise ValidationError("P and Y must be matching (N, k) matrices")
    if config.kind == "ce":
        raise ValidationError("ce is for multiclass tasks")
    if config.kind == "bce":
        return binary_cross_entropy(P, Y, weights=config.class_weights)
    if config.kind == "dice":
        return _macro_columns(P, Y, config, "plain")
    if config.kind == "dice-squared":
        return _macro_columns(P, Y, config, "squared")
    if config.kind == "self-adjusting-dice":
        return _macro_columns(P, Y, config, "self-adjusting")
    return generalized_dice(P, Y, gamma=config.gamma)
