"""Estimator-style facade over the multitask training machinery.

``MultitaskSentenceTagger`` follows the scikit-learn conventions
(constructor stores hyperparameters verbatim, ``fit`` returns ``self``,
fitted state lives in trailing-underscore attributes, ``get_params`` /
``set_params`` work for grid search), with corpora instead of feature
matrices as inputs.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .corpus import Corpus, Document
from .encoder import EncoderConfig
from .heads import HeadConfig, LabelHierarchy
from .trainer import (
    TaskWeighting,
    TrainConfig,
    build_model,
    evaluate_split,
    metrics_from_dump,
    train,
)
from .validation import ValidationError


def check_corpus(obj) -> Corpus:
    if not isinstance(obj, Corpus):
        raise ValidationError(f"expected a Corpus, got {type(obj).__name__}")
    return obj


def _as_documents(X) -> list[Document]:
    if isinstance(X, Corpus):
        return list(X.documents)
    docs = list(X)
    if not all(isinstance(d, Document) for d in docs):
        raise ValidationError("X must be a Corpus or an iterable of Documents")
    return docs


class MultitaskSentenceTagger(BaseEstimator):
    """Shared-encoder multitask sentence classifier.

    Parameters mirror the underlying config objects: ``weighting`` maps task
    names to loss coefficients (defaults to the corpus task defaults,
    normalized), ``encoder`` / ``heads`` / ``hierarchies`` are plain dicts
    matching :class:`EncoderConfig`, :class:`HeadConfig` and hierarchy
    schemas, and the remaining arguments populate :class:`TrainConfig`.
    """

    def __init__(
        self,
        weighting: Mapping[str, float] | None = None,
        encoder: Mapping | None = None,
        heads: Mapping[str, Mapping] | None = None,
        hierarchies: Mapping[str, Mapping] | None = None,
        epochs: int = 10,
        steps_per_epoch: int = 100,
        batch_size: int = 1,
        lr_heads: float = 1e-3,
        lr_embedder: float = 2e-5,
        early_stop_metric: str = "micro_f1",
        patience: int = 0,
        eval_split: str = "test",
        primary_task: str | None = None,
        restore_best: bool = True,
        seed: int = 0,
    ):
        self.weighting = weighting
        self.encoder = encoder
        self.heads = heads
        self.hierarchies = hierarchies
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.lr_heads = lr_heads
        self.lr_embedder = lr_embedder
        self.early_stop_metric = early_stop_metric
        self.patience = patience
        self.eval_split = eval_split
        self.primary_task = primary_task
        self.restore_best = restore_best
        self.seed = seed

    # -- config assembly ----------------------------------------------------

    def _weighting(self, corpus: Corpus) -> TaskWeighting:
        if self.weighting is not None:
            alpha = dict(self.weighting)
            return TaskWeighting(alpha=alpha, c=sum(alpha.values()))
        defaults = {t.name: t.alpha_default for t in corpus.tasks if t.alpha_default > 0}
        if not defaults:
            raise ValidationError("no task has a positive default weight")
        return TaskWeighting.normalized(defaults)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            lr_heads=self.lr_heads,
            lr_embedder=self.lr_embedder,
            early_stop_metric=self.early_stop_metric,
            patience=self.patience,
            eval_split=self.eval_split,
            primary_task=self.primary_task,
            restore_best=self.restore_best,
        )

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_dict(dict(self.encoder)) if self.encoder else EncoderConfig()

    def _head_configs(self) -> dict[str, HeadConfig] | None:
        if not self.heads:
            return None
        return {
            task: HeadConfig.from_dict({"task": task, **dict(raw)})
            for task, raw in self.heads.items()
        }

    def _hierarchies(self, corpus: Corpus) -> dict[str, LabelHierarchy] | None:
        if not self.hierarchies:
            return None
        return {
            task: LabelHierarchy.from_dict(dict(raw), corpus.task(task).vocabulary)
            for task, raw in self.hierarchies.items()
        }

    # -- estimator surface ---------------------------------------------------

    def fit(self, X, y=None):
        """Train on a Corpus (train/dev splits); returns ``self``."""
        corpus = check_corpus(X)
        weighting = self._weighting(corpus)
        record = train(
            corpus,
            weighting,
            self._train_config(),
            encoder_config=self._encoder_config(),
            head_configs=self._head_configs(),
            hierarchies=self._hierarchies(corpus),
        )
        self.run_record_ = record
        self.tasks_ = weighting.active_tasks()
        self.primary_task_ = record.primary_task()
        self.corpus_tasks_ = {t.name: t for t in corpus.tasks}
        # rebuild is cheap; keep the fitted torch model for prediction
        head_configs = self._head_configs() or {}
        full_heads = {
            t: head_configs.get(
                t, HeadConfig.from_dict({"task": t, **record.config["heads"][t]})
            )
            for t in self.tasks_
        }
        model = build_model(
            corpus,
            self.tasks_,
            self._encoder_config(),
            full_heads,
            self.seed,
            hierarchies=self._hierarchies(corpus),
        )
        state = {k: torch.as_tensor(v) for k, v in record.checkpoint.items()}
        model.load_state_dict(state)
        self.model_ = model
        return self

    def _require_fit(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted; call fit first")

    def predict(self, X, task: str | None = None) -> list[list]:
        """Per-document lists of predicted label names for ``task``."""
        self._require_fit()
        task = task or self.primary_task_
        if task not in self.tasks_:
            raise ValidationError(f"no head for task {task!r}")
        spec = self.corpus_tasks_[task]
        out = []
        for doc in _as_documents(X):
            with torch.no_grad():
                rows = self.model_.document_rows(doc)
            preds = self.model_.heads[task].predict(rows)
            if spec.kind == "multiclass":
                out.append([spec.label_name(int(p)) for p in preds])
            else:
                out.append([[spec.label_name(i) for i in sorted(p)] for p in preds])
        return out

    def predict_proba(self, X, task: str | None = None) -> list[np.ndarray]:
        self._require_fit()
        task = task or self.primary_task_
        if task not in self.tasks_:
            raise ValidationError(f"no head for task {task!r}")
        out = []
        for doc in _as_documents(X):
            with torch.no_grad():
                rows = self.model_.document_rows(doc)
            out.append(self.model_.heads[task].predict_proba(rows))
        return out

    def score(self, X, y=None) -> float:
        """Micro F1 of the primary task over a corpus split-agnostic input."""
        self._require_fit()
        corpus = check_corpus(X)
        dump = []
        for split in ("train", "dev", "test"):
            rows, _ = evaluate_split(self.model_, corpus, self.tasks_, split)
            dump.extend(rows)
        reports = metrics_from_dump(dump, {self.primary_task_: corpus.task(self.primary_task_)})
        if self.primary_task_ not in reports:
            raise ValidationError("input corpus has no gold labels for the primary task")
        return reports[self.primary_task_].micro_f1
