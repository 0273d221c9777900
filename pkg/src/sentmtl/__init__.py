"""Multitask sentence-level discourse classification.

A shared sentence encoder (pluggable embedder, embedding augmentations,
Bi-LSTM contextualizer) with task-specific heads trained under a weighted
joint loss, plus the corpus projection adapters, loss variants,
augmentation pipeline, and analysis battery around it.
"""

from .adapters import (
    RelationRecord,
    TagMap,
    downsample_to_length_distribution,
    filter_pdtb_temporal,
    filter_rare_tags,
    load_tag_map,
    map_tags,
    project_event_nuggets,
    project_relations_to_sentences,
)
from .augment import (
    Augmenter,
    ExternalProcessAugmenter,
    MockBacktranslator,
    augment_sentence,
    expand_training_set,
)
from .corpus import (
    Corpus,
    Document,
    Sentence,
    TaskSpec,
    class_counts,
    imbalance_ratio,
    load_corpus,
    merge_corpora,
    save_corpus,
)
from .encoder import (
    AugmentationMask,
    CallableEmbedder,
    EmbeddingBundle,
    EncoderConfig,
    FreezePolicy,
    HashEmbedder,
    SelfAttentionPooling,
    SentenceContextualizer,
    SentenceEmbedder,
    SharedEncoder,
    apply_freeze_policy,
    document_arithmetic,
    document_embedding,
    embed_sentences,
    parameter_census,
    positional_embeddings,
    sinusoidal_positions,
)
from .evaluation import (
    AlphaTrial,
    MetricReport,
    cohens_kappa,
    cross_head_correlation,
    metric_report,
    multilabel_metric_report,
    prediction_distribution_kl,
    regress_alpha_to_f1,
)
from .gridsearch import GridResult, grid_search, load_grid_result, simplex_grid
from .heads import (
    CRFHead,
    FeedForwardHead,
    HeadConfig,
    HierarchicalHead,
    LabelHierarchy,
    build_head,
    build_hierarchical_labels,
    classify,
    crf_decode,
    crf_loss,
    hierarchical_classify,
)
from .losses import (
    LossConfig,
    binary_cross_entropy,
    cross_entropy,
    dice_loss,
    generalized_dice,
    multiclass_loss,
    multilabel_loss,
    self_adjusting_dice,
)
from .model import MultitaskSentenceTagger, check_corpus
from .trainer import (
    DivergenceError,
    RunRecord,
    TaskWeighting,
    TrainConfig,
    freeze_auxiliary_heads,
    joint_loss,
    load_run_record,
    sample_step,
    save_run_record,
    train,
)
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "AlphaTrial",
    "AugmentationMask",
    "Augmenter",
    "CRFHead",
    "CallableEmbedder",
    "Corpus",
    "DivergenceError",
    "Document",
    "EmbeddingBundle",
    "EncoderConfig",
    "ExternalProcessAugmenter",
    "FeedForwardHead",
    "FreezePolicy",
    "GridResult",
    "HashEmbedder",
    "HeadConfig",
    "HierarchicalHead",
    "LabelHierarchy",
    "LossConfig",
    "MetricReport",
    "MockBacktranslator",
    "MultitaskSentenceTagger",
    "RelationRecord",
    "RunRecord",
    "SelfAttentionPooling",
    "Sentence",
    "SentenceContextualizer",
    "SentenceEmbedder",
    "SharedEncoder",
    "TagMap",
    "TaskSpec",
    "TaskWeighting",
    "TrainConfig",
    "ValidationError",
    "apply_freeze_policy",
    "augment_sentence",
    "binary_cross_entropy",
    "build_head",
    "build_hierarchical_labels",
    "check_corpus",
    "class_counts",
    "classify",
    "cohens_kappa",
    "crf_decode",
    "crf_loss",
    "cross_entropy",
    "cross_head_correlation",
    "dice_loss",
    "document_arithmetic",
    "document_embedding",
    "downsample_to_length_distribution",
    "embed_sentences",
    "expand_training_set",
    "filter_pdtb_temporal",
    "filter_rare_tags",
    "freeze_auxiliary_heads",
    "generalized_dice",
    "grid_search",
    "hierarchical_classify",
    "imbalance_ratio",
    "joint_loss",
    "load_corpus",
    "load_grid_result",
    "load_run_record",
    "load_tag_map",
    "map_tags",
    "merge_corpora",
    "metric_report",
    "multiclass_loss",
    "multilabel_loss",
    "multilabel_metric_report",
    "parameter_census",
    "positional_embeddings",
    "prediction_distribution_kl",
    "project_event_nuggets",
    "project_relations_to_sentences",
    "regress_alpha_to_f1",
    "sample_step",
    "save_corpus",
    "save_run_record",
    "self_adjusting_dice",
    "simplex_grid",
    "sinusoidal_positions",
    "train",
]
