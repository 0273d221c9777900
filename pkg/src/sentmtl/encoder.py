"""Shared sentence encoder: embeddings, augmentations, contextualization.

The encoder path is: per-sentence embeddings from a pluggable
``SentenceEmbedder``, optional concatenated augmentations (learned and
sinusoidal sentence positions, attention-pooled document embedding,
document arithmetic, headline embedding), then a bidirectional LSTM over
the document's sentence sequence. Everything before the task heads is
shared across tasks.

A deterministic hash embedder stands in for a pretrained transformer so
the whole path is reproducible bit-for-bit under a fixed seed; real
embedders plug in through the same interface (token strings in, a fixed
width vector out, plus a declared block structure for layer-wise freezing).
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
from torch import nn

from .corpus import Document
from .validation import ValidationError, derive_seed

MAX_SENTENCES = 200

AUGMENTATIONS = ("positional", "sinusoidal", "document", "arithmetic", "headline")


def tokenize(text: str) -> list[str]:
    return text.split()


def _fill_uniform(param: torch.Tensor, gen: torch.Generator, scale: float) -> None:
    with torch.no_grad():
        param.copy_((torch.rand(param.shape, generator=gen, dtype=param.dtype) * 2 - 1) * scale)


def reinit_module(module: nn.Module, gen: torch.Generator) -> None:
    """Re-initialize every parameter from ``gen`` (uniform, fan-in scaled).

    Replaces torch's global-RNG default init so construction order elsewhere
    cannot shift a component's starting point.
    """
    for name, param in sorted(module.named_parameters()):
        fan_in = param.shape[-1] if param.dim() > 1 else max(param.shape[0], 1)
        scale = 1.0 / math.sqrt(fan_in)
        _fill_uniform(param, gen, scale)


def trainable_parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Sentence embedders


class SentenceEmbedder(nn.Module):
    """Plug-in contract for sentence embedding backends.

    Implementations map a list of token strings to a ``(dim,)`` vector and
    declare an ordered block structure (embedding table first, then encoder
    blocks from input to output) that freeze policies refer to.
    """

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def embed_tokens(self, tokens: Sequence[str]) -> torch.Tensor:
        raise NotImplementedError

    def block_names(self) -> list[str]:
        raise NotImplementedError

    def block_parameters(self, block: str) -> list[nn.Parameter]:
        raise NotImplementedError

    def embed_document(self, doc: Document) -> torch.Tensor:
        """Stack of per-sentence embeddings, shape ``(len(doc), dim)``."""
        rows = [self.embed_tokens(tokenize(sent.text)) for sent in doc.sentences]
        return torch.stack(rows)


def _stable_token_index(token: str, vocab_size: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % vocab_size


class HashEmbedder(SentenceEmbedder):
    """Deterministic toy embedder: hashed token lookup + small MLP blocks.

    Tokens hash into a fixed-size embedding table; token vectors are mean
    pooled and passed through ``n_blocks`` residual tanh blocks. Trainable,
    with a block structure (``embedding``, ``block_0``, ...) that mirrors a
    transformer's for layer-wise freezing experiments.
    """

    def __init__(self, dim: int = 16, vocab_size: int = 4096, n_blocks: int = 2,
                 max_tokens: int = 128, seed: int = 0):
        super().__init__()
        if dim < 1 or vocab_size < 1 or n_blocks < 0:
            raise ValidationError("dim and vocab_size must be positive, n_blocks >= 0")
        self._dim = dim
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.table = nn.Embedding(vocab_size, dim, dtype=torch.float64)
        self.blocks = nn.ModuleList(
            [nn.Linear(dim, dim, dtype=torch.float64) for _ in range(n_blocks)]
        )
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "hash-embedder", "table"))
        _fill_uniform(self.table.weight, gen, 1.0)
        for i, block in enumerate(self.blocks):
            block_gen = torch.Generator()
            block_gen.manual_seed(derive_seed(seed, "hash-embedder", f"block_{i}"))
            reinit_module(block, block_gen)

    @property
    def dim(self) -> int:
        return self._dim

    def embed_tokens(self, tokens: Sequence[str]) -> torch.Tensor:
        if len(tokens) > self.max_tokens:
            warnings.warn(f"sentence truncated to {self.max_tokens} tokens")
            tokens = tokens[: self.max_tokens]
        if not tokens:
            pooled = self.table.weight.new_zeros(self._dim)
        else:
            idx = torch.tensor(
                [_stable_token_index(t, self.vocab_size) for t in tokens], dtype=torch.long
            )
            pooled = self.table(idx).mean(dim=0)
        x = pooled
        for block in self.blocks:
            x = x + torch.tanh(block(x))
        return x

    def block_names(self) -> list[str]:
        return ["embedding"] + [f"block_{i}" for i in range(len(self.blocks))]

    def block_parameters(self, block: str) -> list[nn.Parameter]:
        if block == "embedding":
            return [self.table.weight]
        if block.startswith("block_"):
            i = int(block.split("_", 1)[1])
            if 0 <= i < len(self.blocks):
                return list(self.blocks[i].parameters())
        raise ValidationError(f"embedder has no block {block!r}")


class CallableEmbedder(SentenceEmbedder):
    """Adapter for external, non-trainable embedding functions."""

    def __init__(self, fn: Callable[[Sequence[str]], Sequence[float]], dim: int):
        super().__init__()
        self._fn = fn
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def embed_tokens(self, tokens: Sequence[str]) -> torch.Tensor:
        vec = torch.as_tensor(self._fn(list(tokens)), dtype=torch.float64)
        if vec.shape != (self._dim,):
            raise ValidationError(f"plug-in embedder returned shape {tuple(vec.shape)}, "
                                  f"expected ({self._dim},)")
        return vec

    def block_names(self) -> list[str]:
        return []

    def block_parameters(self, block: str) -> list[nn.Parameter]:
        raise ValidationError(f"embedder has no block {block!r}")


def embed_sentences(doc: Document, embedder: SentenceEmbedder) -> torch.Tensor:
    if not doc.sentences:
        raise ValidationError("document has no sentences")
    return embedder.embed_document(doc)


# ---------------------------------------------------------------------------
# Freezing


@dataclass(frozen=True)
class FreezePolicy:
    """Per-block trainable flags over an embedder's declared block list."""

    blocks: tuple[str, ...]
    trainable: tuple[bool, ...]

    def __post_init__(self):
        if len(self.blocks) != len(self.trainable):
            raise ValidationError("blocks and trainable flags must align")

    @classmethod
    def freeze_all(cls, blocks: Sequence[str]) -> "FreezePolicy":
        return cls(tuple(blocks), tuple(False for _ in blocks))

    @classmethod
    def unfreeze_all(cls, blocks: Sequence[str]) -> "FreezePolicy":
        return cls(tuple(blocks), tuple(True for _ in blocks))

    @classmethod
    def unfreeze_last(cls, blocks: Sequence[str], n: int) -> "FreezePolicy":
        """Only the ``n`` blocks closest to the output stay trainable."""
        total = len(blocks)
        return cls(tuple(blocks), tuple(i >= total - n for i in range(total)))

    @classmethod
    def from_frozen(cls, blocks: Sequence[str], frozen: Sequence[str]) -> "FreezePolicy":
        unknown = set(frozen) - set(blocks)
        if unknown:
            raise ValidationError(f"freeze policy names unknown blocks: {sorted(unknown)}")
        return cls(tuple(blocks), tuple(b not in set(frozen) for b in blocks))


def apply_freeze_policy(embedder: SentenceEmbedder, policy: FreezePolicy) -> None:
    """Mark embedder blocks (non-)trainable according to ``policy``."""
    if list(policy.blocks) != embedder.block_names():
        raise ValidationError(
            f"freeze policy blocks {list(policy.blocks)} do not match embedder "
            f"structure {embedder.block_names()}"
        )
    for block, trainable in zip(policy.blocks, policy.trainable):
        for param in embedder.block_parameters(block):
            param.requires_grad_(trainable)


def parameter_census(embedder: SentenceEmbedder) -> dict[str, int]:
    """Trainable parameter count per declared block."""
    return {
        block: sum(p.numel() for p in embedder.block_parameters(block) if p.requires_grad)
        for block in embedder.block_names()
    }


# ---------------------------------------------------------------------------
# Embedding augmentations


def sinusoidal_positions(n: int, d_p: int, dtype=torch.float64) -> torch.Tensor:
    """Interleaved sin/cos position codes over sentence indices 0..n-1."""
    if d_p % 2 != 0:
        raise ValidationError("sinusoidal positional width must be even")
    positions = torch.arange(n, dtype=dtype).unsqueeze(1)
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(0, d_p, 2, dtype=dtype) / d_p
    )
    angles = positions * freqs
    out = torch.zeros((n, d_p), dtype=dtype)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    return out


class PositionalTable(nn.Module):
    """Learned per-sentence-position embeddings with a fixed capacity."""

    def __init__(self, d_p: int, capacity: int = MAX_SENTENCES, seed: int = 0):
        super().__init__()
        self.capacity = capacity
        self.table = nn.Embedding(capacity, d_p, dtype=torch.float64)
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "positional-table"))
        _fill_uniform(self.table.weight, gen, 0.1)

    def forward(self, n: int) -> torch.Tensor:
        if n > self.capacity:
            raise ValidationError(f"position {n - 1} beyond table capacity {self.capacity}")
        return self.table(torch.arange(n, dtype=torch.long))


def positional_embeddings(n: int, d_p: int, variant: str,
                          table: PositionalTable | None = None) -> torch.Tensor:
    if variant == "sinusoidal":
        return sinusoidal_positions(n, d_p)
    if variant == "vanilla":
        if table is None:
            raise ValidationError("vanilla positional embeddings need a learned table")
        return table(n)
    raise ValidationError(f"unknown positional variant {variant!r}")


class SelfAttentionPooling(nn.Module):
    """Single-query attention pooling of sentence embeddings to one vector."""

    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        self.query = nn.Parameter(torch.zeros(dim, dtype=torch.float64))
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "self-attention-query"))
        _fill_uniform(self.query, gen, 1.0 / math.sqrt(dim))

    def attention_weights(self, S: torch.Tensor) -> torch.Tensor:
        scores = S @ self.query
        return torch.softmax(scores, dim=0)

    def forward(self, S: torch.Tensor) -> torch.Tensor:
        if S.shape[0] == 0:
            raise ValidationError("cannot pool an empty sentence matrix")
        weights = self.attention_weights(S)
        return weights @ S


def document_embedding(S: torch.Tensor, pooling: SelfAttentionPooling) -> torch.Tensor:
    """Attention-weighted sum of sentence embeddings; weights sum to 1."""
    return pooling(S)


def document_arithmetic(D: torch.Tensor, S: torch.Tensor) -> torch.Tensor:
    """Topic-isolation features: ``[D * S_j ; D - S_j]`` per sentence, width 2d."""
    if D.shape[-1] != S.shape[-1]:
        raise ValidationError(f"width mismatch: document {D.shape[-1]} vs sentences {S.shape[-1]}")
    if S.dim() == 1:
        return torch.cat([D * S, D - S])
    expanded = D.unsqueeze(0).expand_as(S)
    return torch.cat([expanded * S, expanded - S], dim=1)


@dataclass(frozen=True)
class AugmentationMask:
    """Which optional embeddings get concatenated onto sentence embeddings."""

    positional: bool = False
    sinusoidal: bool = False
    document: bool = False
    arithmetic: bool = False
    headline: bool = False

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "AugmentationMask":
        unknown = set(names) - set(AUGMENTATIONS)
        if unknown:
            raise ValidationError(f"unknown augmentations: {sorted(unknown)}")
        return cls(**{name: name in set(names) for name in AUGMENTATIONS})

    def names(self) -> list[str]:
        return [name for name in AUGMENTATIONS if getattr(self, name)]

    def width(self, d: int, d_p: int) -> int:
        total = d
        if self.positional:
            total += d_p
        if self.sinusoidal:
            total += d_p
        if self.document:
            total += d
        if self.arithmetic:
            total += 2 * d
        if self.headline:
            total += d
        return total


@dataclass(frozen=True)
class EmbeddingBundle:
    """Per-document embeddings before contextualization.

    ``S`` is always present; the other fields exist when the mask requires
    them (``D`` is also computed whenever ``A`` is, since the arithmetic
    needs it).
    """

    S: torch.Tensor
    mask: AugmentationMask
    P: torch.Tensor | None = None
    P_s: torch.Tensor | None = None
    D: torch.Tensor | None = None
    A: torch.Tensor | None = None
    H: torch.Tensor | None = None

    def concat(self) -> torch.Tensor:
        n = self.S.shape[0]
        parts = [self.S]
        if self.mask.positional:
            parts.append(self.P)
        if self.mask.sinusoidal:
            parts.append(self.P_s)
        if self.mask.document:
            parts.append(self.D.unsqueeze(0).expand(n, -1))
        if self.mask.arithmetic:
            parts.append(self.A)
        if self.mask.headline:
            parts.append(self.H.unsqueeze(0).expand(n, -1))
        if any(p is None for p in parts):
            raise ValidationError("bundle is missing a field required by its mask")
        return torch.cat(parts, dim=1)


# ---------------------------------------------------------------------------
# Contextualizer and the assembled shared encoder


class SentenceContextualizer(nn.Module):
    """Bidirectional LSTM over a document's sentence sequence."""

    def __init__(self, input_width: int, hidden: int = 256, seed: int = 0):
        super().__init__()
        self.lstm = nn.LSTM(
            input_width, hidden, batch_first=True, bidirectional=True, dtype=torch.float64
        )
        gen = torch.Generator()
        gen.manual_seed(derive_seed(seed, "contextualizer"))
        reinit_module(self.lstm, gen)

    @property
    def output_width(self) -> int:
        return 2 * self.lstm.hidden_size

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(x.unsqueeze(0))
        return out.squeeze(0)


def contextualize(bundle: EmbeddingBundle, contextualizer: SentenceContextualizer) -> torch.Tensor:
    return contextualizer(bundle.concat())


@dataclass(frozen=True)
class EncoderConfig:
    embedder_dim: int = 16
    embedder_vocab: int = 4096
    embedder_blocks: int = 2
    embedder_max_tokens: int = 128
    augmentations: tuple[str, ...] = ()
    positional_dim: int = 64
    positional_capacity: int = MAX_SENTENCES
    lstm_hidden: int = 256
    frozen_blocks: tuple[str, ...] = ()

    def mask(self) -> AugmentationMask:
        return AugmentationMask.from_names(self.augmentations)

    def to_dict(self) -> dict:
        return {
            "embedder_dim": self.embedder_dim,
            "embedder_vocab": self.embedder_vocab,
            "embedder_blocks": self.embedder_blocks,
            "embedder_max_tokens": self.embedder_max_tokens,
            "augmentations": list(self.augmentations),
            "positional_dim": self.positional_dim,
            "positional_capacity": self.positional_capacity,
            "lstm_hidden": self.lstm_hidden,
            "frozen_blocks": list(self.frozen_blocks),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EncoderConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown encoder config keys: {sorted(unknown)}")
        raw = dict(raw)
        for key in ("augmentations", "frozen_blocks"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


class SharedEncoder(nn.Module):
    """Embedder + augmentations + Bi-LSTM, shared across task heads."""

    def __init__(self, config: EncoderConfig, seed: int = 0,
                 embedder: SentenceEmbedder | None = None):
        super().__init__()
        self.config = config
        self.mask = config.mask()
        self.embedder = embedder if embedder is not None else HashEmbedder(
            dim=config.embedder_dim,
            vocab_size=config.embedder_vocab,
            n_blocks=config.embedder_blocks,
            max_tokens=config.embedder_max_tokens,
            seed=derive_seed(seed, "embedder"),
        )
        d = self.embedder.dim
        self.positional = (
            PositionalTable(config.positional_dim, config.positional_capacity,
                            seed=derive_seed(seed, "positional"))
            if self.mask.positional
            else None
        )
        self.pooling = (
            SelfAttentionPooling(d, seed=derive_seed(seed, "pooling"))
            if (self.mask.document or self.mask.arithmetic)
            else None
        )
        self.input_width = self.mask.width(d, config.positional_dim)
        self.contextualizer = SentenceContextualizer(
            self.input_width, hidden=config.lstm_hidden, seed=derive_seed(seed, "lstm")
        )
        if config.frozen_blocks:
            apply_freeze_policy(
                self.embedder,
                FreezePolicy.from_frozen(self.embedder.block_names(), config.frozen_blocks),
            )

    @property
    def output_width(self) -> int:
        return self.contextualizer.output_width

    def bundle(self, doc: Document) -> EmbeddingBundle:
        n = len(doc.sentences)
        if n > MAX_SENTENCES:
            raise ValidationError(
                f"document {doc.doc_id!r} has {n} sentences, beyond the {MAX_SENTENCES} guard"
            )
        S = embed_sentences(doc, self.embedder)
        P = self.positional(n) if self.mask.positional else None
        P_s = sinusoidal_positions(n, self.config.positional_dim) if self.mask.sinusoidal else None
        D = self.pooling(S) if self.pooling is not None else None
        A = document_arithmetic(D, S) if self.mask.arithmetic else None
        H = None
        if self.mask.headline:
            tokens = tokenize(doc.headline) if doc.headline else []
            H = self.embedder.embed_tokens(tokens)
        return EmbeddingBundle(S=S, mask=self.mask, P=P, P_s=P_s, D=D, A=A, H=H)

    def forward(self, doc: Document) -> torch.Tensor:
        return contextualize(self.bundle(doc), self.contextualizer)
