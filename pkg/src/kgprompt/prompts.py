"""Entity, description and learnable-context prompts per category.

Every entity and every description is pooled to a single embedding row, so
the knowledge filters attend over whole knowledge units rather than sub-word
tokens. Row 0 of both knowledge prompts holds the class-name embedding.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .descriptions import DescriptionCache, TripleDescription, generate_descriptions
from .errors import CategoryMismatch, DimensionMismatch
from .kg_store import KnowledgeGraph, query_category

CONTEXT_INIT_STD = 0.02
_WORD = re.compile(r"[a-z0-9]+")


class EmbeddingProvider(Protocol):
    dim: int

    def word_vector(self, word: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    words = _WORD.findall(text.lower())
    return words or [text.strip().lower()]


class HashEmbeddingTable:
    """Deterministic toy vocabulary: each word hashes to a fixed Gaussian vector.

    Vectors have per-entry std 1/sqrt(dim), so their norms are close to 1.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise ValueError("embedding width must be >= 1")
        self.dim = dim
        self.seed = seed
        self._memo: dict[str, np.ndarray] = {}

    def word_vector(self, word: str) -> np.ndarray:
        vec = self._memo.get(word)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}:{word}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.normal(0.0, 1.0 / np.sqrt(self.dim), size=self.dim)
            vec.setflags(write=False)
            self._memo[word] = vec
        return vec


class StaticEmbeddingTable:
    """Embedding provider backed by an explicit word -> vector mapping."""

    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        self._vectors = {w: np.asarray(v, dtype=np.float64) for w, v in vectors.items()}
        dims = {v.shape for v in self._vectors.values()}
        if len(dims) != 1:
            raise DimensionMismatch("all vectors must share one width")
        self.dim = dims.pop()[0]

    def word_vector(self, word: str) -> np.ndarray:
        return self._vectors[word]


def embed_phrase(text: str, table: EmbeddingProvider) -> np.ndarray:
    """Mean of the word vectors of `text`."""
    if not text or not text.strip():
        raise ValueError("cannot embed an empty phrase")
    return np.mean([table.word_vector(w) for w in tokenize(text)], axis=0)


@dataclass(frozen=True)
class TokenEmbedding:
    rows: np.ndarray          # (n, m)
    tags: tuple[str, ...]     # which slot produced each row

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1 or self.rows.shape[1] < 1:
            raise DimensionMismatch(f"token embedding must be a non-empty (n, m) array, got {self.rows.shape}")
        if len(self.tags) != self.rows.shape[0]:
            raise DimensionMismatch("one tag per row required")

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


def build_entity_prompt(g: KnowledgeGraph, category: str, table: EmbeddingProvider) -> TokenEmbedding:
    entities, _ = query_category(g, category)
    rows = [embed_phrase(category, table)] + [embed_phrase(e.text, table) for e in entities]
    tags = (f"class:{category}",) + tuple(f"entity:{e.text}" for e in entities)
    return TokenEmbedding(np.vstack(rows), tags)


def build_description_prompt(descriptions: Sequence[TripleDescription], category: str,
                             table: EmbeddingProvider) -> TokenEmbedding:
    wrong = [d.triple_key for d in descriptions if d.category != category]
    if wrong:
        raise CategoryMismatch(f"descriptions not of {category!r}: {wrong}")
    rows = [embed_phrase(category, table)] + [embed_phrase(d.text, table) for d in descriptions]
    tags = (f"class:{category}",) + tuple(f"description:{d.triple_key}" for d in descriptions)
    return TokenEmbedding(np.vstack(rows), tags)


def init_context(n_classes: int, length: int, width: int, seed: int) -> np.ndarray:
    """Per-class context vectors, shape (K, L, m), drawn from N(0, 0.02^2)."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if length < 1 or width < 1:
        raise ValueError("context length and width must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, CONTEXT_INIT_STD, size=(n_classes, length, width))


@dataclass(frozen=True)
class PromptBundle:
    category: str
    entity_prompt: TokenEmbedding
    description_prompt: TokenEmbedding
    context: np.ndarray          # (L, m); initial values, the trainer owns updates
    class_embedding: np.ndarray  # (m,)


def build_bundles(g: KnowledgeGraph, cache: DescriptionCache, table: EmbeddingProvider,
                  context_length: int = 2, seed: int = 0, client=None) -> list[PromptBundle]:
    """Assemble prompts for every category in the graph's canonical order."""
    contexts = init_context(len(g.categories), context_length, table.dim, seed)
    bundles = []
    for k, c in enumerate(g.categories):
        descs = generate_descriptions(g, c, client, cache)
        bundles.append(PromptBundle(
            category=c,
            entity_prompt=build_entity_prompt(g, c, table),
            description_prompt=build_description_prompt(descs, c, table),
            context=contexts[k],
            class_embedding=embed_phrase(c, table),
        ))
    return bundles
