"""Visual adaptation layer, visual-specific knowledge filters and prompt composition.

Shapes use row-vector convention: a feature is a 1-d array and layers act as
``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._math import softmax
from .errors import DimensionMismatch, EncoderFailure
from .prompts import TokenEmbedding


@dataclass
class AdaptationLayer:
    """Two fully connected layers with a rectifier in between."""

    W1: np.ndarray  # (m_enc, m_hid)
    b1: np.ndarray  # (m_hid,)
    W2: np.ndarray  # (m_hid, m)
    b2: np.ndarray  # (m,)

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator) -> "AdaptationLayer":
        # He-style init for the rectified layer, Xavier for the output layer
        return cls(
            W1=rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            W2=rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=(hidden_dim, out_dim)),
            b2=np.zeros(out_dim),
        )


@dataclass
class KnowledgeFilter:
    """Linear projection applied to the attention-pooled knowledge row."""

    Psi: np.ndarray   # (m, m)
    bias: np.ndarray  # (m,)

    @classmethod
    def init(cls, width: int) -> "KnowledgeFilter":
        return cls(Psi=np.eye(width), bias=np.zeros(width))


def adapt_visual(x: np.ndarray, layer: AdaptationLayer) -> np.ndarray:
    """Task-specific visual embedding; accepts a single feature or a stack of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise DimensionMismatch(f"feature width {x.shape[-1]} != adaptation input {layer.in_dim}")
    hidden = np.maximum(x @ layer.W1 + layer.b1, 0.0)
    return hidden @ layer.W2 + layer.b2


def filter_logits(t: TokenEmbedding | np.ndarray, f_v: np.ndarray) -> np.ndarray:
    rows = t.rows if isinstance(t, TokenEmbedding) else np.asarray(t, dtype=np.float64)
    f_v = np.asarray(f_v, dtype=np.float64)
    if rows.shape[-1] != f_v.shape[-1]:
        raise DimensionMismatch(f"row width {rows.shape[-1]} != visual width {f_v.shape[-1]}")
    return rows @ f_v / np.sqrt(rows.shape[-1])


def attention_weights(t: TokenEmbedding | np.ndarray, f_v: np.ndarray) -> np.ndarray:
    return softmax(filter_logits(t, f_v))


def apply_filter(t: TokenEmbedding | np.ndarray, f_v: np.ndarray, F: KnowledgeFilter) -> np.ndarray:
    """Project the image-conditioned attention pooling of the prompt rows."""
    rows = t.rows if isinstance(t, TokenEmbedding) else np.asarray(t, dtype=np.float64)
    if F.Psi.shape != (rows.shape[-1], rows.shape[-1]):
        raise DimensionMismatch(f"projection shape {F.Psi.shape} does not match width {rows.shape[-1]}")
    pooled = attention_weights(rows, f_v) @ rows
    return pooled @ F.Psi + F.bias


@dataclass(frozen=True)
class ComposedPrompt:
    rows: np.ndarray  # [entity filter out, description filter out, context..., class]

    def __len__(self) -> int:
        return self.rows.shape[0]


def compose_prompt(ep: np.ndarray, dp: np.ndarray, ctx: np.ndarray, cls: np.ndarray) -> ComposedPrompt:
    ctx = np.atleast_2d(ctx)
    widths = {np.shape(ep)[-1], np.shape(dp)[-1], ctx.shape[-1], np.shape(cls)[-1]}
    if len(widths) != 1:
        raise DimensionMismatch(f"prompt parts have mixed widths {sorted(widths)}")
    return ComposedPrompt(np.vstack([ep, dp, ctx, cls]))


class MeanTextEncoder:
    """Frozen toy text encoder: the mean of the input rows.

    Linear, so gradients through it are a uniform 1/n split over the rows.
    """

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        return rows.mean(axis=0)


def encode_text(p: ComposedPrompt, enc=None) -> np.ndarray:
    """Unit-norm text feature for a composed prompt."""
    enc = enc or MeanTextEncoder()
    try:
        out = np.asarray(enc(p.rows), dtype=np.float64)
    except Exception as exc:
        raise EncoderFailure(f"text encoder failed: {exc}") from exc
    norm = np.linalg.norm(out)
    if not np.isfinite(norm) or norm == 0.0:
        raise EncoderFailure("text encoder produced a zero or non-finite feature")
    return out / norm
