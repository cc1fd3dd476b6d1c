"""Trainable prompt-learning state and the per-sample inference path."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderOutput
from .knowledge_filter import (
    AdaptationLayer,
    KnowledgeFilter,
    adapt_visual,
    apply_filter,
    compose_prompt,
    encode_text,
)
from .prompts import PromptBundle

TRAINABLE = (
    "context",
    "adapt.W1", "adapt.b1", "adapt.W2", "adapt.b2",
    "filter_e.Psi", "filter_e.bias",
    "filter_d.Psi", "filter_d.bias",
)


@dataclass
class PromptModel:
    """Frozen prompt embeddings plus every trainable parameter.

    ``params`` holds exactly the names in ``TRAINABLE``; the knowledge rows and
    class embeddings are fixed inputs built from the graph and never updated.
    """

    categories: tuple[str, ...]
    entity_rows: list[np.ndarray]   # per class, (L_e + 1, m)
    desc_rows: list[np.ndarray]     # per class, (L_d + 1, m)
    class_emb: np.ndarray           # (K, m)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    entity_tags: list[tuple[str, ...]] = field(default_factory=list)

    @classmethod
    def from_bundles(cls, bundles: list[PromptBundle], encoder_dim: int, hidden_dim: int,
                     seed: int) -> "PromptModel":
        m = bundles[0].class_embedding.shape[0]
        rng = np.random.default_rng([seed, 1])
        layer = AdaptationLayer.init(encoder_dim, hidden_dim, m, rng)
        fe, fd = KnowledgeFilter.init(m), KnowledgeFilter.init(m)
        params = {
            "context": np.stack([b.context for b in bundles]).astype(np.float64),
            "adapt.W1": layer.W1, "adapt.b1": layer.b1, "adapt.W2": layer.W2, "adapt.b2": layer.b2,
            "filter_e.Psi": fe.Psi, "filter_e.bias": fe.bias,
            "filter_d.Psi": fd.Psi, "filter_d.bias": fd.bias,
        }
        return cls(
            categories=tuple(b.category for b in bundles),
            entity_rows=[b.entity_prompt.rows for b in bundles],
            desc_rows=[b.description_prompt.rows for b in bundles],
            class_emb=np.stack([b.class_embedding for b in bundles]),
            params=params,
            entity_tags=[b.entity_prompt.tags for b in bundles],
        )

    @property
    def n_classes(self) -> int:
        return len(self.categories)

    @property
    def width(self) -> int:
        return self.class_emb.shape[1]

    @property
    def context_length(self) -> int:
        return self.params["context"].shape[1]

    def class_index(self, category: str) -> int:
        return self.categories.index(category)

    @property
    def adaptation(self) -> AdaptationLayer:
        p = self.params
        return AdaptationLayer(p["adapt.W1"], p["adapt.b1"], p["adapt.W2"], p["adapt.b2"])

    @property
    def entity_filter(self) -> KnowledgeFilter:
        return KnowledgeFilter(self.params["filter_e.Psi"], self.params["filter_e.bias"])

    @property
    def description_filter(self) -> KnowledgeFilter:
        return KnowledgeFilter(self.params["filter_d.Psi"], self.params["filter_d.bias"])

    def copy(self) -> "PromptModel":
        return PromptModel(self.categories, self.entity_rows, self.desc_rows, self.class_emb,
                           {k: v.copy() for k, v in self.params.items()}, self.entity_tags)

    def param_checksum(self) -> str:
        h = hashlib.sha256()
        for name in TRAINABLE:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    # -- per-sample path (reference implementation, used for inference) -----

    def visual_feature(self, raw: np.ndarray) -> np.ndarray:
        return adapt_visual(raw, self.adaptation)

    def text_features(self, f_v: np.ndarray) -> np.ndarray:
        """Unit text feature of every class, conditioned on the visual feature."""
        fe, fd = self.entity_filter, self.description_filter
        feats = []
        for k in range(self.n_classes):
            prompt = compose_prompt(
                apply_filter(self.entity_rows[k], f_v, fe),
                apply_filter(self.desc_rows[k], f_v, fd),
                self.params["context"][k],
                self.class_emb[k],
            )
            feats.append(encode_text(prompt))
        return np.stack(feats)

    def predict(self, out: EncoderOutput, tau: float) -> np.ndarray:
        from .objectives import class_probs

        f_v = self.visual_feature(out.global_feature)
        return class_probs(f_v, self.text_features(f_v), tau)
