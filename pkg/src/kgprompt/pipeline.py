"""Wiring between config, prompts, encoder, trainer and scoring."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data import FeatureSet
from .descriptions import load_cache, maskpad_descriptions
from .encoder import EncoderOutput, ExternalEncoder, ToyEncoder
from .errors import ValidationError
from .kg_store import load_kg, maskpad_kg
from .metrics import ScoreSet
from .model import PromptModel
from .objectives import forward
from .prompts import HashEmbeddingTable, build_bundles
from .trainer import TrainConfig


def build_encoder(cfg: RunConfig):
    if cfg.encoder == "external":
        return ExternalEncoder(cfg.encoder_url or None, cfg.image_size)
    return ToyEncoder(cfg.image_size, cfg.patch_grid, cfg.encoder_dim, cfg.encoder_seed)


def build_model(cfg: RunConfig, seed: int | None = None) -> PromptModel:
    seed = cfg.seed if seed is None else seed
    g = load_kg(cfg.kg_path) if cfg.kg_path else maskpad_kg()
    cache = load_cache(cfg.cache_path) if cfg.cache_path else maskpad_descriptions()
    table = HashEmbeddingTable(cfg.embed_dim, cfg.embedding_seed)
    bundles = build_bundles(g, cache, table, cfg.context_length, seed)
    return PromptModel.from_bundles(bundles, cfg.encoder_dim, cfg.hidden_dim, seed)


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    return TrainConfig(cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.batch_size, cfg.epochs,
                       cfg.lam, cfg.tau, cfg.seed if seed is None else seed)


def label_indices(model: PromptModel, cfg: RunConfig) -> tuple[int, int]:
    """Class indices of the genuine and the attack category."""
    try:
        return model.class_index(cfg.real_category), model.class_index(cfg.mask_category)
    except ValueError:
        raise ValidationError(
            f"categories {cfg.real_category!r}/{cfg.mask_category!r} not in graph {model.categories}"
        ) from None


def class_probabilities(model: PromptModel, fs: FeatureSet, tau: float, batch: int = 256) -> np.ndarray:
    out = [forward(model, fs.global_feats[i:i + batch], fs.patch_feats[i:i + batch], tau)["d"]
           for i in range(0, len(fs), batch)]
    return np.concatenate(out)


def score_features(model: PromptModel, fs: FeatureSet, tau: float, real_index: int) -> np.ndarray:
    return class_probabilities(model, fs, tau)[:, real_index]


def to_scoreset(scores: np.ndarray, fs: FeatureSet) -> ScoreSet:
    attack = ~fs.genuine
    return ScoreSet(scores[fs.genuine], scores[attack],
                    tuple(t for t, is_attack in zip(fs.attack_types, attack) if is_attack))


def score_sample(img: np.ndarray, model: PromptModel, encoder, tau: float) -> np.ndarray:
    """Class probability vector for one image (per-sample inference path)."""
    out: EncoderOutput = encoder.encode(img)
    return model.predict(out, tau)
