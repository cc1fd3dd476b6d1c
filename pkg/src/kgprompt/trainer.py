"""SGD with momentum, weight decay and cosine-annealed learning rate."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import FeatureSet
from .errors import EmptyClass, IOFailure, MalformedFile, NonFiniteLoss, NonFiniteUpdate
from .model import TRAINABLE, PromptModel
from .objectives import loss_and_gradients

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "kgprompt-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 128
    epochs: int = 30
    lam: float = 0.5
    tau: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.lam < 0:
            raise ValueError("weight_decay and lambda must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    srd: float
    sce: float
    total: float


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """Cosine annealing from lr0 at t=0 to 0 at t=total, no restarts."""
    if total < 1 or not 0 <= t <= total:
        raise ValueError(f"need 0 <= t <= total and total >= 1, got t={t}, total={total}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float,
             weight_decay: float) -> tuple[dict, dict]:
    """v <- mu*v - lr*(g + wd*theta); theta <- theta + v."""
    new_params, new_velocity = {}, {}
    for name, theta in params.items():
        v = momentum * velocity[name] - lr * (grads[name] + weight_decay * theta)
        if not np.all(np.isfinite(v)):
            raise NonFiniteUpdate(f"non-finite update for {name}")
        new_velocity[name] = v
        new_params[name] = theta + v
    return new_params, new_velocity


def fit(train: FeatureSet, model: PromptModel, cfg: TrainConfig, real_index: int,
        mask_index: int) -> tuple[PromptModel, list[EpochLog]]:
    """Train prompt parameters on pre-encoded features.

    Returns a new model; the input model is left untouched. Batches come from
    a seeded shuffle per epoch and the last partial batch is kept.
    """
    if not np.any(train.genuine) or np.all(train.genuine):
        raise EmptyClass("training data must contain both real and mask samples")
    model = model.copy()
    if cfg.epochs == 0:
        return model, []

    labels = train.labels(real_index, mask_index)
    n = len(train)
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = np.zeros(3)
        lr = cosine_lr(step, total_steps, cfg.lr0)
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = cosine_lr(step, total_steps, cfg.lr0)
            bd, grads = loss_and_gradients(model, train.global_feats[idx], train.patch_feats[idx],
                                           labels[idx], cfg.lam, cfg.tau)
            if not math.isfinite(bd.total):
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}, batch {b}")
            sums += len(idx) * np.array([bd.srd, bd.sce, bd.total])
            model.params, velocity = sgd_step(model.params, grads, velocity, lr,
                                              cfg.momentum, cfg.weight_decay)
            step += 1
        srd, sce, total = sums / n
        history.append(EpochLog(epoch, lr, float(srd), float(sce), float(total)))
        log.debug("epoch %d lr=%.3g srd=%.4f sce=%.4f total=%.4f", epoch, lr, srd, sce, total)
    return model, history


# -- checkpoints -------------------------------------------------------------

def _array_doc(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _array(doc: dict) -> np.ndarray:
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])


def save_checkpoint(path, model: PromptModel, config: dict, seed: int, threshold: float | None = None,
                    history: list[EpochLog] | None = None, encoder_checksum: str | None = None) -> None:
    """Write a JSON checkpoint; floats use repr, so rewrites are byte-identical."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "config": config,
        "threshold": threshold,
        "encoder_checksum": encoder_checksum,
        "categories": list(model.categories),
        "frozen": {
            "class_emb": _array_doc(model.class_emb),
            "entity_rows": [_array_doc(r) for r in model.entity_rows],
            "desc_rows": [_array_doc(r) for r in model.desc_rows],
            "entity_tags": [list(t) for t in model.entity_tags],
        },
        "params": {name: _array_doc(model.params[name]) for name in TRAINABLE},
        "history": [asdict(h) for h in (history or [])],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[PromptModel, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IOFailure(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise MalformedFile(f"{path} is not a version-{CHECKPOINT_VERSION} kgprompt checkpoint")
    try:
        fr = doc["frozen"]
        model = PromptModel(
            categories=tuple(doc["categories"]),
            entity_rows=[_array(r) for r in fr["entity_rows"]],
            desc_rows=[_array(r) for r in fr["desc_rows"]],
            class_emb=_array(fr["class_emb"]),
            params={name: _array(doc["params"][name]) for name in TRAINABLE},
            entity_tags=[tuple(t) for t in fr["entity_tags"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"checkpoint {path} is incomplete: {exc}") from exc
    meta = {k: doc.get(k) for k in ("seed", "config", "threshold", "encoder_checksum", "history")}
    return model, meta
