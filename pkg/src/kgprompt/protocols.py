"""Evaluation protocols: subject-disjoint LOOCV and cross-dataset runs.

Every round trains a fresh model on its training subjects, fixes the
decision threshold at the dev-set EER point and scores the test subjects at
that threshold. Round ``r`` uses seed ``cfg.seed + r`` for both the subject
draw and the model initialisation, so a report is a pure function of the
inputs and the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import metrics as M
from .config import RunConfig
from .data import FeatureSet, Manifest, encode_manifest
from .errors import EmptyClass, TooFewSubjects, UnreachableOperatingPoint, ValidationError
from .model import PromptModel
from .pipeline import build_encoder, build_model, label_indices, score_features, to_scoreset, train_config
from .trainer import EpochLog, fit

METRIC_NAMES = ("eer", "hter", "auc", "apcer", "bpcer", "acer", "b_at_a_01", "b_at_a_001")

ModelFactory = Callable[[RunConfig, int], PromptModel]


@dataclass(frozen=True)
class RoundResult:
    round: int
    seed: int
    threshold: float
    dev_eer: float
    metrics: dict  # METRIC_NAMES -> percentage, B@A may be NaN when unreachable
    train_subjects: tuple[str, ...]
    dev_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]
    roc: list[M.RocPoint]
    history: list[EpochLog] = field(default_factory=list)
    scores: M.ScoreSet | None = None


@dataclass(frozen=True)
class EvaluationReport:
    """Mean and population std of every metric over the rounds.

    ``roc`` is the step ROC of the test scores pooled over all rounds; with a
    single round it is that round's test ROC. Unreachable B@A rounds are
    skipped in the aggregate, which is None when no round reached it.
    """

    protocol: str
    rounds: list[RoundResult]
    mean: dict
    std: dict
    roc: list[M.RocPoint]

    def __getattr__(self, name):
        if name in METRIC_NAMES:
            return self.mean[name]
        raise AttributeError(name)

    @property
    def threshold(self) -> float:
        return self.rounds[-1].threshold


def _aggregate(rounds: list[RoundResult]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([r.metrics[name] for r in rounds], dtype=float)
        vals = vals[np.isfinite(vals)]
        mean[name] = float(vals.mean()) if vals.size else None
        std[name] = float(vals.std()) if vals.size else None
    return mean, std


def _pooled_roc(rounds: list[RoundResult]) -> list[M.RocPoint]:
    pooled = M.ScoreSet(
        np.concatenate([r.scores.genuine for r in rounds]),
        np.concatenate([r.scores.attack for r in rounds]),
        tuple(t for r in rounds for t in r.scores.attack_types),
    )
    return M.roc_curve(pooled)


def _b_at_a(s: M.ScoreSet, target: float) -> float:
    try:
        return M.bpcer_at_apcer(s, target)
    except UnreachableOperatingPoint:
        return math.nan


def evaluate_scores(dev: M.ScoreSet, test: M.ScoreSet) -> tuple[M.Threshold, float, dict]:
    """Dev-EER threshold, the dev EER, and every test metric at that threshold."""
    threshold, dev_eer = M.eer_threshold(dev)
    test.require_both()
    _, test_eer = M.eer_threshold(test, source="test")
    apcer, bpcer, acer = M.apcer_bpcer_acer(test, threshold)
    values = {
        "eer": test_eer,
        "hter": M.hter(test, threshold),
        "auc": M.auc(test),
        "apcer": apcer,
        "bpcer": bpcer,
        "acer": acer,
        "b_at_a_01": _b_at_a(test, 0.1),
        "b_at_a_001": _b_at_a(test, 0.01),
    }
    return threshold, dev_eer, values


def _subject_index(fs: FeatureSet, subjects) -> np.ndarray:
    wanted = set(subjects)
    return np.array([i for i, s in enumerate(fs.subjects) if s in wanted], dtype=int)


def run_round(fs: FeatureSet, train_s, dev_s, test_s, cfg: RunConfig, round_index: int = 0,
              test_fs: FeatureSet | None = None, model_factory: ModelFactory = build_model) -> RoundResult:
    """Fit on `train_s`, threshold on `dev_s`, score `test_s`.

    Test subjects come from `test_fs` when given (cross-dataset), else from `fs`.
    """
    seed = cfg.seed + round_index
    parts = {}
    for name, subjects, source in (("train", train_s, fs), ("dev", dev_s, fs),
                                   ("test", test_s, fs if test_fs is None else test_fs)):
        idx = _subject_index(source, subjects)
        if idx.size == 0:
            raise EmptyClass(f"{name} split is empty")
        parts[name] = source.take(idx)
        g = parts[name].genuine
        if not g.any() or g.all():
            raise EmptyClass(f"{name} split needs real and mask samples "
                             f"(got {int(g.sum())} / {int((~g).sum())})")

    model = model_factory(cfg, seed)
    real_i, mask_i = label_indices(model, cfg)
    model, history = fit(parts["train"], model, train_config(cfg, seed), real_i, mask_i)
    sets = {}
    for name in ("dev", "test"):
        scores = score_features(model, parts[name], cfg.tau, real_i)
        sets[name] = to_scoreset(scores, parts[name])
    threshold, dev_eer, values = evaluate_scores(sets["dev"], sets["test"])
    return RoundResult(round_index, seed, threshold.value, dev_eer, values, tuple(train_s), tuple(dev_s),
                       tuple(test_s), M.roc_curve(sets["test"]), history, sets["test"])


def _features(data, cfg: RunConfig) -> FeatureSet:
    if isinstance(data, FeatureSet):
        return data
    if isinstance(data, Manifest):
        return encode_manifest(data, build_encoder(cfg), cfg.image_size)
    raise TypeError(f"expected a Manifest or FeatureSet, got {type(data).__name__}")


def run_loocv(data: Manifest | FeatureSet, cfg: RunConfig, rounds: int | None = None,
              model_factory: ModelFactory = build_model) -> EvaluationReport:
    """Leave-one-subject-out rounds with seeded train/dev subject draws.

    Round ``r`` draws, with ``default_rng(seed + r)``, one held-out subject and
    then ``cfg.train_subjects`` training and ``cfg.dev_subjects`` dev subjects
    from the rest.
    """
    rounds = cfg.rounds if rounds is None else rounds
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    fs = _features(data, cfg)
    subjects = sorted(set(fs.subjects))
    need = 1 + cfg.train_subjects + cfg.dev_subjects
    if len(subjects) < need:
        raise TooFewSubjects(f"LOOCV with {cfg.train_subjects} train / {cfg.dev_subjects} dev subjects "
                             f"needs {need} subjects, manifest has {len(subjects)}")
    results = []
    for r in range(rounds):
        order = np.random.default_rng(cfg.seed + r).permutation(len(subjects))
        picked = [subjects[i] for i in order]
        test_s = picked[:1]
        train_s = sorted(picked[1:1 + cfg.train_subjects])
        dev_s = sorted(picked[1 + cfg.train_subjects:need])
        results.append(run_round(fs, train_s, dev_s, test_s, cfg, r, model_factory=model_factory))
    mean, std = _aggregate(results)
    return EvaluationReport("loocv", results, mean, std, _pooled_roc(results))


def split_train_dev(manifest: Manifest, seed: int, dev_fraction: float = 0.5) -> tuple[list[str], list[str]]:
    """Train and dev subjects of a training-side manifest.

    Rows tagged ``train``/``dev`` keep their split. Subjects tagged ``auto``
    are shuffled with `seed` and the first ``round(n * dev_fraction)`` (at
    least one when no explicit dev subject exists) go to dev.
    """
    by_split: dict[str, set] = {"train": set(), "dev": set(), "auto": set(), "test": set()}
    for row in manifest.rows:
        by_split[row.split].add(row.subject)
    auto = sorted(by_split["auto"] - by_split["train"] - by_split["dev"])
    order = [auto[i] for i in np.random.default_rng(seed).permutation(len(auto))]
    n_dev = int(round(len(auto) * dev_fraction))
    if not by_split["dev"] and auto:
        n_dev = max(1, min(n_dev, len(auto) - (0 if by_split["train"] else 1)))
    train = sorted(by_split["train"] | set(order[n_dev:]))
    dev = sorted(by_split["dev"] | set(order[:n_dev]))
    if not train or not dev:
        raise TooFewSubjects(f"need at least one train and one dev subject, got {len(train)} / {len(dev)}")
    if set(train) & set(dev):
        raise ValidationError(f"subjects in both train and dev: {sorted(set(train) & set(dev))}")
    return train, dev


def run_cross_dataset(train_manifest: Manifest, test_manifest: Manifest, cfg: RunConfig,
                      train_features: FeatureSet | None = None, test_features: FeatureSet | None = None,
                      model_factory: ModelFactory = build_model) -> EvaluationReport:
    """Train on one dataset, threshold on its dev subjects, test on another.

    Pre-encoded features may be passed to skip the encoder; they must follow
    the manifests' row order.
    """
    shared = train_manifest.identity() & test_manifest.identity()
    if shared:
        raise ValidationError(f"train and test manifests share {len(shared)} images; they must be disjoint")
    dev_fraction = cfg.dev_subjects / (cfg.train_subjects + cfg.dev_subjects)
    train_s, dev_s = split_train_dev(train_manifest, cfg.seed, dev_fraction)
    fs = train_features if train_features is not None else _features(train_manifest, cfg)
    test_fs = test_features if test_features is not None else _features(test_manifest, cfg)
    result = run_round(fs, train_s, dev_s, sorted(set(test_fs.subjects)), cfg, 0, test_fs,
                       model_factory=model_factory)
    mean, std = _aggregate([result])
    return EvaluationReport("cross", [result], mean, std, result.roc)
