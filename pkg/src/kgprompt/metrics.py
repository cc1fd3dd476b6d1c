"""Biometric error rates: ROC, EER, HTER, AUC, APCER/BPCER/ACER and BPCER@APCER.

Conventions
-----------
* Scores are the genuine ("real face") probability; a sample is accepted as
  genuine when ``score >= threshold``.
* FAR = fraction of attack scores >= threshold, FRR = fraction of genuine
  scores < threshold. Rates are step functions, no interpolation.
* Scalar metrics are returned as percentages; ROC points carry fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyClass, UnreachableOperatingPoint, ValidationError

DEFAULT_ATTACK_TYPE = "mask"


@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    attack: np.ndarray
    attack_types: tuple[str, ...] = field(default=())

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        a = np.asarray(self.attack, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(a))):
            raise ValidationError("scores must be finite")
        types = tuple(self.attack_types) or (DEFAULT_ATTACK_TYPE,) * a.size
        if len(types) != a.size:
            raise ValidationError("one attack_type tag per attack score required")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "attack", a)
        object.__setattr__(self, "attack_types", types)

    def require_both(self) -> None:
        if self.genuine.size == 0 or self.attack.size == 0:
            raise EmptyClass(f"need genuine and attack scores, got {self.genuine.size} / {self.attack.size}")

    def by_type(self) -> dict[str, np.ndarray]:
        types = np.array(self.attack_types)
        return {t: self.attack[types == t] for t in sorted(set(self.attack_types))}


@dataclass(frozen=True)
class Threshold:
    value: float
    source: str = "dev"


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    frr: float


def _counts(s: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(false accepts, false rejects) per threshold, as integers."""
    a = np.sort(s.attack)
    g = np.sort(s.genuine)
    fa = a.size - np.searchsorted(a, thresholds, side="left")
    fr = np.searchsorted(g, thresholds, side="left")
    return fa, fr


def _candidate_thresholds(s: ScoreSet) -> np.ndarray:
    scores = np.unique(np.concatenate([s.genuine, s.attack]))
    return np.concatenate([[-np.inf], scores, [np.inf]])


def far_frr(s: ScoreSet, threshold: float) -> tuple[float, float]:
    s.require_both()
    fa, fr = _counts(s, np.array([threshold]))
    return fa[0] / s.attack.size, fr[0] / s.genuine.size


def roc_curve(s: ScoreSet) -> list[RocPoint]:
    """One point per distinct score plus the -inf / +inf sentinels, ascending threshold."""
    s.require_both()
    th = _candidate_thresholds(s)
    fa, fr = _counts(s, th)
    return [RocPoint(float(t), a / s.attack.size, r / s.genuine.size) for t, a, r in zip(th, fa, fr)]


def eer_threshold(dev: ScoreSet, source: str = "dev") -> tuple[Threshold, float]:
    """Threshold where FAR and FRR are closest, and the EER (%) there.

    Ties prefer the smaller FAR+FRR, then the smaller threshold. The EER is
    the midpoint (FAR+FRR)/2 at that threshold.
    """
    dev.require_both()
    th = _candidate_thresholds(dev)
    fa, fr = _counts(dev, th)
    na, ng = dev.attack.size, dev.genuine.size
    # compare rates exactly: FAR - FRR = (fa*ng - fr*na) / (na*ng)
    gap = np.abs(fa * ng - fr * na)
    total = fa * ng + fr * na
    best = np.lexsort((th, total, gap))[0]
    eer = 100.0 * (fa[best] / na + fr[best] / ng) / 2.0
    return Threshold(float(th[best]), source), eer


def hter(test: ScoreSet, threshold: Threshold | float) -> float:
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    far, frr = far_frr(test, value)
    return 100.0 * (far + frr) / 2.0


def auc(s: ScoreSet) -> float:
    """P(genuine > attack) + 0.5 * P(tie), in percent."""
    s.require_both()
    a = np.sort(s.attack)
    lo = np.searchsorted(a, s.genuine, side="left")
    hi = np.searchsorted(a, s.genuine, side="right")
    wins = np.sum(lo) + 0.5 * np.sum(hi - lo)
    return 100.0 * wins / (s.genuine.size * s.attack.size)


def _apcer(s: ScoreSet, thresholds: np.ndarray) -> np.ndarray:
    """Worst per-type acceptance rate for each threshold."""
    worst = np.zeros(thresholds.size)
    for scores in s.by_type().values():
        srt = np.sort(scores)
        rate = (srt.size - np.searchsorted(srt, thresholds, side="left")) / srt.size
        worst = np.maximum(worst, rate)
    return worst


def apcer_bpcer_acer(s: ScoreSet, threshold: Threshold | float) -> tuple[float, float, float]:
    s.require_both()
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    apcer = 100.0 * _apcer(s, np.array([value]))[0]
    bpcer = 100.0 * np.mean(s.genuine < value)
    return apcer, bpcer, (apcer + bpcer) / 2.0


def bpcer_at_apcer(s: ScoreSet, target: float) -> float:
    """BPCER (%) at the lowest threshold whose APCER does not exceed `target`.

    `target` is a fraction (0.1 or 0.01). The operating point is reachable
    only when every attack type has at least ``1/target`` samples.
    """
    s.require_both()
    if not 0 < target < 1:
        raise ValueError("target APCER must be a fraction in (0, 1)")
    smallest = min(v.size for v in s.by_type().values())
    if smallest * target < 1 - 1e-9:
        raise UnreachableOperatingPoint(
            f"APCER={target} needs >= {int(np.ceil(1 / target - 1e-9))} attacks per type, smallest type has {smallest}"
        )
    th = _candidate_thresholds(s)
    ok = _apcer(s, th) <= target + 1e-12
    chosen = th[np.argmax(ok)]  # APCER is non-increasing in the threshold
    return 100.0 * float(np.mean(s.genuine < chosen))
