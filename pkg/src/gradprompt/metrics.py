"""Precision, recall and F1 against the GRAD label, plus precision at a recall floor.

All values are percentages in full precision; round only for display.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset import Label


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, predicted: Iterable[Label], truth: Iterable[Label]) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for p, t in zip(predicted, truth, strict=True):
            if p is Label.GRAD:
                tp, fp = (tp + 1, fp) if t is Label.GRAD else (tp, fp + 1)
            else:
                fn, tn = (fn + 1, tn) if t is Label.GRAD else (fn, tn + 1)
        return cls(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1_from(p: float, r: float) -> float:
    """Harmonic mean of two percentages; 0 when both are 0."""
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def f1(c: ConfusionCounts) -> float:
    return f1_from(precision(c), recall(c))


@dataclass(frozen=True)
class Scores:
    """Precision/recall/F1 of one operating point.

    ``degenerate`` names the metrics whose denominator was zero; those are
    reported as 0 instead of raising.
    """

    precision: float
    recall: float
    f1: float
    degenerate: frozenset[str] = frozenset()


def scores(c: ConfusionCounts) -> Scores:
    degenerate = set()
    if c.tp + c.fp == 0:
        degenerate.add("precision")
    if c.tp + c.fn == 0:
        degenerate.add("recall")
    p, r = precision(c), recall(c)
    if p + r == 0:
        degenerate.add("f1")
    return Scores(p, r, f1_from(p, r), frozenset(degenerate))


def meets_recall(c: ConfusionCounts, threshold: float) -> bool:
    # integer-side comparison avoids 95/100*100 < 95 style float artefacts
    positives = c.tp + c.fn
    return positives > 0 and c.tp * 100 >= threshold * positives


def point_precision_at_recall(c: ConfusionCounts, threshold: float) -> float:
    """Precision if recall reaches ``threshold`` (a percentage), else 0."""
    if not 0 < threshold <= 100:
        raise ValueError("threshold must lie in (0, 100]")
    return precision(c) if meets_recall(c, threshold) else 0.0


def precision_at_recall_from_rates(precision_pct: float, recall_pct: float, threshold: float) -> float:
    """Same rule for rows where only the rounded precision/recall are known."""
    return precision_pct if recall_pct >= threshold else 0.0


@dataclass(frozen=True)
class ScoredPrediction:
    score: float
    truth: Label

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass(frozen=True)
class SweepResult:
    best_precision: float
    chosen_cutoff: float
    reachable: bool = True

    @property
    def reported(self) -> float:
        return self.best_precision if self.reachable else 0.0


def sweep_precision_at_recall(preds: Sequence[ScoredPrediction], threshold: float) -> SweepResult:
    """Best precision over score cutoffs whose recall is at least ``threshold``.

    Predict GRAD iff ``score >= cutoff``; cutoffs are the observed scores (plus
    +inf, which predicts nothing). Tied scores always fall on the same side.
    Among cutoffs with equal best precision the lowest one (highest recall)
    is chosen. Returns an unreachable result, reported as 0, if no cutoff
    meets the recall floor.
    """
    if not 0 < threshold <= 100:
        raise ValueError("threshold must lie in (0, 100]")
    scores_ = np.array([p.score for p in preds], dtype=float)
    is_pos = np.array([p.truth is Label.GRAD for p in preds], dtype=bool)
    n_pos = int(is_pos.sum())
    if n_pos == 0:
        raise ValueError("sweep needs at least one GRAD example")
    order = np.argsort(-scores_, kind="stable")
    s, y = scores_[order], is_pos[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    best: SweepResult | None = None
    for i in ends:
        c = ConfusionCounts(tp=int(tp[i]), fp=int(fp[i]), fn=n_pos - int(tp[i]))
        if not meets_recall(c, threshold):
            continue
        p = precision(c)
        if best is None or p >= best.best_precision:
            best = SweepResult(p, float(s[i]))
    return best if best is not None else SweepResult(0.0, math.inf, reachable=False)
