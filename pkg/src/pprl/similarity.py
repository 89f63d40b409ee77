"""Threshold classification and linkage-quality metrics.

Pure functions over similarity scores.  Thresholds are fractions in
[0, 1] everywhere; rendering as percentages is a display concern.  The
match decision is inclusive: a score equal to the threshold matches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ClassifiedPair",
    "ConfusionMatrix",
    "Metrics",
    "SweepRow",
    "classify",
    "compute_metrics",
    "sweep",
]


def classify(similarity: float, threshold: float) -> bool:
    """Decide whether a similarity score counts as a match.

    Inclusive comparison: ``similarity >= threshold``.  Both arguments
    must lie in [0, 1].
    """
    if not 0.0 <= similarity <= 1.0:
        raise ValueError(f"similarity {similarity} outside [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return similarity >= threshold


@dataclass(frozen=True)
class ClassifiedPair:
    """One compared vector pair, referenced by (client, vector index)."""

    left_client: str
    left_index: int
    right_client: str
    right_index: int
    similarity: float
    is_match: bool

    def __post_init__(self) -> None:
        if self.left_client == self.right_client:
            raise ValueError("pair references the same client twice")
        if self.left_index < 0 or self.right_index < 0:
            raise ValueError("vector indices must be non-negative")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pair-level linkage outcome counts."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    """Precision, recall and F1 for one threshold.

    ``degenerate`` flags that at least one denominator was zero and the
    affected scores were reported as 0.0 rather than undefined.
    """

    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Precision, recall and F1 from a confusion matrix.

    Degenerate denominators (no predicted positives, no true positives,
    or both) yield 0.0 scores with the ``degenerate`` flag set.
    """
    degenerate = False
    if cm.tp + cm.fp > 0:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision, degenerate = 0.0, True
    if cm.tp + cm.fn > 0:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return Metrics(precision, recall, f1, degenerate)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    precision: float
    recall: float
    f1: float


def sweep(
    pairs: Iterable[tuple[float, bool]], thresholds: Sequence[float]
) -> list[SweepRow]:
    """Evaluate precision/recall/F1 at each threshold of a sweep.

    ``pairs`` yields ``(similarity, is_true_match)`` for every compared
    pair; ``thresholds`` must be sorted ascending.  Classification is
    inclusive, identical to :func:`classify`.
    """
    thresholds = list(thresholds)
    if any(t2 < t1 for t1, t2 in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise ValueError("thresholds must lie in [0, 1]")

    material = list(pairs) if not isinstance(pairs, (list, np.ndarray)) else pairs
    if isinstance(material, np.ndarray):
        sims = material[:, 0].astype(np.float64)
        truth = material[:, 1].astype(bool)
    else:
        sims = np.array([s for s, _ in material], dtype=np.float64)
        truth = np.array([t for _, t in material], dtype=bool)

    order = np.argsort(sims, kind="stable")
    sims_sorted = sims[order]
    truth_sorted = truth[order]
    # Suffix sums: number of pairs / true pairs with similarity >= t.
    true_suffix = np.concatenate(
        [np.cumsum(truth_sorted[::-1])[::-1], [0]]
    )
    total_true = int(truth.sum())

    rows: list[SweepRow] = []
    for t in thresholds:
        cut = int(np.searchsorted(sims_sorted, t, side="left"))
        predicted = len(sims_sorted) - cut
        tp = int(true_suffix[cut])
        fp = predicted - tp
        fn = total_true - tp
        cm = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=0)
        m = compute_metrics(cm)
        rows.append(SweepRow(t, m.precision, m.recall, m.f1))
    return rows
