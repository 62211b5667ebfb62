"""Evaluation protocol: confusion metrics, ROC/AUC, EER, detection cost,
and category-weighted accuracy.

Rate conventions (positive class = real unless flipped): at threshold t,
``FPR(t)`` is the fraction of fakes scoring >= t (falsely accepted as real)
and ``FNR(t)`` the fraction of reals scoring < t (falsely rejected).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import Category, DecisionPolicy, Label
from .errors import IngestionError, InvalidInputError

SCORED_SET_HEADER = ("id", "score", "label")


@dataclass(frozen=True)
class ScoredSet:
    """Labeled scores: ids, score array in [0, 1], labels as real=1 / fake=0."""

    ids: tuple[str, ...]
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if len(self.ids) == 0:
            raise InvalidInputError("scored set is empty")
        if not (len(self.ids) == len(self.scores) == len(self.labels)):
            raise InvalidInputError("ids, scores, and labels must align")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores contain non-finite values")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise InvalidInputError("scores must lie in [0, 1]")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise InvalidInputError("labels must encode real=1, fake=0")

    @classmethod
    def from_entries(cls, entries: Sequence[tuple[str, float, Label]]) -> "ScoredSet":
        if not entries:
            raise InvalidInputError("scored set is empty")
        ids = tuple(e[0] for e in entries)
        scores = np.asarray([e[1] for e in entries], dtype=np.float64)
        labels = np.asarray([e[2].to_int() for e in entries], dtype=np.int64)
        return cls(ids, scores, labels)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def real_scores(self) -> np.ndarray:
        return self.scores[self.labels == 1]

    @property
    def fake_scores(self) -> np.ndarray:
        return self.scores[self.labels == 0]

    def require_both_classes(self) -> None:
        if len(self.real_scores) == 0 or len(self.fake_scores) == 0:
            raise InvalidInputError("metric requires both real and fake samples")


def load_scored_set(path: "str | Path") -> ScoredSet:
    """Read a labeled score CSV with header ``id,score,label``."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"score file not found: {path}")
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCORED_SET_HEADER:
            raise IngestionError(f"{path}: expected header {','.join(SCORED_SET_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise IngestionError(f"{path} row {row_no}: expected 3 fields")
            try:
                entries.append((row[0], float(row[1]), Label.parse(row[2])))
            except (ValueError, InvalidInputError) as exc:
                raise IngestionError(f"{path} row {row_no}: {exc}") from None
    if not entries:
        raise IngestionError(f"empty score file: {path}")
    return ScoredSet.from_entries(entries)


def save_scored_set(sset: ScoredSet, path: "str | Path") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORED_SET_HEADER)
        for sid, score, label in zip(sset.ids, sset.scores, sset.labels):
            writer.writerow([sid, f"{score:.10g}", Label.from_int(int(label)).value])
    os.replace(tmp, path)


@dataclass(frozen=True)
class CategoryStat:
    """One category's sample count and accuracy."""

    category: "Category | str"
    n: int
    accuracy: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidInputError(f"category count must be >= 1, got {self.n}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidInputError(f"accuracy must lie in [0, 1], got {self.accuracy}")


@dataclass(frozen=True)
class MetricReport:
    """Flat metric record; ratios that are undefined stay None, never 0."""

    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    auc: Optional[float] = None
    eer: Optional[float] = None
    dcf: Optional[float] = None

    def to_record(self) -> dict:
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "eer": self.eer,
            "dcf": self.dcf,
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }

    def format_lines(self) -> list[str]:
        lines = []
        for key, value in self.to_record().items():
            if value is None:
                lines.append(f"{key}=undefined")
            elif isinstance(value, float):
                lines.append(f"{key}={value:.6f}")
            else:
                lines.append(f"{key}={value}")
        return lines


def _confusion(
    scores: np.ndarray, labels: np.ndarray, threshold: float, positive: Label
) -> tuple[int, int, int, int]:
    pred_real = scores >= threshold
    actual_real = labels == 1
    if positive is Label.REAL:
        pred_pos, actual_pos = pred_real, actual_real
    else:
        pred_pos, actual_pos = ~pred_real, ~actual_real
    tp = int(np.sum(pred_pos & actual_pos))
    fp = int(np.sum(pred_pos & ~actual_pos))
    fn = int(np.sum(~pred_pos & actual_pos))
    tn = int(np.sum(~pred_pos & ~actual_pos))
    return tp, fp, tn, fn


def threshold_metrics(
    sset: ScoredSet,
    policy: DecisionPolicy,
    positive: Label = Label.REAL,
) -> MetricReport:
    """Confusion-derived metrics at the policy threshold (ties count as real)."""
    tp, fp, tn, fn = _confusion(sset.scores, sset.labels, policy.threshold, positive)
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = None
    return MetricReport(
        threshold=policy.threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def roc_auc(sset: ScoredSet) -> float:
    """Probability a random real outscores a random fake, ties counted 1/2."""
    sset.require_both_classes()
    ranks = rankdata(sset.scores)  # average ranks on ties
    n_real = int(np.sum(sset.labels == 1))
    n_fake = len(sset) - n_real
    real_rank_sum = float(ranks[sset.labels == 1].sum())
    return (real_rank_sum - n_real * (n_real + 1) / 2.0) / (n_real * n_fake)


def operating_points(sset: ScoredSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct sweep thresholds with their (FPR, FNR); ascending thresholds.

    The candidate set is every distinct score plus one sentinel above the
    maximum, which covers every achievable operating point.
    """
    sset.require_both_classes()
    thresholds = np.unique(sset.scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    fakes = np.sort(sset.fake_scores)
    reals = np.sort(sset.real_scores)
    fpr = (len(fakes) - np.searchsorted(fakes, thresholds, side="left")) / len(fakes)
    fnr = np.searchsorted(reals, thresholds, side="left") / len(reals)
    return thresholds, fpr, fnr


def eer(sset: ScoredSet) -> float:
    """Equal error rate: FPR = FNR along the sweep, linearly interpolating
    between the adjacent operating points where FNR - FPR changes sign."""
    _, fpr, fnr = operating_points(sset)
    diff = fnr - fpr
    # diff starts at -1 (lowest threshold) and ends at +1 (sentinel), so a
    # sign change always exists.
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0:
        return float(fpr[idx])
    t = -diff[idx - 1] / (diff[idx] - diff[idx - 1])
    return float(fpr[idx - 1] + t * (fpr[idx] - fpr[idx - 1]))


def detection_cost(
    fnr: "float | np.ndarray",
    fpr: "float | np.ndarray",
    c_miss: float = 1.0,
    c_fa: float = 1.0,
    p_target: float = 0.5,
) -> "float | np.ndarray":
    """Normalized detection cost of an operating point (target class = real)."""
    if c_miss <= 0 or c_fa <= 0:
        raise InvalidInputError("detection costs must be positive")
    if not 0.0 < p_target < 1.0:
        raise InvalidInputError("p_target must lie strictly inside (0, 1)")
    raw = c_miss * p_target * fnr + c_fa * (1.0 - p_target) * fpr
    return raw / min(c_miss * p_target, c_fa * (1.0 - p_target))


def min_dcf(
    sset: ScoredSet,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
    p_target: float = 0.5,
) -> float:
    """Minimum normalized detection cost over all sweep thresholds."""
    _, fpr, fnr = operating_points(sset)
    costs = detection_cost(fnr, fpr, c_miss, c_fa, p_target)
    return float(np.min(costs))


def weighted_accuracy(stats: Sequence[CategoryStat]) -> float:
    """Category-size-weighted mean accuracy: sum(n_i * a_i) / sum(n_i)."""
    if not stats:
        raise InvalidInputError("no category statistics given")
    total = sum(s.n for s in stats)
    return sum(s.n * s.accuracy for s in stats) / total


def full_report(
    sset: ScoredSet,
    policy: DecisionPolicy,
    positive: Label = Label.REAL,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
    p_target: float = 0.5,
) -> MetricReport:
    """Confusion metrics at the threshold plus AUC, EER, and min DCF."""
    base = threshold_metrics(sset, policy, positive)
    return MetricReport(
        threshold=base.threshold,
        tp=base.tp,
        fp=base.fp,
        tn=base.tn,
        fn=base.fn,
        accuracy=base.accuracy,
        precision=base.precision,
        recall=base.recall,
        f1=base.f1,
        auc=roc_auc(sset),
        eer=eer(sset),
        dcf=min_dcf(sset, c_miss, c_fa, p_target),
    )


def threshold_sweep(
    sset: ScoredSet,
    thresholds: Optional[Sequence[float]] = None,
    positive: Label = Label.REAL,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
    p_target: float = 0.5,
) -> list[dict]:
    """Per-threshold confusion counts, accuracy, rates, and detection cost."""
    if thresholds is None:
        thresholds = np.round(np.arange(0.05, 0.951, 0.05), 10)
    n_real = len(sset.real_scores)
    n_fake = len(sset.fake_scores)
    rows = []
    for tau in thresholds:
        tp, fp, tn, fn = _confusion(sset.scores, sset.labels, float(tau), positive)
        total = tp + fp + tn + fn
        pred_real = sset.scores >= tau
        fpr = float(np.sum(pred_real & (sset.labels == 0))) / n_fake if n_fake else math.nan
        fnr = float(np.sum(~pred_real & (sset.labels == 1))) / n_real if n_real else math.nan
        rows.append(
            {
                "threshold": float(tau),
                "tp": tp,
                "fp": fp,
                "tn": tn,
                "fn": fn,
                "accuracy": (tp + tn) / total,
                "fpr": fpr,
                "fnr": fnr,
                "dcf": float(detection_cost(fnr, fpr, c_miss, c_fa, p_target)),
            }
        )
    return rows
