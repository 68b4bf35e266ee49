"""
Metrics Service
Binary pass/fail evaluation of next-step predictions on the test split
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from errors import ContractError
from schemas import SubsetSpec
from services.data_pipeline import DatasetSplit, StudentMetadata, StudentSequence, window
from services.model_registry import ModelState, predict_windows

logger = logging.getLogger(__name__)

AGGREGATE_LABEL = "All"


@dataclass(frozen=True)
class ScoredPrediction:
    probability: float
    label: int
    student_id: str
    step: int
    skill_id: int


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class Ratio:
    """Metric value; degenerate is set when the denominator was zero and 0 was substituted"""
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


@dataclass
class MetricsReport:
    label: str
    n: int = 0
    confusion: ConfusionMatrix = field(default_factory=ConfusionMatrix)
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    auc: Optional[float] = None
    positives: int = 0
    negatives: int = 0
    degenerate: List[str] = field(default_factory=list)
    empty: bool = False
    aggregate: bool = False
    # test students left out of a department subset for lack of metadata
    excluded_students: int = 0

    def as_row(self) -> Dict[str, object]:
        return {
            "subset": self.label,
            "n": self.n,
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "tn": self.confusion.tn,
            "fn": self.confusion.fn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "positives": self.positives,
            "negatives": self.negatives,
            "degenerate": ";".join(self.degenerate),
            "empty": self.empty,
            "aggregate": self.aggregate,
        }


def confusion(preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> ConfusionMatrix:
    """Counts with predicted pass iff probability >= threshold"""
    if not preds:
        raise ContractError("confusion needs at least one scored prediction")
    probs = np.fromiter((p.probability for p in preds), dtype=np.float64, count=len(preds))
    labels = np.fromiter((p.label for p in preds), dtype=np.int64, count=len(preds))
    predicted = probs >= threshold
    actual = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def _ratio(num: float, den: float) -> Ratio:
    if den == 0:
        return Ratio(0.0, degenerate=True)
    return Ratio(num / den)


def accuracy(cm: ConfusionMatrix) -> Ratio:
    return _ratio(cm.tp + cm.tn, cm.total)


def precision(cm: ConfusionMatrix) -> Ratio:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> Ratio:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> Ratio:
    p, r = precision(cm).value, recall(cm).value
    return _ratio(2.0 * p * r, p + r)


def auc(preds: Sequence[ScoredPrediction]) -> Optional[float]:
    """
    Area under the ROC curve via the Mann-Whitney rank statistic

    Tied scores get averaged ranks, so a tied (pos, neg) pair counts one half.
    Returns None when only one class is present.
    """
    labels = np.fromiter((p.label for p in preds), dtype=np.int64, count=len(preds))
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        logger.warning(f"AUC undefined: {positives} positive / {negatives} negative labels")
        return None
    scores = np.fromiter((p.probability for p in preds), dtype=np.float64, count=len(preds))
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return float(u / (positives * negatives))


def report(label: str, preds: Sequence[ScoredPrediction], threshold: float = 0.5) -> MetricsReport:
    """All metrics for one subset; an empty subset gives a row marked empty"""
    if not preds:
        logger.warning(f"Subset {label} has no scored predictions")
        return MetricsReport(label=label, empty=True)
    cm = confusion(preds, threshold)
    values = {"accuracy": accuracy(cm), "precision": precision(cm), "recall": recall(cm), "f1": f1(cm)}
    positives = cm.tp + cm.fn
    result = MetricsReport(
        label=label,
        n=len(preds),
        confusion=cm,
        auc=auc(preds),
        positives=positives,
        negatives=cm.total - positives,
        degenerate=[name for name, r in values.items() if r.degenerate],
        **{name: r.value for name, r in values.items()},
    )
    if result.auc is None:
        result.degenerate.append("auc")
    return result


def score_sequences(
    state: ModelState,
    sequences: Sequence[StudentSequence],
    max_len: int,
    batch_size: int = 256,
) -> List[ScoredPrediction]:
    """Predict every test window once and keep the valid next-step targets (positions >= 1)"""
    windows = [w for seq in sequences for w in window(seq, max_len)]
    windows = [w for w in windows if w.usable]
    scored: List[ScoredPrediction] = []
    for w, probs in zip(windows, predict_windows(state, windows, batch_size)):
        for pos in range(1, len(w)):
            it = w.interactions[pos]
            scored.append(
                ScoredPrediction(
                    probability=float(probs[pos]),
                    label=it.correct,
                    student_id=w.universal_id,
                    step=pos,
                    skill_id=it.skill_id,
                )
            )
    return scored


def evaluate_scored(
    scored: Sequence[ScoredPrediction],
    subsets: Sequence[SubsetSpec],
    metadata: Optional[StudentMetadata] = None,
    threshold: float = 0.5,
) -> List[MetricsReport]:
    """Group already-scored predictions by student department; aggregate row last"""
    reports = []
    unmatched = 0
    if metadata is not None and any(spec.departments is not None for spec in subsets):
        unmatched = len({p.student_id for p in scored} - set(metadata))
        if unmatched:
            logger.warning(f"Excluded {unmatched} test students without metadata from department subsets")
    for spec in subsets:
        if spec.departments is None:
            chosen = list(scored)
        else:
            if metadata is None:
                raise ContractError(f"subset {spec.label} filters by department but no metadata was given")
            wanted = set(spec.departments)
            chosen = [
                p for p in scored
                if p.student_id in metadata and metadata[p.student_id].department in wanted
            ]
        row = report(spec.label, chosen, threshold)
        row.aggregate = spec.departments is None
        if not row.aggregate:
            row.excluded_students = unmatched
        reports.append(row)
    if not any(spec.departments is None for spec in subsets):
        row = report(AGGREGATE_LABEL, list(scored), threshold)
        row.aggregate = True
        reports.append(row)
    return reports


def evaluate(
    state: ModelState,
    split: DatasetSplit,
    subsets: Sequence[SubsetSpec],
    metadata: Optional[StudentMetadata] = None,
    threshold: float = 0.5,
    max_len: int = 100,
) -> List[MetricsReport]:
    """
    Score a trained model on the test split, per department subset and overall

    Args:
        state: trained model
        split: preprocessed split; only split.test is scored
        subsets: department filters; a subset without departments selects everyone
        metadata: student -> college/department, required for department subsets
        threshold: pass threshold for the confusion counts

    Returns:
        One MetricsReport per subset followed by the aggregate
    """
    scored = score_sequences(state, split.test, max_len)
    logger.info(f"Scored {len(scored)} next-step targets from {len(split.test)} test sequences")
    return evaluate_scored(scored, subsets, metadata, threshold)
