from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
from sklearn import metrics as skm

from turbinewatch.dataset import FaultEvent
from turbinewatch.exceptions import UndefinedMetricException, UsageException

DEFAULT_LEAD_WINDOWS_HOURS = (24.0, 48.0, 72.0, 96.0)
DEFAULT_HORIZON_HOURS = 168.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class ThresholdMetrics(NamedTuple):
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    degenerate: bool


def _as_pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageException(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def threshold_metrics(flags: Sequence[bool], labels: Sequence[bool]) -> ThresholdMetrics:
    """
    Point-wise precision, recall and F1. No predicted positives gives
    precision 0 and marks the result degenerate.
    """
    flags, labels = _as_pair(flags, labels)
    flags, labels = flags.astype(bool), labels.astype(bool)

    counts = ConfusionCounts(
        tp=int(np.sum(flags & labels)),
        fp=int(np.sum(flags & ~labels)),
        fn=int(np.sum(~flags & labels)),
        tn=int(np.sum(~flags & ~labels)),
    )

    degenerate = counts.tp + counts.fp == 0
    precision = 0.0 if degenerate else counts.tp / (counts.tp + counts.fp)
    positives = counts.tp + counts.fn
    recall = counts.tp / positives if positives else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ThresholdMetrics(counts, precision, recall, f1, degenerate)


def _check_classes(labels: np.ndarray, need_negative: bool = True):
    positives = int(np.sum(labels))
    if positives == 0:
        raise UndefinedMetricException("metric needs at least one positive label")
    if need_negative and positives == len(labels):
        raise UndefinedMetricException("metric needs at least one negative label")


def precision_at_fraction(scores, labels, fraction: float = 0.1) -> float:
    """Share of anomalies among the top `fraction` highest scored points."""
    scores, labels = _as_pair(scores, labels)
    if not 0 < fraction <= 1:
        raise UsageException(f"fraction must be in (0, 1], got {fraction}")
    if len(scores) == 0:
        raise UndefinedMetricException("no scores")

    k = max(1, math.ceil(fraction * len(scores)))
    top = np.argsort(-scores, kind="stable")[:k]
    return float(np.mean(labels[top].astype(bool)))


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve; tied scores count one half."""
    scores, labels = _as_pair(scores, labels)
    labels = labels.astype(bool)
    _check_classes(labels)
    return float(skm.roc_auc_score(labels, scores))


def auc_pr(scores, labels) -> float:
    """Average precision over descending score thresholds, ties grouped."""
    scores, labels = _as_pair(scores, labels)
    labels = labels.astype(bool)
    _check_classes(labels, need_negative=False)
    return float(skm.average_precision_score(labels, scores))


def roc_points(scores, labels) -> pd.DataFrame:
    scores, labels = _as_pair(scores, labels)
    labels = labels.astype(bool)
    _check_classes(labels)
    fpr, tpr, thresholds = skm.roc_curve(labels, scores)
    return pd.DataFrame({"fpr": fpr, "tpr": tpr, "threshold": thresholds})


def pr_points(scores, labels) -> pd.DataFrame:
    scores, labels = _as_pair(scores, labels)
    labels = labels.astype(bool)
    _check_classes(labels, need_negative=False)
    precision, recall, thresholds = skm.precision_recall_curve(labels, scores)
    # the final (recall 0, precision 1) point has no threshold
    thresholds = np.append(thresholds, np.nan)
    return pd.DataFrame({"recall": recall, "precision": precision, "threshold": thresholds})


def runs(flags: Sequence[bool]) -> List[Tuple[int, int]]:
    """Maximal [start, end) runs of consecutive true flags."""
    flags = np.asarray(flags, dtype=bool)
    edges = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    return list(zip(starts.tolist(), ends.tolist()))


class RangeMetrics(NamedTuple):
    event_recall: float
    event_precision: float
    degenerate: bool


def range_wise_eval(flags: Sequence[bool], events: Sequence[FaultEvent]) -> RangeMetrics:
    flags = np.asarray(flags, dtype=bool)

    detected = sum(1 for e in events if flags[e.start_index : e.end_index].any())
    event_recall = detected / len(events) if events else 0.0

    segments = runs(flags)
    if not segments:
        return RangeMetrics(event_recall, 0.0, True)

    overlapping = sum(
        1
        for lo, hi in segments
        if any(lo < e.end_index and e.start_index < hi for e in events)
    )
    return RangeMetrics(event_recall, overlapping / len(segments), not events)


def early_detection(
    flags: Sequence[bool],
    events: Sequence[FaultEvent],
    lead_windows_hours: Sequence[float] = DEFAULT_LEAD_WINDOWS_HOURS,
    step_seconds: float = 600.0,
    horizon_hours: float = DEFAULT_HORIZON_HOURS,
) -> Dict[float, float]:
    """
    Share of events whose first flag inside the horizon before the event
    start leads the start by at least W hours, for every W.
    """
    if not events:
        raise UndefinedMetricException("early detection needs at least one event")

    flags = np.asarray(flags, dtype=bool)
    horizon = int(round(horizon_hours * 3600.0 / step_seconds))

    leads = []
    for event in events:
        lo = event.start_index - horizon
        if lo < 0:
            logging.warning(
                f"event={event.fault_id} horizon clipped from {horizon} to "
                f"{event.start_index} samples"
            )
            lo = 0

        hits = np.nonzero(flags[lo : event.start_index])[0]
        if len(hits) == 0:
            leads.append(-math.inf)
        else:
            leads.append((event.start_index - (lo + hits[0])) * step_seconds / 3600.0)

    leads = np.array(leads)
    return {float(w): float(np.mean(leads >= w)) for w in lead_windows_hours}


@dataclass(frozen=True)
class ScoreStats:
    mean_normal: float
    std_normal: float
    mean_anomalous: float
    std_anomalous: float
    overlap: float


def score_distribution_stats(scores, labels) -> ScoreStats:
    """
    Class conditional means and stds; `overlap` is the share of anomalous
    scores below the 99th percentile of normal scores.
    """
    scores, labels = _as_pair(scores, labels)
    labels = labels.astype(bool)
    _check_classes(labels)

    normal, anomalous = scores[~labels], scores[labels]
    cutoff = np.percentile(normal, 99)
    return ScoreStats(
        mean_normal=float(normal.mean()),
        std_normal=float(normal.std()),
        mean_anomalous=float(anomalous.mean()),
        std_anomalous=float(anomalous.std()),
        overlap=float(np.mean(anomalous < cutoff)),
    )


def expand_to_samples(values: np.ndarray, row_index: np.ndarray, n: int, fill=False) -> np.ndarray:
    """Per feature row values placed at their sample positions in a length n series."""
    values = np.asarray(values)
    out = np.full(n, fill, dtype=values.dtype)
    out[row_index] = values
    return out


@dataclass
class ModelMetrics:
    precision: float
    recall: float
    f1: float
    auc_roc: float
    auc_pr: float
    precision_at_10: float
    degenerate: bool = False


def model_metrics(scores: np.ndarray, flags: np.ndarray, labels: np.ndarray) -> ModelMetrics:
    t = threshold_metrics(flags, labels)
    return ModelMetrics(
        precision=t.precision,
        recall=t.recall,
        f1=t.f1,
        auc_roc=auc_roc(scores, labels),
        auc_pr=auc_pr(scores, labels),
        precision_at_10=precision_at_fraction(scores, labels, 0.1),
        degenerate=t.degenerate,
    )


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    auc_roc: float
    auc_pr: float
    precision_at_10: float
    counts: ConfusionCounts
    event_recall: float
    event_precision: float
    early_detection: Dict[float, float]
    score_stats: ScoreStats
    models: Dict[str, ModelMetrics] = field(default_factory=dict)
    feature_importance: Dict[str, float] = field(default_factory=dict)
    group_shares: Dict[str, float] = field(default_factory=dict)
    ablation: Optional[Dict[str, float]] = None
    degenerate: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["early_detection"] = {
            f"{w:g}h": rate for w, rate in sorted(self.early_detection.items())
        }
        return data
