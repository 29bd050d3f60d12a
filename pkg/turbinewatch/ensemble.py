"""
Score fusion and thresholding.

Raw detector scores live on different scales, so each model's scores are
min-max scaled with the range seen on validation data before the weighted
sum. The weights are either fixed, equal, or learned by grid search over the
simplex maximizing validation AUC-ROC. The decision threshold is a
percentile of the fused validation scores.
"""
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from turbinewatch.checkpoint import Checkpoint
from turbinewatch.exceptions import (
    CalibrationException,
    ConfigurationException,
    StateException,
    UsageException,
)
from turbinewatch.features import FeatureMatrix
from turbinewatch.metrics import auc_roc
from turbinewatch.models import ModelKind
from turbinewatch.training import score_series

MODEL_ORDER = (ModelKind.VAE, ModelKind.LSTM, ModelKind.TRANSFORMER)
GRID_STEP = 0.05
DEFAULT_PERCENTILE = 97.0
AUC_TOLERANCE = 1e-12

Weights = Tuple[float, float, float]


class WeightMode(Enum):
    learned = "learned"
    equal = "equal"
    fixed = "fixed"


@dataclass
class ScoreNormalizer:
    minimum: Dict[str, float] = field(default_factory=dict)
    maximum: Dict[str, float] = field(default_factory=dict)

    @staticmethod
    def fit(scores: Mapping[str, np.ndarray]) -> "ScoreNormalizer":
        norm = ScoreNormalizer()
        for model_id, values in scores.items():
            lo, hi = float(np.min(values)), float(np.max(values))
            if not hi > lo:
                raise CalibrationException(
                    f"{model_id} validation scores are constant ({lo}), cannot scale them"
                )
            norm.minimum[model_id] = lo
            norm.maximum[model_id] = hi
        return norm

    def to_dict(self) -> dict:
        return {
            model_id: {"min": self.minimum[model_id], "max": self.maximum[model_id]}
            for model_id in self.minimum
        }

    @staticmethod
    def from_dict(data: Mapping[str, Mapping[str, float]]) -> "ScoreNormalizer":
        norm = ScoreNormalizer(
            minimum={k: float(v["min"]) for k, v in data.items()},
            maximum={k: float(v["max"]) for k, v in data.items()},
        )
        for model_id in norm.minimum:
            if not norm.maximum[model_id] > norm.minimum[model_id]:
                raise ConfigurationException(f"{model_id}: score range max must exceed min")
        return norm


def normalize_scores(raw: np.ndarray, model_id: str, norm: ScoreNormalizer) -> np.ndarray:
    if model_id not in norm.minimum:
        raise StateException(f"score normalizer was not fitted for {model_id}")

    lo, hi = norm.minimum[model_id], norm.maximum[model_id]
    return np.clip((np.asarray(raw, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def validate_weights(w: Sequence[float]) -> Weights:
    if len(w) != 3:
        raise ConfigurationException(f"need 3 fusion weights, got {len(w)}")
    if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise ConfigurationException(f"fusion weights must be >= 0 and sum to 1, got {list(w)}")
    return (float(w[0]), float(w[1]), float(w[2]))


def fuse(sv: np.ndarray, sl: np.ndarray, st: np.ndarray, w: Sequence[float]) -> np.ndarray:
    w = validate_weights(w)
    sv, sl, st = (np.asarray(s, dtype=np.float64) for s in (sv, sl, st))
    if not sv.shape == sl.shape == st.shape:
        raise UsageException(f"score series lengths differ: {len(sv)}, {len(sl)}, {len(st)}")
    return w[0] * sv + w[1] * sl + w[2] * st


def weight_grid(step: float = GRID_STEP) -> List[Weights]:
    """Simplex points with coordinates on a `step` grid, plus the centroid, in lexicographic order."""
    k = int(round(1 / step))
    grid = {
        (i / k, j / k, (k - i - j) / k)
        for i, j in product(range(k + 1), repeat=2)
        if i + j <= k
    }
    grid.add((1 / 3, 1 / 3, 1 / 3))
    return sorted(grid)


def entropy(w: Sequence[float]) -> float:
    return -sum(x * math.log(x) for x in w if x > 0)


def learn_weights(val_scores: Sequence[np.ndarray], labels: np.ndarray) -> Weights:
    """
    Grid search for the weights maximizing validation AUC-ROC of the fused
    series. Ties go to the higher weight entropy, then to the lexicographically
    smallest weights.
    """
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise CalibrationException(
            "validation labels hold a single class; inject synthetic anomalies "
            "into the validation split or use equal weights"
        )

    sv, sl, st = val_scores
    best: Optional[Weights] = None
    best_auc, best_entropy = -math.inf, -math.inf
    for w in weight_grid():
        auc = auc_roc(fuse(sv, sl, st, w), labels)
        h = entropy(w)
        if auc > best_auc + AUC_TOLERANCE or (
            abs(auc - best_auc) <= AUC_TOLERANCE and h > best_entropy + 1e-12
        ):
            best, best_auc, best_entropy = w, auc, h

    logging.info(f"weights={best} val_auc={best_auc:.6f}")
    return best  # type: ignore


def percentile_threshold(scores: np.ndarray, p: float) -> float:
    """Linear interpolation percentile, p in [90, 99.9]."""
    if not 90 <= p <= 99.9:
        raise ConfigurationException(f"percentile must be in [90, 99.9], got {p}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise UsageException("cannot take a percentile of no scores")
    return float(np.percentile(scores, p))


def flag(scores: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64) > tau


@dataclass
class EnsembleConfig:
    weights: Weights
    percentile: float
    threshold: float
    normalizer: ScoreNormalizer
    weight_mode: WeightMode = WeightMode.learned

    def validate(self):
        validate_weights(self.weights)
        if not 90 <= self.percentile <= 99.9:
            raise ConfigurationException(f"percentile must be in [90, 99.9], got {self.percentile}")

    def to_dict(self) -> dict:
        return {
            "weights": {kind.value: w for kind, w in zip(MODEL_ORDER, self.weights)},
            "weight_mode": self.weight_mode.value,
            "percentile": self.percentile,
            "threshold": self.threshold,
            "score_ranges": self.normalizer.to_dict(),
        }

    @staticmethod
    def from_dict(data: Mapping) -> "EnsembleConfig":
        try:
            config = EnsembleConfig(
                weights=validate_weights([data["weights"][k.value] for k in MODEL_ORDER]),
                percentile=float(data["percentile"]),
                threshold=float(data["threshold"]),
                normalizer=ScoreNormalizer.from_dict(data["score_ranges"]),
                weight_mode=WeightMode(data.get("weight_mode", "learned")),
            )
        except (KeyError, ValueError) as e:
            raise ConfigurationException(f"invalid ensemble file: {e}")
        config.validate()
        return config


def calibrate(
    val_scores: Mapping[ModelKind, np.ndarray],
    labels: Optional[np.ndarray],
    percentile: float = DEFAULT_PERCENTILE,
    mode: WeightMode = WeightMode.learned,
    fixed_weights: Optional[Sequence[float]] = None,
    fallback_to_equal: bool = True,
) -> EnsembleConfig:
    """
    Fits score ranges, picks weights and sets the threshold, all on the
    validation split. With single class labels learned weights fall back to
    equal weights (with a warning) unless `fallback_to_equal` is off.
    """
    norm = ScoreNormalizer.fit({k.value: val_scores[k] for k in MODEL_ORDER})
    normalized = [normalize_scores(val_scores[k], k.value, norm) for k in MODEL_ORDER]

    if mode == WeightMode.fixed:
        if fixed_weights is None:
            raise ConfigurationException("fixed weight mode needs weights")
        weights = validate_weights(fixed_weights)
    elif mode == WeightMode.equal:
        weights = (1 / 3, 1 / 3, 1 / 3)
    else:
        try:
            weights = learn_weights(normalized, labels if labels is not None else np.zeros(0))
        except CalibrationException:
            if not fallback_to_equal:
                raise
            logging.warning("single class validation labels, falling back to equal weights")
            weights, mode = (1 / 3, 1 / 3, 1 / 3), WeightMode.equal

    fused = fuse(*normalized, weights)
    config = EnsembleConfig(
        weights=weights,
        percentile=percentile,
        threshold=percentile_threshold(fused, percentile),
        normalizer=norm,
        weight_mode=mode,
    )
    config.validate()
    return config


@dataclass
class EnsembleScores:
    raw: Dict[ModelKind, np.ndarray]
    normalized: Dict[ModelKind, np.ndarray]
    fused: np.ndarray
    flags: np.ndarray


class EnsembleScorer:
    def __init__(self, checkpoints: Mapping[ModelKind, Checkpoint], config: EnsembleConfig):
        missing = [k.value for k in MODEL_ORDER if k not in checkpoints]
        if missing:
            raise StateException(f"ensemble is missing checkpoints for {missing}")
        self.checkpoints = dict(checkpoints)
        self.config = config

    def raw_scores(self, fm: FeatureMatrix) -> Dict[ModelKind, np.ndarray]:
        return {k: score_series(self.checkpoints[k], fm) for k in MODEL_ORDER}

    def combine(self, raw: Mapping[ModelKind, np.ndarray]) -> EnsembleScores:
        normalized = {
            k: normalize_scores(raw[k], k.value, self.config.normalizer) for k in MODEL_ORDER
        }
        fused = fuse(*[normalized[k] for k in MODEL_ORDER], self.config.weights)
        return EnsembleScores(dict(raw), normalized, fused, flag(fused, self.config.threshold))

    def score(self, fm: FeatureMatrix) -> EnsembleScores:
        return self.combine(self.raw_scores(fm))

    def auc(self, fm: FeatureMatrix, labels: np.ndarray) -> float:
        return auc_roc(self.score(fm).fused, labels)
