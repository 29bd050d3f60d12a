"""
Permutation feature importance and top-k ablation for a calibrated ensemble.

A group is either one feature column or all columns of one channel. The
importance of a group is the ensemble's AUC-ROC on the evaluation split
minus its AUC after shuffling the group's rows (jointly, with the group's
own seeded substream). Ablation replaces the top-k groups with their
training mean, which is 0 in normalized feature space, and rescores.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Tuple
import logging

import numpy as np

from turbinewatch import rng
from turbinewatch.ensemble import EnsembleScorer
from turbinewatch.features import FeatureMatrix
from turbinewatch.synth import channel_family


class ImportanceUnit(Enum):
    column = "column"
    channel = "channel"


def feature_groups(fm: FeatureMatrix, unit: ImportanceUnit) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = {}
    for position, column in enumerate(fm.columns):
        key = column.name if unit == ImportanceUnit.column else column.channel
        groups.setdefault(key, []).append(position)
    return groups


def permute_group(fm: FeatureMatrix, positions: List[int], g: np.random.Generator) -> FeatureMatrix:
    rows = fm.rows.copy()
    order = g.permutation(len(fm))
    rows[:, positions] = fm.rows[order][:, positions]
    return fm.with_rows(rows)


def permutation_importance(
    scorer: EnsembleScorer,
    fm: FeatureMatrix,
    labels: np.ndarray,
    seed: int,
    unit: ImportanceUnit = ImportanceUnit.column,
    jobs: int = 1,
) -> Dict[str, float]:
    """Baseline AUC minus permuted AUC for every group, in column order."""
    baseline = scorer.auc(fm, labels)
    groups = list(feature_groups(fm, unit).items())

    def delta(item: Tuple[int, Tuple[str, List[int]]]) -> float:
        index, (_, positions) = item
        g = rng.substream(seed, rng.PERMUTATION, index)
        return baseline - scorer.auc(permute_group(fm, positions, g), labels)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        deltas = list(pool.map(delta, enumerate(groups)))

    logging.info(f"importance unit={unit.value} groups={len(groups)} baseline_auc={baseline:.6f}")
    return {name: float(d) for (name, _), d in zip(groups, deltas)}


def top_k(importance: Mapping[str, float], k: int) -> List[str]:
    """Highest importance first; equal values keep column order."""
    ranked = sorted(importance.items(), key=lambda item: -item[1])
    return [name for name, _ in ranked[:k]]


def group_shares(importance: Mapping[str, float], unit: ImportanceUnit) -> Dict[str, float]:
    """
    Positive importance summed per channel family (temp, vib, power, ...)
    and normalized to 1. All zero when nothing has positive importance.
    """
    totals: Dict[str, float] = {}
    for name, value in importance.items():
        channel = name.rpartition(":")[0] if unit == ImportanceUnit.column else name
        family = channel_family(channel)
        totals[family] = totals.get(family, 0.0) + max(value, 0.0)

    total = sum(totals.values())
    if total == 0:
        logging.warning("no feature group has positive importance")
        return {family: 0.0 for family in sorted(totals)}
    return {family: totals[family] / total for family in sorted(totals)}


@dataclass
class AblationResult:
    removed: List[str]
    baseline_auc: float
    ablated_auc: float

    @property
    def drop(self) -> float:
        return self.baseline_auc - self.ablated_auc

    def to_dict(self) -> dict:
        return {
            "removed": self.removed,
            "baseline_auc": self.baseline_auc,
            "ablated_auc": self.ablated_auc,
            "drop": self.drop,
        }


def ablate(
    scorer: EnsembleScorer,
    fm: FeatureMatrix,
    labels: np.ndarray,
    groups: List[str],
    unit: ImportanceUnit = ImportanceUnit.column,
) -> AblationResult:
    positions = [p for name, ps in feature_groups(fm, unit).items() if name in groups for p in ps]
    rows = fm.rows.copy()
    rows[:, positions] = 0.0
    return AblationResult(
        removed=list(groups),
        baseline_auc=scorer.auc(fm, labels),
        ablated_auc=scorer.auc(fm.with_rows(rows), labels),
    )
