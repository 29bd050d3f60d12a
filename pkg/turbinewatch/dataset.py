from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import math

import numpy as np
import pandas as pd

from turbinewatch.exceptions import ConfigurationException, DataException

# 24 hours at the standard 10 minute SCADA cadence.
DEFAULT_GUARD_MARGIN = 144


@dataclass(frozen=True)
class FaultEvent:
    """
    A labeled fault, [start_index, end_index) in the sample index space
    of the dataset that owns it.
    """

    start_index: int
    end_index: int
    fault_id: str

    def __post_init__(self):
        if not 0 <= self.start_index < self.end_index:
            raise DataException(
                f"event {self.fault_id}: invalid range [{self.start_index}, {self.end_index})"
            )

    def __len__(self) -> int:
        return self.end_index - self.start_index

    def contains(self, index: int) -> bool:
        return self.start_index <= index < self.end_index


@dataclass
class TimeSeriesDataset:
    """
    A uniformly sampled n x d sensor matrix.

    `index` holds the sample position of every row. It is `arange(n)` for
    anything read from disk or generated; the train split keeps the
    positions of the rows that survived event removal so the gaps stay
    visible to featurization. Missing values are NaN.
    """

    start_time: pd.Timestamp
    step: float
    values: np.ndarray
    channel_names: List[str]
    events: List[FaultEvent] = field(default_factory=list)
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataException(f"values must be a matrix, got {self.values.ndim} dims")

        n, d = self.values.shape
        if n < 1 or d < 1:
            raise DataException(f"dataset must be at least 1x1, got {n}x{d}")

        if len(self.channel_names) != d:
            raise DataException(
                f"{len(self.channel_names)} channel names for {d} channels"
            )

        if len(set(self.channel_names)) != d:
            raise DataException("channel names must be unique")

        if self.step <= 0:
            raise DataException(f"step must be positive, got {self.step}")

        if self.index is None:
            self.index = np.arange(n)
        else:
            self.index = np.asarray(self.index, dtype=np.int64)
            if len(self.index) != n or np.any(np.diff(self.index) <= 0):
                raise DataException("index must be strictly increasing, one per row")

        self.events = sorted(self.events, key=lambda e: e.start_index)
        span = self.span
        previous_end = 0
        for event in self.events:
            if event.end_index > span:
                raise DataException(
                    f"event {event.fault_id} ends at {event.end_index}, past {span}"
                )
            if event.start_index < previous_end:
                raise DataException(f"event {event.fault_id} overlaps its predecessor")
            previous_end = event.end_index

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def span(self) -> int:
        """Number of sample positions covered, gaps included."""
        return int(self.index[-1]) + 1

    def is_contiguous(self) -> bool:
        return self.span == self.n

    def timestamps(self) -> pd.DatetimeIndex:
        offsets = pd.to_timedelta(self.index * self.step, unit="s")
        return pd.DatetimeIndex(self.start_time + offsets)

    def labels(self) -> np.ndarray:
        """Per row anomaly flags, true inside any event."""
        return event_mask(self.events, self.index)

    def slice(self, start: int, end: int) -> "TimeSeriesDataset":
        """
        Rows with sample positions in [start, end) of a contiguous dataset,
        events relabeled to the slice origin.
        """
        if not self.is_contiguous():
            raise DataException("can only slice a contiguous dataset")

        return TimeSeriesDataset(
            start_time=self.start_time + pd.Timedelta(seconds=start * self.step),
            step=self.step,
            values=self.values[start:end].copy(),
            channel_names=list(self.channel_names),
            events=relabel_events_to_split(self, (start, end)),
        )


def event_mask(events: List[FaultEvent], index: np.ndarray) -> np.ndarray:
    mask = np.zeros(len(index), dtype=bool)
    for event in events:
        mask |= (index >= event.start_index) & (index < event.end_index)
    return mask


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15
    guard_margin: int = DEFAULT_GUARD_MARGIN

    def validate(self):
        fractions = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fractions):
            raise ConfigurationException(f"split fractions must be positive: {fractions}")

        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigurationException(
                f"split fractions must sum to 1, got {sum(fractions)}"
            )

        if self.guard_margin < 0:
            raise ConfigurationException("guard_margin must be >= 0")

    def bounds(self, n: int) -> List[Tuple[int, int]]:
        """Index ranges of train, val and test before event removal."""
        n_train = math.floor(n * self.train_frac + 1e-9)
        n_val = math.floor(n * self.val_frac + 1e-9)
        return [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)]


def relabel_events_to_split(
    ds: TimeSeriesDataset, split_bounds: Tuple[int, int]
) -> List[FaultEvent]:
    """
    Clips events to [lo, hi) and shifts them to the split origin.
    Events entirely outside the split are dropped.
    """
    lo, hi = split_bounds
    relabeled = []
    for event in ds.events:
        start = max(event.start_index, lo)
        end = min(event.end_index, hi)
        if start < end:
            relabeled.append(FaultEvent(start - lo, end - lo, event.fault_id))

    return relabeled


def split_chronological(
    ds: TimeSeriesDataset, spec: SplitSpec
) -> Tuple[TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset]:
    """
    Contiguous train -> val -> test split.

    The train split only keeps normal data: every sample inside an event,
    widened by spec.guard_margin on both sides, is dropped. Val and test keep
    their events, relabeled to their own origin.
    """
    spec.validate()

    if ds.n < 10:
        raise DataException(f"need at least 10 samples to split, got {ds.n}")

    if not ds.is_contiguous():
        raise DataException("can only split a contiguous dataset")

    (train_lo, train_hi), val_bounds, test_bounds = spec.bounds(ds.n)

    keep = np.ones(train_hi - train_lo, dtype=bool)
    for event in ds.events:
        lo = max(event.start_index - spec.guard_margin, train_lo)
        hi = min(event.end_index + spec.guard_margin, train_hi)
        if lo < hi:
            keep[lo:hi] = False

    if not keep.any():
        raise DataException("train split is empty after removing fault events")

    for name, (lo, hi) in [("val", val_bounds), ("test", test_bounds)]:
        if hi <= lo:
            raise DataException(f"{name} split is empty for n={ds.n}")

    train = TimeSeriesDataset(
        start_time=ds.start_time,
        step=ds.step,
        values=ds.values[train_lo:train_hi][keep].copy(),
        channel_names=list(ds.channel_names),
        events=[],
        index=np.nonzero(keep)[0],
    )

    return train, ds.slice(*val_bounds), ds.slice(*test_bounds)
