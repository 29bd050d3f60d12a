"""
Windowed feature engineering.

For every channel and every window of w samples ending at t the feature
vector is

    raw x_t, moving mean, moving std, first and second derivative,
    skewness, kurtosis, B spectral band energies, dominant spectral bin

so a dataset with d channels gives d * (8 + B) columns. Rows only exist for
t >= w - 1 (no partial warm-up windows) and never span a gap in the
dataset's sample index.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple
import logging
import warnings

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from turbinewatch.dataset import TimeSeriesDataset
from turbinewatch.exceptions import (
    CompatibilityException,
    ConfigurationException,
    DataException,
    SizeException,
    StateException,
)

SIGMA_FLOOR = 1e-12
RESOLUTION = np.finfo(np.float64).resolution


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 16
    fft_bands: int = 4
    temporal: bool = True
    statistical: bool = True
    frequency: bool = True

    def validate(self):
        w = self.window
        if w < 2:
            raise ConfigurationException(f"window must be >= 2, got {w}")

        if self.statistical and w < 4:
            raise ConfigurationException("skewness/kurtosis need a window >= 4")

        if self.frequency:
            if w & (w - 1) != 0:
                raise ConfigurationException(
                    f"window must be a power of two for FFT features, got {w}"
                )
            if not 1 <= self.fft_bands <= w // 2:
                raise ConfigurationException(
                    f"fft_bands must be in [1, {w // 2}], got {self.fft_bands}"
                )

    def kinds(self) -> List[str]:
        kinds = ["raw"]
        if self.temporal:
            kinds += ["mean", "std", "diff1", "diff2"]
        if self.statistical:
            kinds += ["skew", "kurt"]
        if self.frequency:
            kinds += [f"band_{b + 1}" for b in range(self.fft_bands)]
            kinds += ["dominant_bin"]
        return kinds


@dataclass(frozen=True)
class Column:
    channel: str
    kind: str

    @property
    def name(self) -> str:
        return f"{self.channel}:{self.kind}"

    @staticmethod
    def parse(name: str) -> "Column":
        channel, _, kind = name.rpartition(":")
        if not channel:
            raise DataException(f"feature column {name!r} is not channel:kind")
        return Column(channel, kind)


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    row_index: np.ndarray
    columns: List[Column]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.row_index = np.asarray(self.row_index, dtype=np.int64)

        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.columns):
            raise DataException(
                f"rows {self.rows.shape} do not match {len(self.columns)} columns"
            )

        if len(self.row_index) != self.rows.shape[0]:
            raise DataException("one row_index entry per row")

        if not np.all(np.isfinite(self.rows)):
            raise DataException("feature matrix contains non-finite values")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def column_names(self) -> List[str]:
        return [c.name for c in self.columns]

    def with_rows(self, rows: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(rows, self.row_index.copy(), list(self.columns))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=self.column_names)
        frame.insert(0, "row_index", self.row_index)
        return frame

    @staticmethod
    def from_frame(frame: pd.DataFrame) -> "FeatureMatrix":
        names = [c for c in frame.columns if c != "row_index"]
        return FeatureMatrix(
            rows=frame[names].to_numpy(dtype=np.float64),
            row_index=frame["row_index"].to_numpy(dtype=np.int64),
            columns=[Column.parse(name) for name in names],
        )


def moving_average(x: np.ndarray, w: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if w < 1 or len(x) < w:
        raise SizeException(f"series of length {len(x)} is shorter than window {w}")
    return sliding_window_view(x, w).mean(axis=-1)


def moving_std(x: np.ndarray, w: int) -> np.ndarray:
    """Population form, divides by w."""
    x = np.asarray(x, dtype=np.float64)
    if w < 1 or len(x) < w:
        raise SizeException(f"series of length {len(x)} is shorter than window {w}")
    return sliding_window_view(x, w).std(axis=-1)


def derivatives(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        raise SizeException(f"need at least 3 samples for derivatives, got {len(x)}")
    return np.diff(x), np.diff(x, n=2)


class ShapeStats(NamedTuple):
    skewness: float
    kurtosis: float
    degenerate: bool


def _degenerate(windows: np.ndarray) -> np.ndarray:
    mean = windows.mean(axis=-1)
    m2 = ((windows - mean[..., None]) ** 2).mean(axis=-1)
    return m2 <= (RESOLUTION * np.abs(mean)) ** 2


def windowed_skew_kurt(x: np.ndarray, w: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Skewness and (non excess) kurtosis of every length w window, using
    population moments. Constant windows give (0, 0) and are flagged.
    """
    x = np.asarray(x, dtype=np.float64)
    if w < 4 or len(x) < w:
        raise SizeException(f"need windows of >= 4 samples within {len(x)}, got {w}")

    windows = sliding_window_view(x, w)
    degenerate = _degenerate(windows)

    # constant windows make scipy warn about precision loss; they are masked below
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        skewness = stats.skew(windows, axis=-1, bias=True)
        kurtosis = stats.kurtosis(windows, axis=-1, fisher=False, bias=True)

    skewness = np.where(degenerate, 0.0, skewness)
    kurtosis = np.where(degenerate, 0.0, kurtosis)
    return skewness, kurtosis, degenerate


def skew_kurt(window: np.ndarray) -> ShapeStats:
    window = np.asarray(window, dtype=np.float64)
    skewness, kurtosis, degenerate = windowed_skew_kurt(window, len(window))
    return ShapeStats(float(skewness[0]), float(kurtosis[0]), bool(degenerate[0]))


class SpectrumStats(NamedTuple):
    band_energy: np.ndarray
    dominant_bin: int


def _band_starts(w: int, bands: int) -> np.ndarray:
    return np.array([chunk[0] for chunk in np.array_split(np.arange(w // 2), bands)])


def _check_fft(w: int, bands: int):
    if w < 2 or w & (w - 1) != 0:
        raise ConfigurationException(f"FFT window must be a power of two, got {w}")
    if not 1 <= bands <= w // 2:
        raise ConfigurationException(f"fft_bands must be in [1, {w // 2}], got {bands}")


def windowed_fft_features(
    x: np.ndarray, w: int, bands: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Band energies (m x bands) and dominant bin (m) of the mean removed
    magnitude spectrum of every window, bins 1 .. w/2. The B bands split
    those bins into equal contiguous ranges.
    """
    _check_fft(w, bands)
    x = np.asarray(x, dtype=np.float64)
    if len(x) < w:
        raise SizeException(f"series of length {len(x)} is shorter than window {w}")

    windows = sliding_window_view(x, w)
    centered = windows - windows.mean(axis=-1, keepdims=True)
    magnitude = np.abs(np.fft.rfft(centered, axis=-1)[:, 1 : w // 2 + 1])

    energy = np.add.reduceat(magnitude**2, _band_starts(w, bands), axis=-1)
    dominant = np.argmax(magnitude, axis=-1) + 1
    return energy, dominant


def fft_features(window: np.ndarray, bands: int = 4) -> SpectrumStats:
    window = np.asarray(window, dtype=np.float64)
    energy, dominant = windowed_fft_features(window, len(window), bands)
    return SpectrumStats(energy[0], int(dominant[0]))


def impute(values: np.ndarray, channel_names: List[str]) -> np.ndarray:
    """Forward fill then back fill every channel."""
    frame = pd.DataFrame(values, columns=channel_names)
    empty = frame.columns[frame.isna().all()].tolist()
    if empty:
        raise DataException(f"channels with no values at all: {empty}")

    return frame.ffill().bfill().to_numpy(dtype=np.float64)


def _segments(index: np.ndarray) -> List[Tuple[int, int]]:
    """[start, end) row ranges of runs of consecutive sample positions."""
    breaks = np.nonzero(np.diff(index) != 1)[0] + 1
    bounds = np.concatenate([[0], breaks, [len(index)]])
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def _channel_features(series: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    w = cfg.window
    columns = [series[w - 1 :]]

    if cfg.temporal:
        padded = np.concatenate([series[:1], series[:1], series])
        first, second = derivatives(padded)
        end = len(series)
        columns += [
            moving_average(series, w),
            moving_std(series, w),
            first[w : end + 1],
            second[w - 1 : end],
        ]

    if cfg.statistical:
        skewness, kurtosis, _ = windowed_skew_kurt(series, w)
        columns += [skewness, kurtosis]

    if cfg.frequency:
        energy, dominant = windowed_fft_features(series, w, cfg.fft_bands)
        columns += list(energy.T) + [dominant.astype(np.float64)]

    return np.column_stack(columns)


def build_feature_matrix(ds: TimeSeriesDataset, cfg: FeatureConfig) -> FeatureMatrix:
    cfg.validate()
    w = cfg.window
    values = impute(ds.values, ds.channel_names)

    blocks = []
    row_index = []
    for start, end in _segments(ds.index):
        if end - start < w:
            continue

        segment = values[start:end]
        blocks.append(
            np.hstack([_channel_features(segment[:, j], cfg) for j in range(ds.d)])
        )
        row_index.append(ds.index[start + w - 1 : end])

    if not blocks:
        raise SizeException(f"dataset has no run of {w} consecutive samples")

    skipped = len(_segments(ds.index)) - len(blocks)
    if skipped:
        logging.info(f"segments_skipped={skipped} window={w}")

    columns = [Column(channel, kind) for channel in ds.channel_names for kind in cfg.kinds()]
    return FeatureMatrix(np.vstack(blocks), np.concatenate(row_index), columns)


@dataclass
class Normalizer:
    """Per column z-score statistics, fitted on training features only."""

    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    fitted_on: int = 0
    columns: List[str] = field(default_factory=list)

    @property
    def is_fitted(self) -> bool:
        return self.mean is not None and self.std is not None

    def _check(self, fm: FeatureMatrix):
        if not self.is_fitted:
            raise StateException("normalizer has not been fitted")

        if fm.column_names != self.columns:
            raise CompatibilityException(
                "feature columns differ from the columns the normalizer was fitted on"
            )

    def to_dict(self) -> Dict[str, Any]:
        if not self.is_fitted:
            raise StateException("normalizer has not been fitted")

        return {
            "columns": self.columns,
            "fitted_on": self.fitted_on,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "Normalizer":
        return Normalizer(
            mean=np.array(data["mean"], dtype=np.float64),
            std=np.array(data["std"], dtype=np.float64),
            fitted_on=int(data["fitted_on"]),
            columns=list(data["columns"]),
        )


def fit_normalizer(fm: FeatureMatrix) -> Normalizer:
    if len(fm) < 2:
        raise SizeException(f"need at least 2 rows to fit a normalizer, got {len(fm)}")

    return Normalizer(
        mean=fm.rows.mean(axis=0),
        std=fm.rows.std(axis=0),
        fitted_on=len(fm),
        columns=fm.column_names,
    )


def apply_normalizer(norm: Normalizer, fm: FeatureMatrix) -> FeatureMatrix:
    norm._check(fm)
    usable = norm.std >= SIGMA_FLOOR
    scale = np.where(usable, norm.std, 1.0)
    rows = np.where(usable, (fm.rows - norm.mean) / scale, 0.0)
    return fm.with_rows(rows)


def denormalize(norm: Normalizer, fm: FeatureMatrix) -> FeatureMatrix:
    """Inverse of apply_normalizer on non constant columns; constant ones get their mean."""
    norm._check(fm)
    usable = norm.std >= SIGMA_FLOOR
    return fm.with_rows(np.where(usable, fm.rows * norm.std + norm.mean, norm.mean))
