"""
Synthetic SCADA telemetry with injected fault precursors.

Channel layout for d channels, with K = max(1, (d - 2) // 4):

    wind_speed          AR(1) around 8 m/s
    power               cubic power curve of wind speed, clipped at rated power
    temp_00 .. temp_K   low pass of power + diurnal cycle + noise
    vib_00 .. vib_K     band limited noise riding on power
    noise_00 ..         white noise

Every channel and every event draws from its own substream (see rng.py) so
adding channels or events never changes what existing ones look like.
"""
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple
import math

import numpy as np
import pandas as pd
from scipy import signal

from turbinewatch import rng
from turbinewatch.dataset import FaultEvent, TimeSeriesDataset
from turbinewatch.exceptions import ConfigurationException

PRESETS: Dict[str, int] = {"farm-a": 86, "farm-b": 257, "farm-c": 957}

START_TIME = pd.Timestamp("2024-01-01T00:00:00", tz="UTC")
EVENT_HOURS = 6.0
DRIFT_SIGMAS = 3.0

RATED_POWER = 2000.0
RATED_WIND = 12.0
MEAN_WIND = 8.0
WIND_SD = 2.5
WIND_PHI = 0.98
BURN_IN = 500


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 20000
    n_channels: int = 86
    step_seconds: int = 600
    n_events: int = 6
    precursor_hours: float = 48.0
    drift_channels_frac: float = 0.5
    noise_sigma: float = 1.0
    seed: int = 0

    @staticmethod
    def preset(name: str, **overrides) -> "SynthConfig":
        if name not in PRESETS:
            raise ConfigurationException(
                f"unknown preset {name!r}, expected one of {sorted(PRESETS)}"
            )
        return SynthConfig(n_channels=PRESETS[name], **overrides)

    def validate(self):
        if self.n_samples <= 0:
            raise ConfigurationException("n_samples must be positive")
        if self.n_channels < 4:
            raise ConfigurationException("n_channels must be >= 4")
        if self.step_seconds <= 0:
            raise ConfigurationException("step_seconds must be positive")
        if self.n_events < 0:
            raise ConfigurationException("n_events must be >= 0")
        if self.precursor_hours < 0:
            raise ConfigurationException("precursor_hours must be >= 0")
        if not 0 < self.drift_channels_frac <= 1:
            raise ConfigurationException("drift_channels_frac must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ConfigurationException("noise_sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationException("seed must be a 64 bit unsigned integer")


def channel_layout(n_channels: int) -> List[str]:
    k = max(1, (n_channels - 2) // 4)
    names = ["wind_speed", "power"]
    names += [f"temp_{i:02d}" for i in range(k)]
    names += [f"vib_{i:02d}" for i in range(k)]
    names += [f"noise_{i:02d}" for i in range(n_channels - len(names))]
    return names


def channel_family(name: str) -> str:
    """temp_03 -> temp, wind_speed -> wind"""
    return name.split("_")[0]


def _wind(n: int, seed: int) -> np.ndarray:
    g = rng.substream(seed, rng.CHANNEL, 0)
    shocks = g.standard_normal(n + BURN_IN)
    scale = WIND_SD * math.sqrt(1 - WIND_PHI**2)
    series = signal.lfilter([scale], [1.0, -WIND_PHI], shocks)[BURN_IN:]
    return np.clip(MEAN_WIND + series, 0.0, None)


def _low_pass(x: np.ndarray, alpha: float) -> np.ndarray:
    b, a = [alpha], [1.0, alpha - 1.0]
    zi = signal.lfilter_zi(b, a) * x[0]
    out, _ = signal.lfilter(b, a, x, zi=zi)
    return out


def baseline(cfg: SynthConfig) -> TimeSeriesDataset:
    """Fault free telemetry."""
    cfg.validate()
    n = cfg.n_samples
    names = channel_layout(cfg.n_channels)
    hours = np.arange(n) * cfg.step_seconds / 3600.0

    wind = _wind(n, cfg.seed)
    power = np.minimum(RATED_POWER * (wind / RATED_WIND) ** 3, RATED_POWER)
    load = _low_pass(power / RATED_POWER, 0.02)

    values = np.empty((n, len(names)))
    values[:, 0] = wind
    values[:, 1] = power

    band_b, band_a = signal.butter(4, [0.05, 0.25], btype="band")
    for i, name in enumerate(names[2:], start=2):
        g = rng.substream(cfg.seed, rng.CHANNEL, i)

        if name.startswith("temp_"):
            phase = g.uniform(0, 2 * math.pi)
            diurnal = np.sin(2 * math.pi * hours / 24.0 + phase)
            values[:, i] = (
                40.0 + load + diurnal + cfg.noise_sigma * g.standard_normal(n)
            )

        elif name.startswith("vib_"):
            band = signal.lfilter(band_b, band_a, g.standard_normal(n + BURN_IN))[BURN_IN:]
            band /= band.std() or 1.0
            values[:, i] = 1.0 + 0.3 * load + cfg.noise_sigma * band

        else:
            values[:, i] = cfg.noise_sigma * g.standard_normal(n)

    return TimeSeriesDataset(
        start_time=START_TIME,
        step=float(cfg.step_seconds),
        values=values,
        channel_names=names,
    )


def place_events(
    n: int, n_events: int, precursor: int, duration: int, seed: int, recovery: int = 0
) -> List[Tuple[int, int]]:
    """
    Non overlapping [start, end) ranges, one per equal stratum of the
    series. Each start leaves room for a precursor window and an equal
    length window before it, each end leaves `recovery` samples after it,
    and consecutive events are at least 2 * precursor + recovery samples
    apart.
    """
    if n_events == 0:
        return []

    first = 2 * precursor
    spacing = duration + recovery + 2 * precursor
    stratum = (n - duration - recovery - first) / n_events
    slack = int(math.floor(stratum)) - spacing
    if slack < 0:
        raise ConfigurationException(
            f"cannot place {n_events} events of {duration} samples with "
            f"{precursor} sample precursors in {n} samples"
        )

    g = rng.substream(seed, rng.PLACEMENT)
    offsets = g.integers(0, slack + 1, size=n_events)
    starts = [first + int(math.floor(i * stratum)) + int(offset) for i, offset in enumerate(offsets)]
    return [(start, start + duration) for start in starts]


def drift_candidates(channel_names: Sequence[str]) -> List[int]:
    candidates = [
        i
        for i, name in enumerate(channel_names)
        if name.startswith("temp_") or name.startswith("vib_")
    ]
    return candidates or list(range(len(channel_names)))


def inject_faults(
    ds: TimeSeriesDataset,
    n_events: int,
    precursor_hours: float,
    drift_channels_frac: float,
    noise_sigma: float,
    seed: int,
    event_hours: float = EVENT_HOURS,
    prefix: str = "fault",
) -> TimeSeriesDataset:
    """
    Adds n_events labeled faults to a copy of ds. Each fault is preceded by a
    linear ramp over precursor_hours that reaches DRIFT_SIGMAS * noise_sigma at
    fault start, stays there for the fault's duration and then fades back to
    zero over another fault duration (the recovery). The drift is added to
    a drift_channels_frac share of the temperature/vibration channels (all
    channels when the dataset has none).
    """
    if ds.events:
        raise ConfigurationException("dataset already carries events")

    if not ds.is_contiguous():
        raise ConfigurationException("can only inject faults into a contiguous dataset")

    precursor = int(round(precursor_hours * 3600.0 / ds.step))
    duration = max(1, int(round(event_hours * 3600.0 / ds.step)))
    ranges = place_events(ds.n, n_events, precursor, duration, seed, recovery=duration)

    values = ds.values.copy()
    peak = DRIFT_SIGMAS * noise_sigma
    ramp = np.linspace(0.0, peak, precursor + 1)[1:]
    fade = np.linspace(peak, 0.0, duration + 1)[1:]

    events = []
    for e, (start, end) in enumerate(ranges):
        chosen = drifted_channels(ds.channel_names, drift_channels_frac, seed, e)
        values[start - precursor : start, chosen] += ramp[:, None]
        values[start:end, chosen] += peak
        values[end : end + duration, chosen] += fade[:, None]
        events.append(FaultEvent(start, end, f"{prefix}-{e:02d}"))

    return replace(ds, values=values, events=events, index=None)


def drifted_channels(
    channel_names: Sequence[str], drift_channels_frac: float, seed: int, event: int
) -> List[int]:
    """Channel indices inject_faults drifts for event number `event`."""
    candidates = drift_candidates(channel_names)
    count = max(1, int(round(drift_channels_frac * len(candidates))))
    g = rng.substream(seed, rng.EVENT, event)
    return [int(i) for i in np.sort(g.choice(candidates, size=count, replace=False))]


def generate_scada(cfg: SynthConfig) -> TimeSeriesDataset:
    ds = baseline(cfg)
    return inject_faults(
        ds,
        n_events=cfg.n_events,
        precursor_hours=cfg.precursor_hours,
        drift_channels_frac=cfg.drift_channels_frac,
        noise_sigma=cfg.noise_sigma,
        seed=cfg.seed,
    )
