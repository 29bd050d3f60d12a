from unittest import TestCase
from typing import List, Optional
import tempfile

import numpy as np
import pandas as pd

from turbinewatch.dataset import FaultEvent, TimeSeriesDataset

START = pd.Timestamp("2024-01-01T00:00:00", tz="UTC")


def make_dataset(
    n: int = 200,
    d: int = 3,
    events: Optional[List[FaultEvent]] = None,
    seed: int = 0,
    step: float = 600.0,
) -> TimeSeriesDataset:
    g = np.random.default_rng(seed)
    return TimeSeriesDataset(
        start_time=START,
        step=step,
        values=g.standard_normal((n, d)),
        channel_names=[f"temp_{i:02d}" for i in range(d)],
        events=events or [],
    )


class Fixtures(TestCase):
    out_dir: str

    def setUp(self) -> None:
        super().setUp()
        self.temp_dir = tempfile.TemporaryDirectory()
        self.out_dir = self.temp_dir.name

    def tearDown(self) -> None:
        self.temp_dir.cleanup()
        super().tearDown()
