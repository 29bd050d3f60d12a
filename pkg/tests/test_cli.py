from dataclasses import replace
from unittest import mock
import json
import os

import numpy as np
import pandas as pd

from turbinewatch import checkpoint as ckpt
from turbinewatch.cli import main
from turbinewatch.dataset import FaultEvent
from turbinewatch.exceptions import TrainingException
from turbinewatch.ingest import write_csv, write_events
from tests.fixtures import Fixtures, make_dataset

TINY = """
seed: 3
jobs: 2
dataset:
  csv: {csv}
  events_csv: {events}
split:
  train_frac: 0.7
  val_frac: 0.15
  test_frac: 0.15
  guard_margin: 10
features:
  window: 4
  fft_bands: 2
models:
  vae:
    max_epochs: 2
    batch_size: 32
    architecture: {{hidden: 4, latent: 2}}
  lstm:
    max_epochs: 1
    batch_size: 32
    architecture: {{hidden: 4, latent: 2, seq_len: 4}}
  transformer:
    max_epochs: 1
    batch_size: 32
    architecture: {{d_model: 4, d_k: 4, ff: 4, latent: 2, seq_len: 4}}
ensemble:
  percentile: 95
evaluation:
  lead_windows_hours: [1, 2]
  horizon_hours: 12
  top_k: 1
  importance: channel
"""


class TestCli(Fixtures):
    def setUp(self) -> None:
        super().setUp()
        events = [FaultEvent(450, 470, "val-fault"), FaultEvent(540, 560, "test-fault")]
        ds = make_dataset(n=600, d=3, seed=4)
        values = ds.values.copy()
        for event in events:
            values[event.start_index - 12 : event.end_index, 0] += 4.0
        ds = replace(ds, values=values, events=events)

        csv_path = os.path.join(self.out_dir, "input.csv")
        events_path = os.path.join(self.out_dir, "input-events.csv")
        with open(csv_path, "w", newline="") as f:
            write_csv(ds, f)
        with open(events_path, "w", newline="") as f:
            write_events(ds, f)

        self.config_path = os.path.join(self.out_dir, "tiny.yaml")
        with open(self.config_path, "w") as f:
            f.write(TINY.format(csv=csv_path, events=events_path))
        self.run_dir = os.path.join(self.out_dir, "run")

    def run_cli(self, *args: str) -> int:
        return main(["--config", self.config_path, "--out", self.run_dir, *args])

    def artifact(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def test_pipeline(self):
        assert self.run_cli("pipeline") == 0

        for name in [
            "dataset.csv",
            "events.csv",
            "features.csv",
            "normalizer.json",
            "vae.ckpt",
            "lstm.ckpt",
            "transformer.ckpt",
            "ensemble.json",
            "scores.csv",
            "metrics.json",
            "roc.csv",
            "pr.csv",
            "report.md",
        ]:
            assert os.path.exists(self.artifact(name)), name

        features = pd.read_csv(self.artifact("features.csv"))
        assert list(features.columns[:3]) == ["split", "row_index", "temp_00:raw"]
        assert set(features["split"]) == {"train", "val", "test"}

        with open(self.artifact("lstm.ckpt"), "rb") as f:
            checkpoint = ckpt.load(f)
        assert checkpoint.columns == list(features.columns[2:])

        scores = pd.read_csv(self.artifact("scores.csv"))
        assert list(scores.columns) == [
            "split",
            "row_index",
            "timestamp",
            "label",
            "vae_raw",
            "lstm_raw",
            "transformer_raw",
            "vae",
            "lstm",
            "transformer",
            "ensemble",
            "flag",
        ]
        test_rows = scores[scores["split"] == "test"]
        assert test_rows["label"].sum() == 20

        with open(self.artifact("metrics.json")) as f:
            metrics = json.load(f)
        assert set(metrics["early_detection"]) == {"1h", "2h"}
        assert set(metrics["models"]) == {"vae", "lstm", "transformer"}
        assert set(metrics["feature_importance"]) == {"temp_00", "temp_01", "temp_02"}
        assert len(metrics["ablation"]["removed"]) == 1

        with open(self.artifact("report.md")) as f:
            assert f.read().startswith("# turbinewatch report")

    def test_stages_are_deterministic(self):
        assert self.run_cli("generate") == 0
        assert self.run_cli("featurize") == 0
        assert self.run_cli("train") == 0
        with open(self.artifact("vae.ckpt"), "rb") as f:
            first = f.read()

        assert self.run_cli("--jobs", "1", "train") == 0
        with open(self.artifact("vae.ckpt"), "rb") as f:
            assert f.read() == first

    def test_pipeline_is_reproducible(self):
        assert self.run_cli("pipeline") == 0
        with open(self.artifact("metrics.json"), "rb") as f:
            first = f.read()
        with open(self.artifact("transformer.ckpt"), "rb") as f:
            first_checkpoint = f.read()

        assert self.run_cli("pipeline") == 0
        with open(self.artifact("metrics.json"), "rb") as f:
            assert f.read() == first
        with open(self.artifact("transformer.ckpt"), "rb") as f:
            assert f.read() == first_checkpoint

    def test_score_without_checkpoints(self):
        assert self.run_cli("generate") == 0
        assert self.run_cli("featurize") == 0
        assert self.run_cli("score") == 2

    def test_missing_input(self):
        with self.assertLogs(level="ERROR") as logs:
            assert self.run_cli("train") == 2
        assert any("run `featurize` first" in line for line in logs.output)

    def test_missing_config_file(self):
        assert main(["--config", os.path.join(self.out_dir, "nope.yaml"), "generate"]) == 2

    def test_invalid_config(self):
        assert self.run_cli("--set", "features.window=3", "featurize") == 1
        assert self.run_cli("--set", "colour=blue", "generate") == 1

    def test_numeric_failure(self):
        assert self.run_cli("generate") == 0
        assert self.run_cli("featurize") == 0
        with mock.patch("turbinewatch.cli.train", side_effect=TrainingException("vae diverged")):
            assert self.run_cli("train") == 3

    def test_seed_flag(self):
        os.remove(self.config_path)
        with open(self.config_path, "w") as f:
            f.write("dataset: {n_samples: 400, n_channels: 4, n_events: 1, precursor_hours: 2}\n")

        assert self.run_cli("--seed", "5", "generate") == 0
        first = np.loadtxt(self.artifact("dataset.csv"), delimiter=",", skiprows=1, usecols=(1, 2))
        assert self.run_cli("--seed", "6", "generate") == 0
        second = np.loadtxt(self.artifact("dataset.csv"), delimiter=",", skiprows=1, usecols=(1, 2))
        assert not np.array_equal(first, second)
