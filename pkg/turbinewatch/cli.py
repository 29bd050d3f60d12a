"""
Command line pipeline.

    turbinewatch [--config FILE] [--seed N] [--out DIR] [--set key=value ...] STAGE

Stages communicate only through files in the output directory:

    generate   dataset.csv, events.csv
    featurize  features.csv, normalizer.json
    train      vae.ckpt, lstm.ckpt, transformer.ckpt
    calibrate  ensemble.json
    score      scores.csv
    evaluate   metrics.json, roc.csv, pr.csv
    report     report.md
    pipeline   all of the above, in order

Exit codes: 0 ok, 1 invalid configuration or data, 2 missing stage input,
3 numeric failure during training or scoring.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import io
import json
import logging
import sys

import numpy as np
import pandas as pd

from turbinewatch import checkpoint as ckpt
from turbinewatch import exceptions, rng
from turbinewatch.config import PipelineConfig, load_config
from turbinewatch.dataset import TimeSeriesDataset, split_chronological
from turbinewatch.ensemble import MODEL_ORDER, EnsembleConfig, EnsembleScorer, calibrate, flag, percentile_threshold
from turbinewatch.exceptions import (
    MissingArtifactException,
    NotFoundException,
    NumericException,
    UndefinedMetricException,
)
from turbinewatch.features import (
    FeatureMatrix,
    Normalizer,
    apply_normalizer,
    build_feature_matrix,
    fit_normalizer,
)
from turbinewatch.importance import ablate, group_shares, permutation_importance, top_k
from turbinewatch.ingest import read_csv, write_csv, write_events
from turbinewatch.metrics import (
    EvalReport,
    early_detection,
    expand_to_samples,
    model_metrics,
    pr_points,
    range_wise_eval,
    roc_points,
    score_distribution_stats,
    threshold_metrics,
)
from turbinewatch.models import ModelKind
from turbinewatch.report import render_report, write_metrics, write_points
from turbinewatch.synth import generate_scada, inject_faults
from turbinewatch.training import score_series, train

SPLITS = ("train", "val", "test")
DOMAIN_ERRORS = tuple(
    cls
    for cls in vars(exceptions).values()
    if isinstance(cls, type) and issubclass(cls, Exception)
)
CHECKPOINTS = {kind: f"{kind.value}.ckpt" for kind in ModelKind}

# producing stage of every artifact, for missing input messages
PRODUCERS = {
    "dataset.csv": "generate",
    "events.csv": "generate",
    "features.csv": "featurize",
    "normalizer.json": "featurize",
    "vae.ckpt": "train",
    "lstm.ckpt": "train",
    "transformer.ckpt": "train",
    "ensemble.json": "calibrate",
    "scores.csv": "score",
    "metrics.json": "evaluate",
}


class Workspace:
    """The output directory of a run."""

    def __init__(self, root: str):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str) -> Path:
        path = self.path(name)
        if not path.exists():
            stage = PRODUCERS.get(name, "an earlier stage")
            raise MissingArtifactException(f"missing {name} in {self.root}, run `{stage}` first")
        return path

    def writer(self, name: str, binary: bool = False):
        self.root.mkdir(parents=True, exist_ok=True)
        if binary:
            return open(self.path(name), "wb")
        return open(self.path(name), "w", encoding="utf-8", newline="")

    def read_json(self, name: str) -> dict:
        with open(self.require(name), encoding="utf-8") as f:
            return json.load(f)

    def write_json(self, name: str, data: dict):
        with self.writer(name) as f:
            json.dump(data, f, sort_keys=True, indent=2)
            f.write("\n")


def _open_input(path: str):
    try:
        return open(path, "rb")
    except FileNotFoundError:
        raise MissingArtifactException(f"missing input file {path}")


def load_dataset(ws: Workspace) -> TimeSeriesDataset:
    events = ws.path("events.csv")
    with open(ws.require("dataset.csv"), "rb") as source:
        if not events.exists():
            return read_csv(source)
        with open(events, "rb") as events_source:
            return read_csv(source, events_source)


def load_splits(ws: Workspace, config: PipelineConfig) -> Dict[str, TimeSeriesDataset]:
    return dict(zip(SPLITS, split_chronological(load_dataset(ws), config.split)))


def load_features(ws: Workspace) -> Dict[str, FeatureMatrix]:
    frame = pd.read_csv(ws.require("features.csv"), float_precision="round_trip")
    return {
        name: FeatureMatrix.from_frame(frame[frame["split"] == name].drop(columns="split"))
        for name in SPLITS
    }


def load_checkpoints(ws: Workspace) -> Dict[ModelKind, ckpt.Checkpoint]:
    checkpoints = {}
    for kind in MODEL_ORDER:
        with open(ws.require(CHECKPOINTS[kind]), "rb") as f:
            checkpoints[kind] = ckpt.load(f)
    return checkpoints


def load_ensemble(ws: Workspace) -> EnsembleConfig:
    return EnsembleConfig.from_dict(ws.read_json("ensemble.json"))


def stage_generate(config: PipelineConfig, ws: Workspace):
    settings = config.dataset
    if settings.csv:
        with _open_input(settings.csv) as source:
            if settings.events_csv:
                with _open_input(settings.events_csv) as events:
                    ds = read_csv(source, events)
            else:
                ds = read_csv(source)
    else:
        ds = generate_scada(settings.synth_config(config.seed))

    with ws.writer("dataset.csv") as f:
        write_csv(ds, f)
    with ws.writer("events.csv") as f:
        write_events(ds, f)
    logging.info(f"stage=generate n={ds.n} d={ds.d} events={len(ds.events)}")


def stage_featurize(config: PipelineConfig, ws: Workspace):
    splits = load_splits(ws, config)
    raw = {name: build_feature_matrix(ds, config.features) for name, ds in splits.items()}
    normalizer = fit_normalizer(raw["train"])

    frames = []
    for name in SPLITS:
        frame = apply_normalizer(normalizer, raw[name]).to_frame()
        frame.insert(0, "split", name)
        frames.append(frame)

    with ws.writer("features.csv") as f:
        pd.concat(frames).to_csv(f, index=False, lineterminator="\n")
    ws.write_json("normalizer.json", normalizer.to_dict())
    logging.info(
        "stage=featurize columns={} rows={}".format(
            len(raw["train"].columns), ",".join(f"{n}:{len(raw[n])}" for n in SPLITS)
        )
    )


def stage_train(config: PipelineConfig, ws: Workspace):
    features = load_features(ws)
    ws.require("normalizer.json")

    def fit(kind: ModelKind) -> ckpt.Checkpoint:
        settings = config.models.get(kind)
        return train(
            kind,
            features["train"],
            features["val"],
            settings.train_config(config.seed, kind),
            architecture=settings.architecture,
        )

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        checkpoints = list(pool.map(fit, MODEL_ORDER))

    for kind, checkpoint in zip(MODEL_ORDER, checkpoints):
        with ws.writer(CHECKPOINTS[kind], binary=True) as f:
            ckpt.save(checkpoint, f)
        logging.info(
            f"stage=train model={kind.value} epochs={checkpoint.metadata['epochs_run']} "
            f"best_val_loss={checkpoint.metadata['best_val_loss']:.6g}"
        )


def _row_labels(ds: TimeSeriesDataset, fm: FeatureMatrix) -> np.ndarray:
    return ds.labels()[np.searchsorted(ds.index, fm.row_index)]


def _injected_validation(
    config: PipelineConfig, ws: Workspace, val: TimeSeriesDataset
) -> Tuple[FeatureMatrix, np.ndarray]:
    count = max(1, int(round(config.dataset.n_events * config.split.val_frac)))
    injected = inject_faults(
        replace(val, events=[]),
        n_events=count,
        precursor_hours=config.dataset.precursor_hours,
        drift_channels_frac=config.dataset.drift_channels_frac,
        noise_sigma=config.dataset.noise_sigma,
        seed=rng.derive_seed(config.seed, rng.INJECTION),
        prefix="injected",
    )
    normalizer = Normalizer.from_dict(ws.read_json("normalizer.json"))
    fm = apply_normalizer(normalizer, build_feature_matrix(injected, config.features))
    logging.info(f"stage=calibrate injected_events={count}")
    return fm, _row_labels(injected, fm)


def stage_calibrate(config: PipelineConfig, ws: Workspace):
    checkpoints = load_checkpoints(ws)
    val_fm = load_features(ws)["val"]
    val = load_splits(ws, config)["val"]
    labels = _row_labels(val, val_fm)

    single_class = labels.all() or not labels.any()
    if single_class and config.ensemble.inject_anomalies:
        val_fm, labels = _injected_validation(config, ws, val)

    raw = {kind: score_series(checkpoints[kind], val_fm) for kind in MODEL_ORDER}
    ensemble = calibrate(
        raw,
        labels,
        percentile=config.ensemble.percentile,
        mode=config.ensemble.mode,
        fixed_weights=config.ensemble.fixed_weights,
    )
    ws.write_json("ensemble.json", ensemble.to_dict())
    logging.info(
        f"stage=calibrate weights={ensemble.weights} threshold={ensemble.threshold:.6g}"
    )


def stage_score(config: PipelineConfig, ws: Workspace):
    scorer = EnsembleScorer(load_checkpoints(ws), load_ensemble(ws))
    features = load_features(ws)
    splits = load_splits(ws, config)

    frames = []
    for name in ("val", "test"):
        fm, ds = features[name], splits[name]
        scores = scorer.score(fm)
        frame = pd.DataFrame(
            {
                "split": name,
                "row_index": fm.row_index,
                "timestamp": [t.isoformat() for t in ds.timestamps()[fm.row_index]],
                "label": _row_labels(ds, fm).astype(int),
            }
        )
        for kind in MODEL_ORDER:
            frame[f"{kind.value}_raw"] = scores.raw[kind]
        for kind in MODEL_ORDER:
            frame[kind.value] = scores.normalized[kind]
        frame["ensemble"] = scores.fused
        frame["flag"] = scores.flags.astype(int)
        frames.append(frame)

    with ws.writer("scores.csv") as f:
        pd.concat(frames).to_csv(f, index=False, lineterminator="\n")
    logging.info(f"stage=score rows={sum(len(f) for f in frames)}")


def stage_evaluate(config: PipelineConfig, ws: Workspace):
    frame = pd.read_csv(ws.require("scores.csv"), float_precision="round_trip")
    ensemble = load_ensemble(ws)
    test = load_splits(ws, config)["test"]
    settings = config.evaluation

    val_rows = frame[frame["split"] == "val"]
    test_rows = frame[frame["split"] == "test"]
    labels = test_rows["label"].to_numpy().astype(bool)
    fused = test_rows["ensemble"].to_numpy()
    flags = test_rows["flag"].to_numpy().astype(bool)
    row_index = test_rows["row_index"].to_numpy()

    degenerate: List[str] = []
    models = {}
    for kind in MODEL_ORDER:
        tau = percentile_threshold(val_rows[kind.value].to_numpy(), ensemble.percentile)
        scores = test_rows[kind.value].to_numpy()
        models[kind.value] = model_metrics(scores, flag(scores, tau), labels)
        if models[kind.value].degenerate:
            degenerate.append(f"{kind.value}.precision")

    overall = model_metrics(fused, flags, labels)
    if overall.degenerate:
        degenerate.append("precision")

    sample_flags = expand_to_samples(flags, row_index, test.n)
    ranges = range_wise_eval(sample_flags, test.events)
    if ranges.degenerate:
        degenerate.append("event_precision")

    try:
        early = early_detection(
            sample_flags,
            test.events,
            settings.lead_windows_hours,
            test.step,
            settings.horizon_hours,
        )
    except UndefinedMetricException:
        logging.warning("test split has no events, early detection skipped")
        early = {}
        degenerate.append("early_detection")

    importance: Dict[str, float] = {}
    shares: Dict[str, float] = {}
    ablation = None
    unit = settings.importance_unit
    if unit is not None:
        scorer = EnsembleScorer(load_checkpoints(ws), ensemble)
        test_fm = load_features(ws)["test"]
        importance = permutation_importance(
            scorer,
            test_fm,
            labels,
            rng.derive_seed(config.seed, rng.PERMUTATION),
            unit,
            config.jobs,
        )
        shares = group_shares(importance, unit)
        ablation = ablate(scorer, test_fm, labels, top_k(importance, settings.top_k), unit).to_dict()

    if degenerate:
        logging.warning(f"degenerate metrics: {','.join(degenerate)}")

    report = EvalReport(
        precision=overall.precision,
        recall=overall.recall,
        f1=overall.f1,
        auc_roc=overall.auc_roc,
        auc_pr=overall.auc_pr,
        precision_at_10=overall.precision_at_10,
        counts=threshold_metrics(flags, labels).counts,
        event_recall=ranges.event_recall,
        event_precision=ranges.event_precision,
        early_detection=early,
        score_stats=score_distribution_stats(fused, labels),
        models=models,
        feature_importance=importance,
        group_shares=shares,
        ablation=ablation,
        degenerate=degenerate,
    )

    with ws.writer("metrics.json") as f:
        write_metrics(report, f)
    with ws.writer("roc.csv") as f:
        write_points(roc_points(fused, labels), f)
    with ws.writer("pr.csv") as f:
        write_points(pr_points(fused, labels), f)
    logging.info(f"stage=evaluate auc_roc={overall.auc_roc:.4f} f1={overall.f1:.4f}")


def stage_report(config: PipelineConfig, ws: Workspace):
    metrics = ws.read_json("metrics.json")
    ensemble = ws.read_json("ensemble.json")
    training = {
        kind.value: checkpoint.metadata for kind, checkpoint in load_checkpoints(ws).items()
    }
    ds = load_dataset(ws)
    dataset = {
        "samples": ds.n,
        "channels": ds.d,
        "step seconds": ds.step,
        "events": len(ds.events),
        "start": ds.start_time.isoformat(),
    }

    with ws.writer("report.md") as f:
        f.write(render_report(metrics, ensemble, training, dataset))
    logging.info(f"stage=report path={ws.path('report.md')}")


STAGES: Dict[str, Callable[[PipelineConfig, Workspace], None]] = {
    "generate": stage_generate,
    "featurize": stage_featurize,
    "train": stage_train,
    "calibrate": stage_calibrate,
    "score": stage_score,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def stage_pipeline(config: PipelineConfig, ws: Workspace):
    for stage in STAGES.values():
        stage(config, ws)


def run_subcommand(name: str, config: PipelineConfig) -> int:
    """Runs one stage; returns the process exit code."""
    ws = Workspace(config.out)
    stage = stage_pipeline if name == "pipeline" else STAGES[name]
    try:
        stage(config, ws)
    except NotFoundException as e:
        logging.error(f"stage={name} missing input: {e}")
        return 2
    except NumericException as e:
        logging.error(f"stage={name} numeric failure: {e}")
        return 3
    except DOMAIN_ERRORS as e:
        logging.error(f"stage={name} {type(e).__name__}: {e}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turbinewatch",
        description="Ensemble autoencoder anomaly detection for turbine telemetry.",
    )
    parser.add_argument("--config", help="YAML pipeline configuration")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("--out", help="output directory, overrides the config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a dotted config key, may be repeated",
    )
    parser.add_argument("--jobs", type=int, help="worker threads for train and evaluate")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("stage", choices=list(STAGES) + ["pipeline"])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(message)s",
    )

    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")

    try:
        text = None
        if args.config:
            with _open_input(args.config) as f:
                text = io.TextIOWrapper(f, encoding="utf-8").read()
        config = load_config(text, overrides, seed=args.seed, out=args.out)
    except NotFoundException as e:
        logging.error(f"config: {e}")
        return 2
    except DOMAIN_ERRORS as e:
        logging.error(f"config: {type(e).__name__}: {e}")
        return 1

    return run_subcommand(args.stage, config)
