from dataclasses import dataclass, field
from typing import Any, List, Mapping, Optional
import logging
import math

import numpy as np
import pandas as pd

from turbinewatch import rng
from turbinewatch.checkpoint import Checkpoint
from turbinewatch.exceptions import (
    CompatibilityException,
    ConfigurationException,
    NumericException,
    SizeException,
    TrainingException,
)
from turbinewatch.features import FeatureMatrix
from turbinewatch.models import Detector, Examples, ModelKind, build_model
from turbinewatch.optim import AdamState, adam_step
from turbinewatch.tensor import ParameterSet, value_and_grad

MODEL_STREAMS = {ModelKind.VAE: 0, ModelKind.LSTM: 1, ModelKind.TRANSFORMER: 2}


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 20
    batch_size: int = 64
    patience: int = 3
    lr: float = 1e-3
    seed: int = 0

    def validate(self):
        for name in ("max_epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigurationException(f"{name} must be positive")
        if self.lr <= 0:
            raise ConfigurationException("lr must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationException("seed must be a 64 bit unsigned integer")


@dataclass
class TrainResult:
    params: ParameterSet
    epochs_run: int
    best_val_loss: float
    history: List[dict] = field(default_factory=list)


class Trainer:
    """
    Mini-batch Adam on the model's own loss. After every epoch the
    validation loss decides whether the parameters are the best so far;
    training stops after `patience` epochs without improvement.
    """

    def __init__(self, model: Detector, cfg: TrainConfig):
        cfg.validate()
        self.model = model
        self.cfg = cfg

    def validation_loss(self, params: ParameterSet, examples: Examples) -> float:
        """Noise free loss, averaged over all validation examples."""
        total = 0.0
        for lo in range(0, len(examples), self.cfg.batch_size):
            positions = np.arange(lo, min(lo + self.cfg.batch_size, len(examples)))
            loss = self.model.loss(params, examples.take(positions))
            total += loss.item() * len(positions)
        return total / len(examples)

    def fit(self, train: Examples, val: Examples) -> TrainResult:
        if len(train) == 0 or len(val) == 0:
            raise SizeException(
                f"{self.model.kind.value}: need training and validation examples, "
                f"got {len(train)} and {len(val)}"
            )

        cfg = self.cfg
        g = rng.substream(cfg.seed, rng.TRAINING, MODEL_STREAMS[self.model.kind])
        params = self.model.initialize(g)
        state = AdamState(lr=cfg.lr)

        best_params, best = params, math.inf
        stale = 0
        history = []
        epoch = 0
        for epoch in range(1, cfg.max_epochs + 1):
            order = g.permutation(len(train))
            losses = []
            for batch_number, lo in enumerate(range(0, len(train), cfg.batch_size)):
                batch = train.take(order[lo : lo + cfg.batch_size])
                try:
                    loss, grads = value_and_grad(lambda p: self.model.loss(p, batch, g), params)
                    if not math.isfinite(loss):
                        raise NumericException(f"loss is {loss}")
                    params, state = adam_step(params, grads, state)
                except NumericException as e:
                    raise TrainingException(
                        f"{self.model.kind.value} diverged at epoch {epoch} batch {batch_number}: {e}"
                    )
                losses.append(loss)

            val_loss = self.validation_loss(params, val)
            if not math.isfinite(val_loss):
                raise TrainingException(
                    f"{self.model.kind.value} validation loss is {val_loss} at epoch {epoch}"
                )

            if val_loss < best:
                best, best_params, stale = val_loss, params, 0
            else:
                stale += 1

            train_loss = float(np.mean(losses))
            history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
            logging.info(
                f"model={self.model.kind.value} epoch={epoch} train_loss={train_loss:.6g} "
                f"val_loss={val_loss:.6g} best={best:.6g}"
            )

            if stale >= cfg.patience:
                logging.info(f"model={self.model.kind.value} early_stop epoch={epoch}")
                break

        return TrainResult(best_params, epoch, best, history)


def train(
    kind: ModelKind,
    train_fm: FeatureMatrix,
    val_fm: FeatureMatrix,
    cfg: TrainConfig,
    architecture: Optional[Mapping[str, Any]] = None,
    normalizer_ref: str = "normalizer.json",
) -> Checkpoint:
    if train_fm.column_names != val_fm.column_names:
        raise CompatibilityException("training and validation features have different columns")

    model = build_model(kind, len(train_fm.columns), architecture)
    result = Trainer(model, cfg).fit(
        model.examples(train_fm.rows, train_fm.row_index),
        model.examples(val_fm.rows, val_fm.row_index),
    )

    return Checkpoint(
        kind=kind,
        architecture=model.describe(),
        params=result.params,
        columns=train_fm.column_names,
        normalizer_ref=normalizer_ref,
        metadata={
            "epochs_run": result.epochs_run,
            "best_val_loss": result.best_val_loss,
            "seed": cfg.seed,
            "history": result.history,
        },
    )


def score_series(checkpoint: Checkpoint, fm: FeatureMatrix) -> np.ndarray:
    """
    One score per feature row. Sequence models score every run of T rows
    with consecutive sample indices and credit the score to its last row;
    rows without a full sequence behind them take the next available score
    (the first T - 1 rows of a contiguous matrix get the first score).
    """
    if fm.column_names != checkpoint.columns:
        raise CompatibilityException(
            f"{checkpoint.kind.value} checkpoint expects {len(checkpoint.columns)} "
            f"feature columns in its training layout, got {len(fm.columns)}"
        )

    model = checkpoint.model()
    examples = model.examples(fm.rows, fm.row_index)
    if len(examples) == 0:
        raise SizeException(
            f"need at least {model.sequence_length} consecutive rows to score, got {len(fm)}"
        )

    scores = model.score_examples(examples)
    if model.sequence_length == 1:
        return scores

    series = pd.Series(np.nan, index=np.arange(len(fm)))
    series.iloc[examples.starts + model.sequence_length - 1] = scores
    return series.bfill().ffill().to_numpy()
