"""Mini-batch SGD training, prediction and classification metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import SGDMomentum, Tape, ops, save_checkpoint
from .nn import Layer
from .signal_io import N_CLASSES, RhythmClass

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    momentum: float = 0.7
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0


@dataclass
class TrainResult:
    loss_curve: list[float] = field(default_factory=list)  # mean training loss per epoch
    checkpoints: list[Path] = field(default_factory=list)


def train(
    model: Layer,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[int, float], bool | None] | None = None,
) -> TrainResult:
    """Train ``model`` in place with momentum SGD on cross-entropy.

    Shuffling uses ``config.seed``; with a fixed seed and fixed initial
    parameters the result is bit-for-bit reproducible. When
    ``checkpoint_dir`` is set, a checkpoint is written after every epoch.
    ``on_epoch`` may return True to stop early.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} windows but {len(y)} labels")

    rng = np.random.default_rng(config.seed)
    opt = SGDMomentum(model.parameters(), lr=config.lr, momentum=config.momentum)
    result = TrainResult()
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(X), config.batch_size)):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.softmax_cross_entropy(model.logits(X[idx]), y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            tape.backward(loss)
            opt.step()
            total += value * len(idx)
            count += len(idx)
        mean_loss = total / count
        result.loss_curve.append(mean_loss)
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, mean_loss)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"epoch_{epoch + 1:03d}.npz"
            result.checkpoints.append(save_checkpoint(path, model.state_dict()))
        if on_epoch is not None and on_epoch(epoch, mean_loss) is True:
            break
    model.eval()
    return result


def predict_proba(model: Layer, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Class probabilities in eval mode, without recording a tape."""
    was_training = model.training
    model.eval()
    try:
        X = np.asarray(X, dtype=np.float64)
        out = [model.forward(X[i:i + batch_size]).probs.data for i in range(0, len(X), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES))


def predict(model: Layer, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    # argmax picks the lowest class index on ties
    return predict_proba(model, X, batch_size).argmax(axis=1)


@dataclass
class Metrics:
    confusion: np.ndarray  # rows: true class, columns: predicted class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    @property
    def undefined_classes(self) -> list[RhythmClass]:
        """Classes with no test support (their recall and F1 are NaN)."""
        return [RhythmClass(c) for c in range(len(self.confusion)) if self.confusion[c].sum() == 0]

    def rows(self) -> list[tuple[str, float, float, float, int]]:
        support = self.confusion.sum(axis=1)
        out = [(RhythmClass(c).name, self.precision[c], self.recall[c], self.f1[c], int(support[c]))
               for c in range(len(self.confusion))]
        out.append(("macro", self.macro_precision, self.macro_recall, self.macro_f1, int(support.sum())))
        return out


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    """Per-class and macro precision/recall/F1 plus accuracy.

    Precision of a never-predicted class is 0; recall and F1 of a class with
    no support are NaN and excluded from the macro averages.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    support = cm.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = np.where(support > 0, tp / np.maximum(support, 1), np.nan)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    f1 = np.where(support > 0, f1, np.nan)
    present = support > 0
    total = cm.sum()
    return Metrics(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(tp.sum() / total) if total else float("nan"),
        macro_precision=float(precision[present].mean()) if present.any() else float("nan"),
        macro_recall=float(recall[present].mean()) if present.any() else float("nan"),
        macro_f1=float(f1[present].mean()) if present.any() else float("nan"),
    )


def evaluate(model: Layer, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> Metrics:
    if len(X) == 0:
        raise ValueError("empty test set")
    n_classes = model.config.n_classes
    return metrics_from_confusion(confusion_matrix(y, predict(model, X, batch_size), n_classes))
