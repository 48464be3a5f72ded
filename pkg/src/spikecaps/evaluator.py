"""Accuracy, confusion matrices, noise sweeps and the affine-generalisation protocol."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Dataset, apply_noise, normalize
from .errors import DimensionError, ParameterError
from .model import ModelConfig, init_params, predict
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, labels: np.ndarray, predictions: np.ndarray, num_classes: int = 10) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(labels), np.asarray(predictions)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.counts.shape[0]
        w.writerow(["true\\pred", *range(k)])
        for i in range(k):
            w.writerow([i, *self.counts[i].tolist()])
        return buf.getvalue()


def predict_classes(outputs: np.ndarray) -> np.ndarray:
    # first maximum wins: ties resolve to the lowest class index
    return np.argmax(outputs, axis=1)


def evaluate(cfg: ModelConfig, params: dict, ds: Dataset, batch_size: int = 100) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix on an already-normalised dataset."""
    if ds.image_shape != cfg.arch.input_shape:
        raise DimensionError(f"dataset images {ds.image_shape} do not match model input {cfg.arch.input_shape}")
    preds = predict_classes(predict(ds.images, params, cfg, batch_size))
    cm = ConfusionMatrix.from_predictions(ds.labels, preds, cfg.arch.num_classes)
    return cm.accuracy, cm


@dataclass
class SweepResult:
    noise_kind: str
    head: str
    points: list = field(default_factory=list)  # (intensity, accuracy)

    @property
    def intensities(self) -> list:
        return [p[0] for p in self.points]

    @property
    def accuracies(self) -> list:
        return [p[1] for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["intensity", "accuracy"])
        for intensity, acc in self.points:
            w.writerow([repr(float(intensity)), repr(float(acc))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"noise_kind": self.noise_kind, "head": self.head, "points": [list(p) for p in self.points]}


def sweep_seed(seed: int, index: int) -> int:
    """Independent per-intensity corruption seed derived from the master seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint32)[0])


def noise_sweep(
    cfg: ModelConfig,
    params: dict,
    clean: Dataset,
    normalization: tuple[float, float],
    kind: str,
    intensities: Sequence[float],
    seed: int = 0,
    batch_size: int = 100,
) -> SweepResult:
    """Evaluate on freshly corrupted copies of the raw (un-normalised) ``clean`` set."""
    intensities = [float(i) for i in intensities]
    if not intensities:
        raise ParameterError("noise sweep needs at least one intensity")
    if any(b <= a for a, b in zip(intensities, intensities[1:])):
        raise ParameterError(f"intensities must be strictly increasing, got {intensities}")
    mean, std = normalization
    result = SweepResult(noise_kind=kind, head=cfg.arch.head)
    for k, intensity in enumerate(intensities):
        corrupted = apply_noise(clean, kind, intensity, sweep_seed(seed, k))
        acc, _ = evaluate(cfg, params, normalize(corrupted, mean, std), batch_size)
        logger.info("%s %.3f -> %.4f", kind, intensity, acc)
        result.points.append((intensity, acc))
    return result


@dataclass
class StopResult:
    target: float
    epochs_used: int | None
    train_acc: float | None
    affnist_acc: float | None

    @property
    def complete(self) -> bool:
        return self.affnist_acc is not None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "epochs_used": self.epochs_used,
            "train_acc": self.train_acc,
            "affnist_acc": self.affnist_acc,
            "complete": self.complete,
        }


def affnist_protocol(
    cfg: ModelConfig,
    train_placed: Dataset,
    affnist_test: Dataset,
    stop_accs: Sequence[float],
    tc: TrainConfig,
    log_file=None,
) -> list[StopResult]:
    """Train on canvas-placed digits; evaluate at each training-accuracy stop.

    Both datasets must already be normalised. Training is deterministic, so
    a stop at target ``a`` equals the prefix of a single run up to the first
    epoch whose training accuracy reaches ``a``; one run therefore serves
    every target. A target of 0 or less is met before any training. Targets
    not reached within ``tc.epochs`` come back incomplete.
    """
    targets = sorted(float(a) for a in stop_accs)
    results = {a: StopResult(a, None, None, None) for a in targets}
    params = init_params(cfg, np.random.default_rng([tc.seed, 0]))

    def _record(target: float, epoch: int, train_acc: float | None, p: dict) -> None:
        acc, _ = evaluate(cfg, p, affnist_test)
        results[target] = StopResult(target, epoch, train_acc, acc)
        logger.info("stop %.3f reached at epoch %d: affnist acc %.4f", target, epoch, acc)

    for a in targets:
        if a <= 0.0:
            _record(a, 0, None, params)
    pending = [a for a in targets if not results[a].complete]

    def on_epoch(record: dict, p: dict) -> bool:
        for a in list(pending):
            if record["train_acc"] >= a:
                _record(a, record["epoch"], record["train_acc"], p)
                pending.remove(a)
        return not pending

    if pending:
        train(cfg, train_placed, replace(tc, early_stop_train_acc=None), params=params, on_epoch=on_epoch, log_file=log_file)
    return [results[a] for a in targets]
