"""Minibatch training: Adam, step learning-rate decay, early stopping, JSON-lines log."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import DimensionError, ParameterError
from .model import ModelConfig, backward, forward, init_params, mse_loss, predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 50
    lr: float = 1e-3
    lr_decay_factor: float = 0.3
    lr_decay_epochs: tuple = (35,)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    early_stop_train_acc: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ParameterError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: decayed once per listed epoch already reached."""
        n_decays = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor**n_decays


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()}, v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: dict, grads: dict, st: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update, applied in place to every parameter once."""
    if set(grads) != set(params):
        raise DimensionError(f"gradient keys {sorted(grads)} differ from parameter keys {sorted(params)}")
    st.step += 1
    bc1 = 1.0 - beta1**st.step
    bc2 = 1.0 - beta2**st.step
    for k in sorted(params):
        g = grads[k]
        if g.shape != params[k].shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter has {params[k].shape}")
        if k not in st.m:
            st.m[k] = np.zeros_like(params[k])
            st.v[k] = np.zeros_like(params[k])
        st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * g
        st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * (g * g)
        params[k] -= lr * (st.m[k] / bc1) / (np.sqrt(st.v[k] / bc2) + eps)
    return params, st


def accuracy(outputs: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return float(np.mean(np.argmax(outputs, axis=1) == labels)) if len(labels) else 0.0


@dataclass
class TrainResult:
    params: dict
    log: list
    epochs_run: int
    stopped_early: bool


def train(
    cfg: ModelConfig,
    train_ds: Dataset,
    tc: TrainConfig,
    test_ds: Dataset | None = None,
    params: dict | None = None,
    on_epoch: Callable[[dict, dict], bool] | None = None,
    log_file=None,
) -> TrainResult:
    """Train on normalised ``train_ds``.

    ``on_epoch(record, params)`` is called after every epoch; returning
    true stops training. ``log_file`` (a text stream) receives one JSON
    line per epoch.
    """
    if len(train_ds) == 0:
        raise ParameterError("training dataset is empty")
    if train_ds.image_shape != cfg.arch.input_shape:
        raise DimensionError(f"training images {train_ds.image_shape} != architecture input {cfg.arch.input_shape}")
    if params is None:
        params = init_params(cfg, np.random.default_rng([tc.seed, 0]))
    st = AdamState.for_params(params)
    log: list = []
    n = len(train_ds)
    stopped = False
    epoch = 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        lr = tc.lr_at(epoch)
        order = np.random.default_rng([tc.seed, 1, epoch]).permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            out, rec = forward(train_ds.images[idx], params, cfg)
            loss, g_out = mse_loss(out, train_ds.labels[idx])
            grads = backward(rec, g_out, params, cfg)
            adam_step(params, grads, st, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(out, axis=1) == train_ds.labels[idx]))
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "test_acc": None,
        }
        if test_ds is not None:
            record["test_acc"] = accuracy(predict(test_ds.images, params, cfg), test_ds.labels)
        record["wall_time_s"] = time.perf_counter() - t0
        log.append(record)
        logger.info("epoch %d: %s", epoch, record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        if on_epoch is not None and on_epoch(record, params):
            stopped = True
            break
        if tc.early_stop_train_acc is not None and record["train_acc"] >= tc.early_stop_train_acc:
            stopped = True
            break
    return TrainResult(params=params, log=log, epochs_run=epoch if tc.epochs else 0, stopped_early=stopped)
