"""Spiking capsule network with STDP-driven routing, trained by surrogate-gradient BPTT."""

from __future__ import annotations

from ._kernels import BACKEND
from .data import Dataset, NoiseSpec, load_idx, load_split
from .errors import DimensionError, FormatError, ParameterError, SpikeCapsError, StateError
from .model import ArchConfig, ModelConfig, backward, forward, init_params, mse_loss, predict
from .neuron import LifConfig, LifState, lif_step, surrogate_grad
from .routing import RoutingConfig, RoutingState
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ArchConfig",
    "Dataset",
    "DimensionError",
    "FormatError",
    "LifConfig",
    "LifState",
    "ModelConfig",
    "NoiseSpec",
    "ParameterError",
    "RoutingConfig",
    "RoutingState",
    "SpikeCapsError",
    "StateError",
    "TrainConfig",
    "backward",
    "forward",
    "init_params",
    "lif_step",
    "load_idx",
    "load_split",
    "mse_loss",
    "predict",
    "surrogate_grad",
    "train",
]
