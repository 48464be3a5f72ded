"""Run configuration: one JSON file describing data, model, training, noise and seed.

Precedence when resolving a value: command-line flag, then config file,
then (for ``data.root`` only) the ``SPIKECAPS_DATA_ROOT`` environment
variable, then the built-in default. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DATASET_NAMES, NoiseSpec, default_data_root
from .errors import SpikeCapsError
from .model import ArchConfig, ModelConfig
from .neuron import LifConfig
from .routing import RoutingConfig
from .trainer import TrainConfig


class ConfigError(SpikeCapsError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass
class DataConfig:
    root: str | None = None
    name: str = "mnist"
    train_subset: int | None = None
    test_subset: int | None = None


@dataclass
class AffnistConfig:
    canvas: int = 40
    stop_accs: list = field(default_factory=lambda: [0.97, 0.98, 0.99])
    test_root: str | None = None
    test_name: str = "affnist"
    test_subset: int | None = None


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int | None = None
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    lif: LifConfig = field(default_factory=LifConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    affnist: AffnistConfig = field(default_factory=AffnistConfig)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(arch=self.arch, lif=self.lif, routing=self.routing)

    def derived_seed(self, purpose: int) -> int:
        """Subsystem seed derived from the master seed (purpose 0 is reserved for training)."""
        return int(np.random.SeedSequence([self.seed, 1000 + purpose]).generate_state(1, dtype=np.uint32)[0])

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "threads": self.threads,
            "data": dataclasses.asdict(self.data),
            "noise": dataclasses.asdict(self.noise),
            "affnist": dataclasses.asdict(self.affnist),
            "train": self.train.to_dict(),
        }
        d.update(self.model.to_dict())
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


_SECTIONS = {
    "data": DataConfig,
    "arch": ArchConfig,
    "lif": LifConfig,
    "routing": RoutingConfig,
    "train": TrainConfig,
    "noise": NoiseSpec,
    "affnist": AffnistConfig,
}
_SCALARS = {"seed", "out_dir", "threads"}


def _build(section: str, cls, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError(section, "must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        names_hit = [k for k in sorted(names, key=len, reverse=True) if k in str(exc)]
        bad = names_hit[0] if names_hit else None
        raise ConfigError(f"{section}.{bad}" if bad else section, str(exc)) from exc


def from_dict(d: dict) -> RunConfig:
    for key in d:
        if key not in _SECTIONS and key not in _SCALARS:
            raise ConfigError(key, "unknown key")
    kwargs = {k: d[k] for k in _SCALARS if k in d}
    for name, cls in _SECTIONS.items():
        if name in d:
            kwargs[name] = _build(name, cls, d[name])
    cfg = RunConfig(**kwargs)
    if not isinstance(cfg.seed, int):
        raise ConfigError("seed", f"must be an integer, got {cfg.seed!r}")
    # the training seed is the master seed
    cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    if cfg.data.name not in DATASET_NAMES:
        raise ConfigError("data.name", f"must be one of {DATASET_NAMES}")
    return cfg


def load(path, overrides: dict | None = None) -> RunConfig:
    """Read a config file and apply dotted-key overrides such as ``{"train.epochs": 1}``."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("<file>", "top level must be an object")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = d
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = from_dict(d)
    if cfg.data.root is None:
        cfg.data.root = default_data_root()
    return cfg


def require_data_root(cfg: RunConfig) -> Path:
    if not cfg.data.root:
        raise ConfigError("data.root", "no dataset root given (set it in the config, pass --data-root, or set SPIKECAPS_DATA_ROOT)")
    root = Path(cfg.data.root)
    if not (root / cfg.data.name).is_dir():
        raise ConfigError("data.root", f"dataset directory {root / cfg.data.name} does not exist")
    return root
