"""Run configuration: one human-readable JSON file driving the whole lab.

Every constant that controls an experiment lives here with an explicit
value: the abstention threshold, vote trials, attack iteration counts and
query budgets, the sigma ladder, the quantity options, and every seed.
Nothing reads ambient entropy; rerunning a config reproduces results
bit-exactly.
"""

from __future__ import annotations

import glob
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import data, nets
from .attacks import (DEFAULT_QUERY_BUDGET, METHODS, NORMS, attack_config)
from .checkpoint import atomic_write_text
from .threat import SCENARIO_IDS, DefenseConfig

ZOO_NAMES = ("default", "extended")

# seeds the pipeline draws from; each stage hangs its streams off its own
REQUIRED_SEEDS = ("dataset", "collection", "subset", "scenario", "curve")


@dataclass(frozen=True)
class DatasetBlock:
    class_count: int = 10
    per_class: int = 160
    jitter_sigma: float = 0.3
    contrast: float = 0.7
    train_fraction: float = 0.75
    cifar10_path: Optional[str] = None  # directory of CIFAR-10 binary batches

    def __post_init__(self):
        if self.class_count < 2 or self.per_class < 2:
            raise ValueError("need >=2 classes and >=2 samples per class")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0,1)")

    def build(self, seed: int):
        if self.cifar10_path is not None:
            return _cifar_dataset(self.cifar10_path, self.train_fraction)
        return data.gen_dataset(
            self.class_count, self.per_class, self.jitter_sigma, seed,
            self.train_fraction, self.contrast,
        )

    @property
    def input_shape(self) -> tuple[int, ...]:
        if self.cifar10_path is not None:
            return (3, 32, 32)
        return (1, data.IMAGE_SIZE, data.IMAGE_SIZE)


def _cifar_dataset(path: str, train_fraction: float) -> data.SyntheticDataset:
    """CIFAR-10 binary batches as a split dataset. A directory uses the
    standard batch names (data_batch_*.bin train, test_batch.bin test); a
    single file is split by leading fraction."""
    if os.path.isdir(path):
        train_files = sorted(glob.glob(os.path.join(path, "data_batch_*.bin")))
        test_files = sorted(glob.glob(os.path.join(path, "test_batch*.bin")))
        if not train_files or not test_files:
            raise FileNotFoundError(
                f"{path}: expected data_batch_*.bin and test_batch.bin"
            )
        tr_x, tr_y = data.load_cifar10_binary(train_files)
        te_x, te_y = data.load_cifar10_binary(test_files)
        images = np.concatenate([tr_x, te_x])
        labels = np.concatenate([tr_y, te_y])
        split = np.array(["train"] * len(tr_y) + ["test"] * len(te_y))
    else:
        images, labels = data.load_cifar10_binary(path)
        n_train = max(1, min(len(labels) - 1,
                             int(round(len(labels) * train_fraction))))
        split = np.array(["train"] * n_train
                         + ["test"] * (len(labels) - n_train))
    return data.SyntheticDataset(images=images, labels=labels, split=split)


@dataclass(frozen=True)
class AttackBlock:
    """One attack template; epsilon is supplied per run/point."""

    method: str
    norm: str = "linf"
    targeted: bool = False
    iterations: Optional[int] = None
    momentum_mu: Optional[float] = None
    query_budget: int = DEFAULT_QUERY_BUDGET
    est_samples: int = 50
    est_radius: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")

    def build(self, epsilon: float, target_class: Optional[int] = None):
        return attack_config(
            self.method, epsilon, self.norm, self.targeted, target_class,
            self.iterations, None, self.momentum_mu, self.query_budget,
            self.est_samples, self.est_radius,
        )


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    zoo: str = "default"
    sigma_grid: tuple[float, ...] = (0.12, 0.25)
    quantity_options: tuple[int, ...] = (1, 2, 3)
    epochs: int = 20
    lr: float = 0.05
    n_trials: int = 100            # Monte-Carlo votes per judgment
    alpha: float = 0.3             # abstention threshold
    member_noise_samples: int = 8
    attack_noise_samples: int = 8
    designated_arch: Optional[str] = "linear"
    scenarios: tuple[str, ...] = tuple(SCENARIO_IDS)
    attacks: tuple[AttackBlock, ...] = (
        AttackBlock("fgsm"), AttackBlock("bim"), AttackBlock("mim"),
        AttackBlock("pgd"), AttackBlock("nes"), AttackBlock("spsa"),
    )
    epsilon_grid: tuple[float, ...] = (
        0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
    )
    eps_max: float = 0.5
    coarse_steps: int = 10
    binary_steps: int = 20
    sample_count: int = 48
    workers: int = 1
    seeds: dict = field(default_factory=lambda: {
        "dataset": 1, "collection": 7, "subset": 3, "scenario": 11,
        "curve": 5,
    })
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "sigma_grid",
                           tuple(float(s) for s in self.sigma_grid))
        object.__setattr__(self, "quantity_options",
                           tuple(int(q) for q in self.quantity_options))
        object.__setattr__(self, "scenarios",
                           tuple(str(s) for s in self.scenarios))
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "epsilon_grid",
                           tuple(float(e) for e in self.epsilon_grid))
        object.__setattr__(self, "seeds", dict(self.seeds))
        if self.zoo not in ZOO_NAMES:
            raise ValueError(f"zoo must be one of {ZOO_NAMES}")
        if any(s <= 0 for s in self.sigma_grid):
            raise ValueError("sigma grid entries must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0,1)")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        bad = [s for s in self.scenarios if s not in SCENARIO_IDS]
        if bad:
            raise ValueError(f"unknown scenario ids {bad}")
        grid = list(self.epsilon_grid)
        if sorted(grid) != grid or len(set(grid)) != len(grid):
            raise ValueError("epsilon_grid must be strictly increasing")
        missing = [k for k in REQUIRED_SEEDS if k not in self.seeds]
        if missing:
            raise ValueError(f"seeds must be explicit; missing {missing}")
        for key, value in self.seeds.items():
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"seed {key!r} must be a nonnegative int")
        arch_ids = [a.arch_id for a in self.build_zoo()]
        if self.quantity_options and max(self.quantity_options) > len(arch_ids):
            raise ValueError(
                f"max quantity {max(self.quantity_options)} exceeds the "
                f"zoo's {len(arch_ids)} architectures"
            )
        if (self.designated_arch is not None
                and self.designated_arch not in arch_ids):
            raise ValueError(
                f"designated_arch {self.designated_arch!r} not in zoo "
                f"{arch_ids}"
            )

    def build_zoo(self) -> list[nets.ArchitectureSpec]:
        return nets.default_zoo(
            self.dataset.class_count, self.dataset.input_shape,
            extended=(self.zoo == "extended"),
        )

    def defense(self) -> DefenseConfig:
        return DefenseConfig(self.member_noise_samples,
                             self.attack_noise_samples,
                             self.designated_arch)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def save_config(cfg: RunConfig, path: str) -> None:
    atomic_write_text(path, cfg.to_json())


def _block(d: dict, cls):
    return cls(**d) if isinstance(d, dict) else d


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    if "dataset" in raw:
        raw["dataset"] = _block(raw["dataset"], DatasetBlock)
    if "attacks" in raw:
        raw["attacks"] = tuple(_block(a, AttackBlock) for a in raw["attacks"])
    unknown = set(raw) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config fields {sorted(unknown)}")
    return RunConfig(**raw)


def load_config(path: Optional[str]) -> RunConfig:
    """RunConfig from a JSON file; None gives the documented defaults."""
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config_from_dict(raw)
