"""Training-set perturbations and multi-seed experiment runs.

Three stress protocols are supported: per-class subsampling, label
flipping, and down-sampling one class. Each is a deterministic function
of (dataset, settings, seed) and is only ever applied to training data.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, Instance, build_vocab, load_dataset, load_embeddings
from .metrics import ConfusionMatrix, mcc
from .model import init_params
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentError",
    "Identity",
    "Subsample",
    "Noise",
    "Imbalance",
    "subsample_per_class",
    "flip_labels",
    "imbalance",
    "mcc",
    "ConfusionMatrix",
    "ExperimentConfig",
    "SeedResult",
    "Report",
    "run_experiment",
]


class ExperimentError(RuntimeError):
    """A component failed during one seed of an experiment."""


def round_half_up(x: float) -> int:
    # 1e-9 absorbs representation error such as 0.3 * 100 = 30.000000000000004
    return int(math.floor(x + 0.5 + 1e-9))


def subsample_per_class(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Keep exactly ``k`` instances of every class, preserving original order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {y: [] for y in range(len(dataset.label_set))}
    for idx, inst in enumerate(dataset):
        by_label[inst.label].append(idx)
    keep = []
    for y, idxs in by_label.items():
        if len(idxs) < k:
            raise ValueError(f"class {dataset.label_set[y]!r} has {len(idxs)} instances, fewer than k={k}")
        keep.extend(rng.choice(idxs, size=k, replace=False).tolist())
    return dataset.replace(dataset[i] for i in sorted(keep))


def flip_labels(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Relabel exactly ``round(fraction * n)`` instances to a different label.

    The new label is drawn uniformly from the other labels (for two labels,
    the other one).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    Y = len(dataset.label_set)
    if Y < 2:
        raise ValueError("flipping labels needs at least two labels")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    chosen = rng.choice(n, size=round_half_up(fraction * n), replace=False)
    labels = [inst.label for inst in dataset]
    for i in sorted(chosen.tolist()):
        shift = int(rng.integers(1, Y))
        labels[i] = (labels[i] + shift) % Y
    return dataset.replace(Instance(inst.premise, inst.hypothesis, y) for inst, y in zip(dataset, labels))


def imbalance(dataset: Dataset, target_label: str | int, keep_fraction: float, seed: int) -> Dataset:
    """Keep ``round(keep_fraction * n_target)`` instances of one class and all others."""
    target = dataset.label_id(target_label) if isinstance(target_label, str) else int(target_label)
    if not 0 <= target < len(dataset.label_set):
        raise ValueError(f"label id {target} outside the label set")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    idxs = [i for i, inst in enumerate(dataset) if inst.label == target]
    n_keep = round_half_up(keep_fraction * len(idxs))
    if n_keep == 0:
        raise ValueError(
            f"keeping {keep_fraction} of {len(idxs)} {dataset.label_set[target]!r} instances leaves none"
        )
    rng = np.random.default_rng(seed)
    kept = set(rng.choice(idxs, size=n_keep, replace=False).tolist())
    return dataset.replace(inst for i, inst in enumerate(dataset) if inst.label != target or i in kept)


@dataclass(frozen=True)
class Identity:
    def apply(self, dataset: Dataset, seed: int) -> Dataset:
        return dataset

    def describe(self) -> str:
        return "identity"


@dataclass(frozen=True)
class Subsample:
    k: int

    def apply(self, dataset: Dataset, seed: int) -> Dataset:
        return subsample_per_class(dataset, self.k, seed)

    def describe(self) -> str:
        return f"subsample k={self.k}"


@dataclass(frozen=True)
class Noise:
    fraction: float

    def apply(self, dataset: Dataset, seed: int) -> Dataset:
        return flip_labels(dataset, self.fraction, seed)

    def describe(self) -> str:
        return f"noise fraction={self.fraction}"


@dataclass(frozen=True)
class Imbalance:
    label: str
    keep_fraction: float

    def apply(self, dataset: Dataset, seed: int) -> Dataset:
        return imbalance(dataset, self.label, self.keep_fraction, seed)

    def describe(self) -> str:
        return f"imbalance label={self.label} keep={self.keep_fraction}"


Perturbation = Identity | Subsample | Noise | Imbalance


@dataclass
class ExperimentConfig:
    """One experiment: data, a training-set perturbation, a training schedule and seeds.

    ``train_data`` etc. may be paths or already-loaded datasets.
    """

    train_data: str | Path | Dataset
    dev_data: str | Path | Dataset | None = None
    test_data: str | Path | Dataset | None = None
    data_format: str | None = None
    perturbation: Perturbation = field(default_factory=Identity)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: Sequence[int] = (0, 1, 2, 3, 4)
    d_w: int = 300
    d: int = 300
    d_y: int = 100
    min_freq: int = 1
    embeddings: str | Path | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class SeedResult:
    seed: int
    train_size: int
    accuracy: float
    mcc: float
    confusion: ConfusionMatrix


@dataclass
class Report:
    description: str
    eval_split: str
    results: list[SeedResult]

    @property
    def median_accuracy(self) -> float:
        return float(np.median([r.accuracy for r in self.results]))

    @property
    def median_mcc(self) -> float:
        return float(np.median([r.mcc for r in self.results]))

    def to_text(self) -> str:
        lines = [f"# {self.description}; evaluated on {self.eval_split}", "seed\ttrain_size\taccuracy\tmcc"]
        for r in self.results:
            lines.append(f"{r.seed}\t{r.train_size}\t{r.accuracy:.4f}\t{r.mcc:.4f}")
        lines.append(f"median\t-\t{self.median_accuracy:.4f}\t{self.median_mcc:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "train_size", "accuracy", "mcc"])
        for r in self.results:
            w.writerow([r.seed, r.train_size, f"{r.accuracy:.6f}", f"{r.mcc:.6f}"])
        w.writerow(["median", "", f"{self.median_accuracy:.6f}", f"{self.median_mcc:.6f}"])
        return buf.getvalue()


def _load(source, fmt, label_set=None) -> Dataset | None:
    if source is None:
        return None
    if isinstance(source, Dataset):
        if label_set is not None and tuple(source.label_set) != tuple(label_set):
            raise ValueError(f"label set {source.label_set} differs from training labels {label_set}")
        return source
    return load_dataset(source, fmt, label_set=label_set)


def run_experiment(config: ExperimentConfig) -> Report:
    """Perturb, train and evaluate once per seed; evaluation splits are never perturbed.

    Scores are reported on the test split, or on dev when there is no test split.
    """
    train_set = _load(config.train_data, config.data_format)
    dev_set = _load(config.dev_data, config.data_format, train_set.label_set)
    test_set = _load(config.test_data, config.data_format, train_set.label_set)
    eval_set, eval_name = (test_set, "test") if test_set is not None else (dev_set, "dev")
    if eval_set is None:
        raise ValueError("experiment needs a dev or test split to evaluate on")

    results = []
    for seed in config.seeds:
        try:
            perturbed = config.perturbation.apply(train_set, seed)
            vocab = build_vocab(perturbed, config.min_freq)
            pretrained = load_embeddings(config.embeddings, vocab, config.d_w, seed) if config.embeddings else None
            params = init_params(vocab, config.d_w, config.d, config.d_y, seed=seed, pretrained=pretrained)
            model, _ = train(perturbed, dev_set, params, replace(config.train, seed=seed))
            acc, cm = evaluate(eval_set, model, config.train.direction)
        except Exception as exc:
            raise ExperimentError(f"seed {seed}, {config.perturbation.describe()}: {exc}") from exc
        log.info("seed %d: accuracy %.4f", seed, acc)
        results.append(SeedResult(seed, len(perturbed), acc, mcc(cm), cm))
    description = f"{config.perturbation.describe()}; loss={config.train.ft_loss.value}; direction={config.train.direction}"
    return Report(description, eval_name, results)
