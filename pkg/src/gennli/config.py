"""Flat ``key = value`` run settings shared by the command-line workflows.

A settings file holds one assignment per line. Blank lines and lines
starting with ``#`` are ignored, and later assignments win. Recognised keys
and their meaning:

=================  =========================================================
key                meaning
=================  =========================================================
train              training data path (jsonl or tsv)
dev                dev data path, used for per-epoch model selection
test               test data path
format             ``jsonl`` or ``tsv``; inferred from the suffix if absent
embeddings         pretrained word-vector text file
min_freq           minimum training-set frequency for a vocabulary entry
d_w, d, d_y        word embedding, encoder/decoder state and label sizes
gen_epochs         epochs of the generative objective
ft_epochs          epochs of discriminative fine-tuning
loss               fine-tuning loss name, e.g. ``infinilog``
optimizer          ``adam`` or ``sgd``
lr                 learning rate
batch_size         instances per update
grad_clip          global gradient-norm bound; ``none`` disables clipping
eval_every         epochs between dev evaluations
direction          ``forward`` (premise -> hypothesis) or ``reverse``
selection          dev selection over ``all`` epochs or ``finetune`` epochs only
seed               seed for initialisation, shuffling and perturbation
seeds              comma-separated seed list for experiments
subsample_k        keep this many training instances per class
noise              fraction of training labels to flip
imbalance_label    label to down-sample
keep_fraction      fraction of ``imbalance_label`` instances to keep
=================  =========================================================

At most one perturbation (``subsample_k``, ``noise`` or
``imbalance_label``) may be set.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .harness import ExperimentConfig, Identity, Imbalance, Noise, Subsample
from .objectives import LossKind
from .trainer import TrainConfig


class ConfigError(ValueError):
    """A settings file or override is malformed."""


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "off", "") else float(text)


def _seed_list(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


@dataclass(frozen=True)
class Settings:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    format: str | None = None
    embeddings: str | None = None
    min_freq: int = 1
    d_w: int = 300
    d: int = 300
    d_y: int = 100
    gen_epochs: int = 20
    ft_epochs: int = 15
    loss: str = "infinilog"
    optimizer: str = "adam"
    lr: float = 0.001
    batch_size: int = 16
    grad_clip: float | None = 5.0
    eval_every: int = 1
    direction: str = "forward"
    selection: str = "all"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    subsample_k: int | None = None
    noise: float | None = None
    imbalance_label: str | None = None
    keep_fraction: float | None = None

    def with_overrides(self, **values) -> Settings:
        """Return a copy with every non-None value applied."""
        values = {k: v for k, v in values.items() if v is not None}
        unknown = set(values) - KEYS
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        return replace(self, **values)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                gen_epochs=self.gen_epochs,
                ft_epochs=self.ft_epochs,
                ft_loss=LossKind.parse(self.loss),
                optimizer=self.optimizer,
                lr=self.lr,
                batch_size=self.batch_size,
                grad_clip=self.grad_clip,
                seed=self.seed,
                eval_every=self.eval_every,
                direction=self.direction,
                selection=self.selection,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def perturbation(self):
        chosen = [
            name
            for name, value in (("subsample_k", self.subsample_k), ("noise", self.noise), ("imbalance_label", self.imbalance_label))
            if value is not None
        ]
        if len(chosen) > 1:
            raise ConfigError(f"only one perturbation may be set, got {', '.join(chosen)}")
        if self.keep_fraction is not None and self.imbalance_label is None:
            raise ConfigError("keep_fraction requires imbalance_label")
        if self.subsample_k is not None:
            return Subsample(self.subsample_k)
        if self.noise is not None:
            return Noise(self.noise)
        if self.imbalance_label is not None:
            if self.keep_fraction is None:
                raise ConfigError("imbalance_label requires keep_fraction")
            return Imbalance(self.imbalance_label, self.keep_fraction)
        return Identity()

    def experiment_config(self) -> ExperimentConfig:
        if self.train is None:
            raise ConfigError("an experiment needs 'train'")
        return ExperimentConfig(
            train_data=self.train,
            dev_data=self.dev,
            test_data=self.test,
            data_format=self.format,
            perturbation=self.perturbation(),
            train=self.train_config(),
            seeds=self.seeds,
            d_w=self.d_w,
            d=self.d,
            d_y=self.d_y,
            min_freq=self.min_freq,
            embeddings=self.embeddings,
        )


_PARSERS = {
    "min_freq": int,
    "d_w": int,
    "d": int,
    "d_y": int,
    "gen_epochs": int,
    "ft_epochs": int,
    "lr": float,
    "batch_size": int,
    "grad_clip": _optional_float,
    "eval_every": int,
    "seed": int,
    "seeds": _seed_list,
    "subsample_k": int,
    "noise": float,
    "keep_fraction": float,
}

KEYS = frozenset(f.name for f in fields(Settings))


def parse_settings(text: str, source: str = "<string>") -> Settings:
    """Parse settings text; every bad line is reported in one error."""
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        elif key not in KEYS:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
        else:
            try:
                values[key] = _PARSERS.get(key, str)(value)
            except ValueError as exc:
                problems.append(f"{source}:{lineno}: bad value for {key!r}: {exc}")
    if problems:
        raise ConfigError("\n".join(problems))
    return Settings(**values)


def load_settings(path) -> Settings:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_settings(text, str(path))
