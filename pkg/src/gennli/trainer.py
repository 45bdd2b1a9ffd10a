"""Two-phase training: generative NLL, then discriminative fine-tuning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import Dataset, Instance
from .metrics import ConfusionMatrix
from .model import ModelParams, all_label_scores, gold_scores, predict_many
from .objectives import LossKind, mean_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gen_epochs: int = 20
    ft_epochs: int = 15
    ft_loss: LossKind = LossKind.infinilog
    optimizer: str = "adam"
    lr: float = 0.001
    batch_size: int = 16
    grad_clip: float | None = 5.0
    seed: int = 0
    eval_every: int = 1
    direction: str = "forward"
    selection: str = "all"
    costs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ft_loss = LossKind.parse(self.ft_loss)
        if self.gen_epochs < 0 or self.ft_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.direction not in ("forward", "reverse"):
            raise ValueError(f"direction must be 'forward' or 'reverse', got {self.direction!r}")
        if self.selection not in ("all", "finetune"):
            raise ValueError(f"selection must be 'all' or 'finetune', got {self.selection!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive or None")


# ---------------------------------------------------------------------------
# optimisers


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Sequence[ad.Parameter], grads: dict[str, np.ndarray]) -> None:
        for p in params:
            g = grads.get(p.name)
            if g is not None:
                p.assign(p.data - self.lr * g)


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[ad.Parameter], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            g = grads.get(p.name)
            if g is None:
                g = np.zeros(p.shape)
            m = self.m.setdefault(p.name, np.zeros(p.shape))
            v = self.v.setdefault(p.name, np.zeros(p.shape))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.assign(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# reporting


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    dev_accuracy: float | None
    seconds: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_dev_accuracy: float | None = None

    def to_jsonl(self, timestamps: bool = True) -> str:
        lines = []
        for r in self.records:
            rec = asdict(r)
            if not timestamps:
                rec.pop("seconds")
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"best_epoch": self.best_epoch, "best_dev_accuracy": self.best_dev_accuracy}))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


# ---------------------------------------------------------------------------
# training / evaluation


def evaluate(dataset: Dataset, params: ModelParams, direction: str = "forward") -> tuple[float, ConfusionMatrix]:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict_many(list(dataset), params, direction)
    cm = ConfusionMatrix.from_predictions([i.label for i in dataset], preds, len(params.labels))
    return cm.accuracy(), cm


def batch_objective(
    instances: Sequence[Instance], params: ModelParams, kind: LossKind, direction: str, costs=None
) -> ad.Tensor:
    """Mean loss of ``kind`` over ``instances``."""
    gold = [i.label for i in instances]
    if kind is LossKind.generative_nll:
        scores = gold_scores(instances, params, direction)
        return ad.mul(ad.sum(scores), -1.0 / len(instances))
    return mean_loss(kind, all_label_scores(instances, params, direction), gold, costs)


def _locate_bad_instance(instances, params, kind, direction, costs) -> str:
    for inst in instances:
        try:
            value = batch_objective([inst], params, kind, direction, costs).item()
        except ad.NonFiniteError as exc:
            value, err = float("nan"), exc
        else:
            err = None
        if not np.isfinite(value):
            extra = f" ({err})" if err else ""
            return f"premise={' '.join(inst.premise)!r} hypothesis={' '.join(inst.hypothesis)!r}{extra}"
    return "no single instance reproduces the failure"


def train_step(instances, params: ModelParams, kind: LossKind, optimizer, config: TrainConfig) -> float:
    try:
        with ad.Tape() as tape:
            loss = batch_objective(instances, params, kind, config.direction, config.costs)
    except ad.NonFiniteError:
        loss = None
    if loss is None or not np.isfinite(loss.item()):
        where = _locate_bad_instance(instances, params, kind, config.direction, config.costs)
        raise TrainingError(f"non-finite {kind.value} loss; offending instance: {where}")
    grads = ad.backward(tape, np.ones(()), output=loss)
    if config.grad_clip is not None:
        clip_grad_norm(grads, config.grad_clip)
    optimizer.step(list(params), grads)
    return loss.item()


def shuffled_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(
    dataset: Dataset,
    dev_set: Dataset | None,
    params: ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams, TrainReport]:
    """Train a copy of ``params``; the input is left untouched.

    Runs ``gen_epochs`` of the generative objective followed by
    ``ft_epochs`` of ``config.ft_loss``. With a dev set, the parameters of
    the epoch with the best dev accuracy (earliest on ties) are returned;
    otherwise the final ones. ``selection="finetune"`` restricts the choice
    to fine-tuning epochs when there are any.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    if tuple(dataset.label_set) != tuple(params.labels):
        raise ValueError(f"dataset labels {dataset.label_set} differ from model labels {params.labels}")
    params = params.copy()
    optimizer = make_optimizer(config.optimizer, config.lr)
    report = TrainReport()
    best_state = None
    schedule = [LossKind.generative_nll] * config.gen_epochs + [config.ft_loss] * config.ft_epochs
    instances = list(dataset)

    for epoch, kind in enumerate(schedule, 1):
        start = time.perf_counter()
        order = shuffled_order(len(instances), config.seed, epoch)
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            chunk = [instances[i] for i in order[lo : lo + config.batch_size]]
            total += train_step(chunk, params, kind, optimizer, config) * len(chunk)
            count += len(chunk)
        dev_acc = None
        if dev_set is not None and (epoch % config.eval_every == 0 or epoch == len(schedule)):
            dev_acc, _ = evaluate(dev_set, params, config.direction)
            eligible = config.selection == "all" or config.ft_epochs == 0 or epoch > config.gen_epochs
            if eligible and (report.best_dev_accuracy is None or dev_acc > report.best_dev_accuracy):
                report.best_dev_accuracy, report.best_epoch = dev_acc, epoch
                best_state = params.state_dict()
        phase = "generative" if kind is LossKind.generative_nll else f"finetune:{kind.value}"
        report.records.append(EpochRecord(epoch, phase, total / count, dev_acc, time.perf_counter() - start))
        log.info("epoch %d %s loss=%.4f dev_acc=%s", epoch, phase, total / count, dev_acc)

    if best_state is not None:
        params.load_state_dict(best_state)
    elif schedule:
        report.best_epoch = len(schedule)
    return params, report
