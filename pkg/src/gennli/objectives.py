"""Generative NLL and discriminative fine-tuning losses over per-label scores.

Every discriminative loss takes ``scores[y'] = log p(hypothesis | premise, y')``
for all candidate labels. With ``a`` the gold score:

================  ==========================================================
perceptron        ``-a + max_y' s(y')``
hinge             ``-a + max_y' (s(y') + cost(gold, y'))``
log               ``-a + logsumexp_y' s(y')``
softmax-margin    ``-a + logsumexp_y' (s(y') + cost(gold, y'))``
bayes-risk        ``sum_y' cost(gold, y') * softmax(s)(y')``
infinilog         ``-a + logsumexp_{y' != gold} s(y')``
================  ==========================================================

The uniform label prior cancels in all of them and is left out.
"""

from __future__ import annotations

import enum
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

CostFunction = Callable[[int, int], float]


class LossKind(enum.Enum):
    generative_nll = "generative"
    perceptron = "perceptron"
    hinge = "hinge"
    log = "log"
    softmax_margin = "softmax-margin"
    bayes_risk = "bayes-risk"
    infinilog = "infinilog"

    @classmethod
    def parse(cls, name: str | LossKind) -> LossKind:
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss {name!r}; choose from {choices}") from None


DISCRIMINATIVE = tuple(k for k in LossKind if k is not LossKind.generative_nll)


def zero_one_cost(gold: int, candidate: int) -> float:
    return 0.0 if gold == candidate else 1.0


def cost_matrix(cost: CostFunction, num_labels: int) -> np.ndarray:
    """``M[gold, candidate] = cost(gold, candidate)``."""
    return np.array([[cost(g, c) for c in range(num_labels)] for g in range(num_labels)], dtype=np.float64)


def generative_nll(score_gold: float) -> float:
    if not np.isfinite(score_gold):
        raise ValueError(f"score must be finite, got {score_gold}")
    return -float(score_gold)


def batch_loss(kind: LossKind | str, scores: ad.Tensor, gold: Sequence[int], costs: np.ndarray | None = None) -> ad.Tensor:
    """Per-instance losses, shape (B,), for ``scores`` of shape (B, |Y|).

    For ``generative`` the gold column is negated and other columns ignored.
    ``costs`` is a (|Y|, |Y|) matrix indexed [gold, candidate]; defaults to 0/1.
    """
    kind = LossKind.parse(kind)
    scores = ad.as_tensor(scores)
    if scores.ndim != 2:
        raise ad.ShapeError(f"scores must be (batch, labels), got {scores.shape}")
    B, Y = scores.shape
    gold = np.asarray(gold, dtype=np.intp)
    if gold.shape != (B,) or (gold < 0).any() or (gold >= Y).any():
        raise ValueError(f"gold labels must be {B} ids in [0, {Y})")
    if costs is None:
        costs = 1.0 - np.eye(Y)
    gold_cost = np.asarray(costs, dtype=np.float64)[gold]  # (B, Y)

    gold_score = ad.reshape(ad.gather(scores, gold[:, None], axis=1), (B,))
    if kind is LossKind.generative_nll:
        return ad.neg(gold_score)
    if kind is LossKind.perceptron:
        return ad.sub(ad.reduce_max(scores, axis=1), gold_score)
    if kind is LossKind.hinge:
        return ad.sub(ad.reduce_max(ad.add(scores, gold_cost), axis=1), gold_score)
    if kind is LossKind.log:
        return ad.sub(ad.log_sum_exp(scores, axis=1), gold_score)
    if kind is LossKind.softmax_margin:
        return ad.sub(ad.log_sum_exp(ad.add(scores, gold_cost), axis=1), gold_score)
    if kind is LossKind.bayes_risk:
        return ad.masked_sum(ad.softmax(scores, axis=1), gold_cost, axis=1)
    if kind is LossKind.infinilog:
        if Y < 2:
            raise ValueError("infinilog needs at least two labels")
        others = np.arange(Y)[None, :] != gold[:, None]
        return ad.sub(ad.log_sum_exp(scores, axis=1, mask=others), gold_score)
    raise AssertionError(kind)


def mean_loss(kind: LossKind | str, scores: ad.Tensor, gold: Sequence[int], costs: np.ndarray | None = None) -> ad.Tensor:
    losses = batch_loss(kind, scores, gold, costs)
    return ad.mul(ad.sum(losses), 1.0 / losses.shape[0])


def discriminative_loss(
    kind: LossKind | str,
    scores: Sequence[float],
    gold: int,
    cost: CostFunction = zero_one_cost,
) -> float:
    """Loss for one instance; ``scores`` are ordered by label id.

    >>> round(discriminative_loss("log", [-2.0, -2.5], 0), 6)
    0.474077
    """
    kind = LossKind.parse(kind)
    if kind is LossKind.generative_nll:
        raise ValueError("generative loss takes only the gold score; use generative_nll")
    s = np.asarray(scores, dtype=np.float64)[None, :]
    if kind is LossKind.infinilog and s.shape[1] < 2:
        raise ValueError("infinilog needs at least two labels")
    return batch_loss(kind, ad.Tensor(s), [gold], cost_matrix(cost, s.shape[1])).item()
