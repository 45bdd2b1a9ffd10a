"""Finite-difference verification of the full model's gradients."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .model import all_label_scores, gold_scores, init_params
from .objectives import LossKind, mean_loss
from .synthetic import tiny_reference_setup


def check_reference_model(seed: int = 0, epsilon: float = 1e-5, d_w: int = 8, d: int = 8, d_y: int = 4) -> dict[str, float]:
    """Max relative gradient error per parameter on the tiny reference model.

    Two losses are checked on the same pair: the generative NLL under the
    gold label, and infinilog over all labels (which also reaches the
    non-gold label embedding and BOS row). Reported per parameter as the
    worse of the two. Perturbed losses are evaluated in extended precision.
    """
    vocab, inst = tiny_reference_setup(seed)
    params = init_params(vocab, d_w=d_w, d=d, d_y=d_y, seed=seed)

    def nll():
        return ad.neg(ad.sum(gold_scores([inst], params)))

    def infinilog():
        return mean_loss(LossKind.infinilog, all_label_scores([inst], params), [inst.label])

    worst: dict[str, float] = {}
    for loss_fn in (nll, infinilog):
        per: dict[str, float] = {}
        ad.finite_difference_check(
            loss_fn, params.tensors, epsilon, seed=seed, per_param=per, numeric_dtype=np.longdouble
        )
        for name, err in per.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst
