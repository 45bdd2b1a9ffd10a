"""Generative sequence-pair classification with an attentional copy decoder.

A label-conditioned encoder-decoder scores ``log p(hypothesis | premise, y)``
and predicts the label with the highest score. Models are trained with
the generative objective and can then be fine-tuned with a discriminative
loss. Gradients come from the small reverse-mode engine in
:mod:`gennli.autodiff`.
"""

from .data import Dataset, Instance, Vocabulary, build_vocab, load_dataset, load_embeddings, tokenize
from .harness import ExperimentConfig, Imbalance, Noise, Report, Subsample, run_experiment
from .metrics import ConfusionMatrix, mcc
from .model import (
    ModelParams,
    decode_step,
    encode,
    generate_greedy,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    score_hypothesis,
    score_reverse,
)
from .objectives import LossKind, discriminative_loss
from .trainer import TrainConfig, TrainReport, evaluate, train

__all__ = [
    "ConfusionMatrix",
    "Dataset",
    "ExperimentConfig",
    "Imbalance",
    "Instance",
    "LossKind",
    "ModelParams",
    "Noise",
    "Report",
    "Subsample",
    "TrainConfig",
    "TrainReport",
    "Vocabulary",
    "build_vocab",
    "decode_step",
    "discriminative_loss",
    "encode",
    "evaluate",
    "generate_greedy",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "load_embeddings",
    "mcc",
    "predict",
    "run_experiment",
    "save_checkpoint",
    "score_hypothesis",
    "score_reverse",
    "tokenize",
    "train",
]
