"""Programmatic toy tasks used for tests, demos and gradient checks."""

from __future__ import annotations

import numpy as np

from .data import Dataset, Instance, Vocabulary

ENTAILMENT = "entailment"
NON_ENTAILMENT = "non-entailment"


def contiguous_subsequence_task(
    n_train: int = 200,
    n_dev: int = 100,
    n_test: int = 100,
    seed: int = 0,
    premise_vocab: int = 40,
    foreign_vocab: int = 10,
    premise_len: tuple[int, int] = (6, 10),
    hypothesis_len: tuple[int, int] = (3, 6),
) -> tuple[Dataset, Dataset, Dataset]:
    """Binary entailment where the hypothesis is a span of the premise.

    Entailed hypotheses are contiguous spans of the premise. Non-entailed
    ones are spans with one token swapped for a token from a vocabulary
    that never occurs in premises. Classes alternate, so each split is
    balanced up to one instance.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(premise_vocab)]
    foreign = [f"z{i:02d}" for i in range(foreign_vocab)]
    labels = (ENTAILMENT, NON_ENTAILMENT)

    def make(i: int) -> Instance:
        n = int(rng.integers(premise_len[0], premise_len[1] + 1))
        premise = [words[k] for k in rng.integers(0, premise_vocab, size=n)]
        t = int(rng.integers(hypothesis_len[0], min(hypothesis_len[1], n) + 1))
        start = int(rng.integers(0, n - t + 1))
        hyp = premise[start : start + t]
        label = i % 2
        if label == 1:
            hyp[int(rng.integers(0, t))] = foreign[int(rng.integers(0, foreign_vocab))]
        return Instance(tuple(premise), tuple(hyp), label)

    splits = []
    for size in (n_train, n_dev, n_test):
        splits.append(Dataset(tuple(make(i) for i in range(size)), labels))
    return tuple(splits)


def tiny_reference_setup(seed: int = 0):
    """A 20-entry vocabulary and one 3-token pair for gradient checks.

    The premise holds one out-of-vocabulary token that the hypothesis
    copies, so the extended-vocabulary path is exercised.
    """
    labels = ("entailment", "neutral")
    regular = [f"t{i:02d}" for i in range(20 - 3 - len(labels))]
    vocab = Vocabulary.from_tokens(regular, labels)
    rng = np.random.default_rng(seed)
    a, b, c = (regular[k] for k in rng.choice(len(regular), size=3, replace=False))
    instance = Instance((a, "oov_word", b), ("oov_word", b, c), 0)
    return vocab, instance
