"""Sentence-pair datasets, vocabularies and per-pair extended vocabularies."""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

PAD, UNK, EOS = 0, 1, 2
FIRST_BOS = 3

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class DatasetError(ValueError):
    """Raised for unreadable or malformed dataset / embedding files."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word runs and single punctuation marks.

    >>> tokenize("A man is sitting.")
    ['a', 'man', 'is', 'sitting', '.']
    >>> tokenize("Don't stop")
    ['don', "'", 't', 'stop']
    """
    if not text or not text.strip():
        raise ValueError("cannot tokenize empty text")
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Instance:
    premise: tuple[str, ...]
    hypothesis: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")

    def swapped(self) -> Instance:
        """Premise and hypothesis exchanged, for modelling the reverse direction."""
        return Instance(self.hypothesis, self.premise, self.label)


@dataclass(frozen=True)
class Dataset:
    instances: tuple[Instance, ...]
    label_set: tuple[str, ...]

    def __post_init__(self):
        if len(self.label_set) < 2:
            raise DatasetError(f"need at least 2 labels, got {list(self.label_set)}")
        for inst in self.instances:
            if not 0 <= inst.label < len(self.label_set):
                raise DatasetError(f"label id {inst.label} outside label set of size {len(self.label_set)}")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    def replace(self, instances: Iterable[Instance]) -> Dataset:
        return Dataset(tuple(instances), self.label_set)

    def label_counts(self) -> list[int]:
        counts = [0] * len(self.label_set)
        for inst in self.instances:
            counts[inst.label] += 1
        return counts

    def label_id(self, name: str) -> int:
        try:
            return self.label_set.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}; known: {list(self.label_set)}") from None


def _read_records(path: Path, fmt: str):
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, None, f"invalid JSON ({exc.msg})"
                    continue
                if not isinstance(rec, dict):
                    yield lineno, None, "record is not an object"
                    continue
                missing = [k for k in ("premise", "hypothesis", "label") if k not in rec]
                if missing:
                    yield lineno, None, f"missing field(s) {missing}"
                    continue
                yield lineno, (rec["premise"], rec["hypothesis"], rec["label"]), None
    elif fmt == "tsv":
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    yield lineno, None, f"expected 3 tab-separated columns, got {len(row)}"
                    continue
                yield lineno, tuple(row), None
    else:
        raise DatasetError(f"unknown dataset format {fmt!r} (expected 'jsonl' or 'tsv')")


def load_dataset(path, format: str | None = None, label_set: Sequence[str] | None = None) -> Dataset:
    """Read a JSONL or TSV sentence-pair file.

    The label set is the sorted set of labels in the file unless
    ``label_set`` is given (e.g. to read a dev split against a model's
    labels). All malformed lines are collected and reported together.
    For two-sentence tasks without a natural direction (paraphrase), the
    first column is taken as the premise.
    """
    path = Path(path)
    fmt = format or path.suffix.lstrip(".").lower()
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    rows, problems = [], []
    for lineno, rec, err in _read_records(path, fmt):
        if err:
            problems.append(f"line {lineno}: {err}")
            continue
        premise, hypothesis, label = rec
        try:
            rows.append((tuple(tokenize(str(premise))), tuple(tokenize(str(hypothesis))), str(label)))
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        if label_set is not None and rows[-1][2] not in label_set:
            problems.append(f"line {lineno}: label {rows[-1][2]!r} not in {list(label_set)}")
            rows.pop()
    if problems:
        raise DatasetError(f"{path}: malformed records:\n  " + "\n  ".join(problems))
    if not rows:
        raise DatasetError(f"{path}: no valid records")
    labels = tuple(label_set) if label_set is not None else tuple(sorted({r[2] for r in rows}))
    index = {name: i for i, name in enumerate(labels)}
    return Dataset(tuple(Instance(p, h, index[y]) for p, h, y in rows), labels)


def save_jsonl(dataset: Dataset, path) -> None:
    """Write ``dataset`` as JSONL with space-joined tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset:
            rec = {
                "premise": " ".join(inst.premise),
                "hypothesis": " ".join(inst.hypothesis),
                "label": dataset.label_set[inst.label],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection with reserved ids.

    Ids 0, 1, 2 are PAD, UNK, EOS; ids ``3 .. 3+|Y|-1`` are the
    label-specific BOS symbols; regular tokens follow.
    """

    tokens: tuple[str, ...]
    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            index[tok] = i
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_tokens(cls, regular: Iterable[str], labels: Sequence[str]) -> Vocabulary:
        reserved = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN] + [bos_token(y) for y in labels]
        return cls(tuple(reserved) + tuple(regular), tuple(labels))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def num_reserved(self) -> int:
        return FIRST_BOS + len(self.labels)

    def bos(self, label: int) -> int:
        if not 0 <= label < len(self.labels):
            raise ValueError(f"label id {label} outside [0, {len(self.labels)})")
        return FIRST_BOS + label

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self._index.get(t, UNK) for t in tokens]


def bos_token(label: str) -> str:
    return f"<bos:{label}>"


def build_vocab(dataset: Dataset, min_freq: int = 1) -> Vocabulary:
    """Vocabulary of premise and hypothesis tokens seen at least ``min_freq`` times.

    Ordered by descending frequency, then lexicographically.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    for inst in dataset:
        counts.update(inst.premise)
        counts.update(inst.hypothesis)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(kept, dataset.label_set)


@dataclass(frozen=True)
class ExtendedVocab:
    """A base vocabulary plus the out-of-vocabulary tokens of one premise."""

    base: Vocabulary
    extra: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.base) + len(self.extra)

    def id(self, token: str) -> int:
        """Id in the extended space; tokens absent from both map to UNK."""
        if token in self.base:
            return self.base.id(token)
        try:
            return len(self.base) + self.extra.index(token)
        except ValueError:
            return UNK

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def token(self, idx: int) -> str:
        n = len(self.base)
        return self.base.token(idx) if idx < n else self.extra[idx - n]

    def input_id(self, idx: int) -> int:
        """Id to embed when ``idx`` is fed back to the decoder (extras embed as UNK)."""
        return idx if idx < len(self.base) else UNK


def extend_for_pair(vocab: Vocabulary, premise: Sequence[str]) -> ExtendedVocab:
    extra = []
    seen = set()
    for tok in premise:
        if tok not in vocab and tok not in seen:
            seen.add(tok)
            extra.append(tok)
    return ExtendedVocab(vocab, tuple(extra))


class Embeddings(NamedTuple):
    vectors: np.ndarray  # (|vocab|, dim)
    found: np.ndarray  # bool mask of rows read from the file

    @property
    def matched(self) -> int:
        return int(self.found.sum())


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> Embeddings:
    """Read GloVe-style text vectors (``word v1 ... v_dim`` per line).

    Rows of vocabulary tokens found in the file are copied; the remaining
    rows follow the model's uniform initialisation for the embedding table.
    """
    from .model import glorot_uniform

    rng = np.random.default_rng(seed)
    vectors = glorot_uniform(rng, (len(vocab), dim))
    found = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != dim + 1:
                raise DatasetError(f"{path}: line {lineno}: expected {dim} values, got {len(parts) - 1}")
            word = parts[0]
            if word not in vocab:
                continue
            try:
                row = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise DatasetError(f"{path}: line {lineno}: non-numeric value") from None
            idx = vocab.id(word)
            if idx >= vocab.num_reserved:
                vectors[idx] = row
                found[idx] = True
    return Embeddings(vectors, found)
