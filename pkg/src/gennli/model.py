"""Attentional encoder-decoder with label conditioning and a copy gate.

The model scores a hypothesis given a premise and a label. A bidirectional
LSTM reads the premise; an LSTM decoder started from the label's BOS symbol
reads the hypothesis under teacher forcing. At each step the next-token
distribution over the pair's extended vocabulary is

    P(w) = (1 - p_copy) * p_vocab(w) * [w in base] + p_copy * sum_{n: x_n = w} alpha_n

where ``alpha`` are the dot-product attention weights over premise
positions and ``p_copy`` is a sigmoid gate over ``[h_t; ctx_t; v_y]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, softmax as _np_softmax

from . import autodiff as ad
from .data import EOS, PAD, UNK, Embeddings, ExtendedVocab, Instance, Vocabulary, extend_for_pair

PROB_FLOOR = 1e-12

PARAM_NAMES = (
    "word_embeddings",
    "label_embeddings",
    "encoder_fwd.W",
    "encoder_fwd.b",
    "encoder_bwd.W",
    "encoder_bwd.b",
    "decoder.W",
    "decoder.b",
    "output.V",
    "output.b",
    "output.V_out",
    "output.b_out",
    "copy.w",
    "copy.b",
)


@dataclass(frozen=True)
class Dims:
    word: int = 300
    hidden: int = 300
    label: int = 100


class ModelParams:
    """All learnable tensors plus the vocabulary they index into."""

    def __init__(self, vocab: Vocabulary, dims: Dims, tensors: dict[str, ad.Parameter]):
        missing = set(PARAM_NAMES) - set(tensors)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.vocab = vocab
        self.dims = dims
        self.tensors = {name: tensors[name] for name in PARAM_NAMES}
        self._check_shapes()

    def _check_shapes(self) -> None:
        V, Y = len(self.vocab), len(self.vocab.labels)
        dw, d, dy = self.dims.word, self.dims.hidden, self.dims.label
        half = d // 2
        expected = {
            "word_embeddings": (V, dw),
            "label_embeddings": (Y, dy),
            "encoder_fwd.W": (dw + half, 4 * half),
            "encoder_fwd.b": (4 * half,),
            "encoder_bwd.W": (dw + half, 4 * half),
            "encoder_bwd.b": (4 * half,),
            "decoder.W": (dw + d, 4 * d),
            "decoder.b": (4 * d,),
            "output.V": (2 * d + dy, d),
            "output.b": (d,),
            "output.V_out": (d, V),
            "output.b_out": (V,),
            "copy.w": (2 * d + dy,),
            "copy.b": (1,),
        }
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ad.ShapeError(f"{name}: expected shape {shape}, got {self.tensors[name].shape}")

    def __getitem__(self, name: str) -> ad.Parameter:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    @property
    def labels(self) -> tuple[str, ...]:
        return self.vocab.labels

    def copy(self) -> ModelParams:
        return ModelParams(
            self.vocab, self.dims, {n: ad.Parameter(p.data.copy(), n) for n, p in self.tensors.items()}
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.tensors.items():
            p.assign(np.asarray(state[n], dtype=np.float64))

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def init_params(
    vocab: Vocabulary,
    d_w: int = 300,
    d: int = 300,
    d_y: int = 100,
    seed: int = 0,
    pretrained: Embeddings | None = None,
) -> ModelParams:
    """Fresh parameters: matrices uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.

    ``d`` is the decoder hidden size; each encoder direction gets ``d/2`` so
    that concatenated encoder states can be dotted with decoder states.
    """
    if d % 2:
        raise ValueError(f"hidden size must be even to split across encoder directions, got {d}")
    if min(d_w, d, d_y) <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    V, Y, half = len(vocab), len(vocab.labels), d // 2
    arrays = {
        "word_embeddings": glorot_uniform(rng, (V, d_w)),
        "label_embeddings": glorot_uniform(rng, (Y, d_y)),
        "encoder_fwd.W": glorot_uniform(rng, (d_w + half, 4 * half)),
        "encoder_fwd.b": np.zeros(4 * half),
        "encoder_bwd.W": glorot_uniform(rng, (d_w + half, 4 * half)),
        "encoder_bwd.b": np.zeros(4 * half),
        "decoder.W": glorot_uniform(rng, (d_w + d, 4 * d)),
        "decoder.b": np.zeros(4 * d),
        "output.V": glorot_uniform(rng, (2 * d + d_y, d)),
        "output.b": np.zeros(d),
        "output.V_out": glorot_uniform(rng, (d, V)),
        "output.b_out": np.zeros(V),
        "copy.w": glorot_uniform(rng, (2 * d + d_y,)),
        "copy.b": np.zeros(1),
    }
    if pretrained is not None:
        if pretrained.vectors.shape != (V, d_w):
            raise ad.ShapeError(f"pretrained vectors {pretrained.vectors.shape} != ({V}, {d_w})")
        emb = arrays["word_embeddings"]
        emb[pretrained.found] = pretrained.vectors[pretrained.found]
    tensors = {name: ad.Parameter(a, name) for name, a in arrays.items()}
    return ModelParams(vocab, Dims(d_w, d, d_y), tensors)


# ---------------------------------------------------------------------------
# batched teacher-forced scoring (differentiable)


@dataclass
class PairBatch:
    """Padded integer arrays for a batch of (source, target, label) rows.

    Encoder arrays have one row per distinct source (``B``); decoder arrays
    have one row per (source, label) combination (``R``), pointing back to
    their source through ``row_src``.
    """

    src_ids: np.ndarray  # (B, N) base ids, OOV -> UNK
    src_rev_ids: np.ndarray  # (B, N) src_ids reversed within each length
    unreverse: np.ndarray  # (B, N) flat index into (B*N) undoing the reversal
    src_ext: np.ndarray  # (B, N) extended ids
    src_mask: np.ndarray  # (B, N) bool
    row_src: np.ndarray  # (R,)
    labels: np.ndarray  # (R,)
    dec_in: np.ndarray  # (R, T+1) base ids starting with BOS_y
    dec_out: np.ndarray  # (R, T+1) extended ids ending with EOS
    dec_mask: np.ndarray  # (R, T+1) bool
    base_size: int


def make_batch(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    labels: Sequence[Sequence[int]],
    vocab: Vocabulary,
) -> PairBatch:
    """Pad ``pairs`` of (source tokens, target tokens); ``labels[i]`` lists the labels to score for pair ``i``."""
    B = len(pairs)
    if B == 0 or len(labels) != B:
        raise ValueError("need one label list per pair and at least one pair")
    N = max(len(s) for s, _ in pairs)
    T1 = max(len(t) for _, t in pairs) + 1
    src_ids = np.full((B, N), PAD, dtype=np.intp)
    src_rev = np.full((B, N), PAD, dtype=np.intp)
    src_ext = np.full((B, N), PAD, dtype=np.intp)
    src_mask = np.zeros((B, N), dtype=bool)
    unreverse = np.tile(np.arange(N), (B, 1)) + (np.arange(B) * N)[:, None]
    rows_src, rows_lab, rows_in, rows_out = [], [], [], []
    for b, ((src, tgt), labs) in enumerate(zip(pairs, labels)):
        if not src or not tgt:
            raise ValueError("source and target must be non-empty")
        n = len(src)
        ext = extend_for_pair(vocab, src)
        ids = vocab.ids(src)
        src_ids[b, :n] = ids
        src_rev[b, :n] = ids[::-1]
        src_ext[b, :n] = ext.ids(src)
        src_mask[b, :n] = True
        unreverse[b, :n] = b * N + np.arange(n)[::-1]
        inp = vocab.ids(tgt)
        out = ext.ids(tgt) + [EOS]
        for y in labs:
            rows_src.append(b)
            rows_lab.append(y)
            rows_in.append([vocab.bos(y)] + inp)
            rows_out.append(out)
    R = len(rows_src)
    dec_in = np.full((R, T1), PAD, dtype=np.intp)
    dec_out = np.full((R, T1), PAD, dtype=np.intp)
    dec_mask = np.zeros((R, T1), dtype=bool)
    for r, (i, o) in enumerate(zip(rows_in, rows_out)):
        dec_in[r, : len(i)] = i
        dec_out[r, : len(o)] = o
        dec_mask[r, : len(o)] = True
    return PairBatch(
        src_ids, src_rev, unreverse, src_ext, src_mask,
        np.array(rows_src, dtype=np.intp), np.array(rows_lab, dtype=np.intp),
        dec_in, dec_out, dec_mask, len(vocab),
    )  # fmt: skip


def _run_lstm(emb: ad.Tensor, ids: np.ndarray, W: ad.Tensor, b: ad.Tensor, size: int) -> ad.Tensor:
    """Run an LSTM from zero state over ``ids`` (B, T); returns states (B, T, size)."""
    B, T = ids.shape
    h = ad.Tensor(np.zeros((B, size)))
    c = ad.Tensor(np.zeros((B, size)))
    states = []
    for t in range(T):
        h, c = ad.lstm_cell(ad.lookup(emb, ids[:, t]), h, c, W, b)
        states.append(h)
    return ad.stack(states, axis=1)


def encoder_states(batch: PairBatch, params: ModelParams) -> ad.Tensor:
    """Concatenated forward/backward encoder states, shape (B, N, d)."""
    emb = params["word_embeddings"]
    half = params.dims.hidden // 2
    B, N = batch.src_ids.shape
    fwd = _run_lstm(emb, batch.src_ids, params["encoder_fwd.W"], params["encoder_fwd.b"], half)
    bwd_rev = _run_lstm(emb, batch.src_rev_ids, params["encoder_bwd.W"], params["encoder_bwd.b"], half)
    bwd = ad.lookup(ad.reshape(bwd_rev, (B * N, half)), batch.unreverse)
    return ad.concat([fwd, bwd], axis=-1)


def score_batch(batch: PairBatch, params: ModelParams) -> ad.Tensor:
    """Teacher-forced log-probability of each row's target (EOS included), shape (R,)."""
    d = params.dims.hidden
    R, T1 = batch.dec_in.shape
    S = ad.lookup(encoder_states(batch, params), batch.row_src)  # (R, N, d)
    src_ext = batch.src_ext[batch.row_src]
    src_mask = batch.src_mask[batch.row_src]

    H = _run_lstm(params["word_embeddings"], batch.dec_in, params["decoder.W"], params["decoder.b"], d)
    alpha = ad.softmax(ad.matmul(H, ad.swapaxes(S, 1, 2)), axis=-1, mask=src_mask[:, None, :])
    ctx = ad.matmul(alpha, S)
    v_y = ad.lookup(params["label_embeddings"], batch.labels)
    v_y = ad.broadcast_to(ad.reshape(v_y, (R, 1, params.dims.label)), (R, T1, params.dims.label))
    feat = ad.concat([H, ctx, v_y], axis=-1)

    hidden = ad.add(ad.matmul(feat, params["output.V"]), params["output.b"])
    p_vocab = ad.softmax(ad.add(ad.matmul(hidden, params["output.V_out"]), params["output.b_out"]), axis=-1)
    p_copy = ad.sigmoid(ad.add(ad.matmul(feat, params["copy.w"]), params["copy.b"]))  # (R, T1)

    target = batch.dec_out
    in_base = target < batch.base_size
    gen = ad.reshape(ad.gather(p_vocab, np.where(in_base, target, UNK)[..., None], axis=-1), (R, T1))
    gen = ad.mul(gen, in_base.astype(np.float64))
    match = (src_ext[:, None, :] == target[:, :, None]) & src_mask[:, None, :]
    copy = ad.masked_sum(alpha, match, axis=-1)

    prob = ad.add(ad.mul(ad.sub(1.0, p_copy), gen), ad.mul(p_copy, copy))
    return ad.masked_sum(ad.log(prob, floor=PROB_FLOOR), batch.dec_mask, axis=-1)


def _pairs(instances: Sequence[Instance], direction: str):
    if direction == "forward":
        return [(i.premise, i.hypothesis) for i in instances]
    if direction == "reverse":
        return [(i.hypothesis, i.premise) for i in instances]
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def gold_scores(instances: Sequence[Instance], params: ModelParams, direction: str = "forward") -> ad.Tensor:
    """Log-probability under the gold label for each instance, shape (B,)."""
    batch = make_batch(_pairs(instances, direction), [[i.label] for i in instances], params.vocab)
    return score_batch(batch, params)


def all_label_scores(instances: Sequence[Instance], params: ModelParams, direction: str = "forward") -> ad.Tensor:
    """Log-probability under every label, shape (B, |Y|), columns in label-set order."""
    Y = len(params.labels)
    batch = make_batch(_pairs(instances, direction), [range(Y)] * len(instances), params.vocab)
    return ad.reshape(score_batch(batch, params), (len(instances), Y))


def score_hypothesis(premise: Sequence[str], hypothesis: Sequence[str], label: int, params: ModelParams) -> float:
    """``log p(hypothesis + EOS | premise, label)`` under teacher forcing."""
    if not 0 <= label < len(params.labels):
        raise ValueError(f"label id {label} outside [0, {len(params.labels)})")
    batch = make_batch([(premise, hypothesis)], [[label]], params.vocab)
    return score_batch(batch, params).item()


def score_reverse(premise: Sequence[str], hypothesis: Sequence[str], label: int, params: ModelParams) -> float:
    """``log p(premise + EOS | hypothesis, label)``: the roles of the two sentences swapped."""
    return score_hypothesis(hypothesis, premise, label, params)


def predict(
    premise: Sequence[str], hypothesis: Sequence[str], params: ModelParams, direction: str = "forward"
) -> tuple[int, np.ndarray]:
    """Label with the highest score (uniform prior, ties to the lowest index) and all scores."""
    scores = all_label_scores([Instance(tuple(premise), tuple(hypothesis), 0)], params, direction).data[0]
    return int(np.argmax(scores)), scores


def predict_many(
    instances: Sequence[Instance], params: ModelParams, direction: str = "forward", batch_size: int = 64
) -> np.ndarray:
    preds = []
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        preds.append(np.argmax(all_label_scores(chunk, params, direction).data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


# ---------------------------------------------------------------------------
# step-wise decoding (inference only, plain numpy)


@dataclass
class EncoderStates:
    states: np.ndarray  # (N, d): s_n = [fwd_n; bwd_n]
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DecoderStep:
    hidden: np.ndarray
    context: np.ndarray
    attention: np.ndarray
    p_copy: float
    p_vocab: np.ndarray  # over the base vocabulary
    dist: np.ndarray  # over the extended vocabulary


def encode(premise: Sequence[str], params: ModelParams) -> EncoderStates:
    if not premise:
        raise ValueError("cannot encode an empty premise")
    batch = make_batch([(premise, premise[:1])], [[0]], params.vocab)
    return EncoderStates(encoder_states(batch, params).data[0], tuple(premise))


def decode_step(
    prev_id: int,
    state: tuple[np.ndarray, np.ndarray],
    enc: EncoderStates,
    label: int,
    ext: ExtendedVocab,
    params: ModelParams,
) -> tuple[DecoderStep, tuple[np.ndarray, np.ndarray]]:
    """Advance the decoder one token and return the next-token distribution.

    ``prev_id`` lives in the extended space; extended ids embed as UNK.
    """
    if not 0 <= label < len(params.labels):
        raise ValueError(f"label id {label} outside [0, {len(params.labels)})")
    p = {n: t.data for n, t in params.tensors.items()}
    d = params.dims.hidden
    x = p["word_embeddings"][ext.input_id(prev_id)]
    h_prev, c_prev = state
    z = np.concatenate([x, h_prev]) @ p["decoder.W"] + p["decoder.b"]
    i, f, o = expit(z[:d]), expit(z[d : 2 * d]), expit(z[2 * d : 3 * d])
    c = f * c_prev + i * np.tanh(z[3 * d :])
    h = o * np.tanh(c)

    alpha = _np_softmax(enc.states @ h)
    ctx = alpha @ enc.states
    feat = np.concatenate([h, ctx, p["label_embeddings"][label]])
    p_vocab = _np_softmax((feat @ p["output.V"] + p["output.b"]) @ p["output.V_out"] + p["output.b_out"])
    p_copy = float(expit(feat @ p["copy.w"] + p["copy.b"][0]))

    dist = np.zeros(len(ext))
    dist[: len(ext.base)] = (1.0 - p_copy) * p_vocab
    np.add.at(dist, ext.ids(enc.tokens), p_copy * alpha)
    return DecoderStep(h, ctx, alpha, p_copy, p_vocab, dist), (h, c)


def initial_state(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    d = params.dims.hidden
    return np.zeros(d), np.zeros(d)


def score_stepwise(premise: Sequence[str], hypothesis: Sequence[str], label: int, params: ModelParams) -> float:
    """Same quantity as :func:`score_hypothesis`, computed one decode step at a time."""
    enc = encode(premise, params)
    ext = extend_for_pair(params.vocab, premise)
    state = initial_state(params)
    prev = params.vocab.bos(label)
    total = 0.0
    for target in ext.ids(hypothesis) + [EOS]:
        step, state = decode_step(prev, state, enc, label, ext, params)
        total += np.log(max(step.dist[target], PROB_FLOOR))
        prev = target
    return float(total)


def generate_greedy(premise: Sequence[str], label: int, params: ModelParams, max_len: int = 30) -> list[str]:
    """Greedy decoding from ``BOS_label``; stops at EOS (not emitted) or ``max_len`` tokens.

    Copied out-of-vocabulary ids are rendered as the premise's surface token.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    enc = encode(premise, params)
    ext = extend_for_pair(params.vocab, premise)
    state = initial_state(params)
    prev = params.vocab.bos(label)
    out: list[str] = []
    while len(out) < max_len:
        step, state = decode_step(prev, state, enc, label, ext, params)
        prev = int(np.argmax(step.dist))
        if prev == EOS:
            break
        out.append(ext.token(prev))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    """Write all tensors plus vocabulary, labels and sizes to one ``.npz`` archive."""
    meta = {
        "format": "gennli-checkpoint/1",
        "tokens": list(params.vocab.tokens),
        "labels": list(params.vocab.labels),
        "dims": {"word": params.dims.word, "hidden": params.dims.hidden, "label": params.dims.label},
    }
    arrays = {name: p.data for name, p in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format") != "gennli-checkpoint/1":
            raise ValueError(f"{path}: not a checkpoint (format={meta.get('format')!r})")
        tensors = {name: ad.Parameter(archive[name], name) for name in PARAM_NAMES}
    vocab = Vocabulary(tuple(meta["tokens"]), tuple(meta["labels"]))
    return ModelParams(vocab, Dims(**meta["dims"]), tensors)
