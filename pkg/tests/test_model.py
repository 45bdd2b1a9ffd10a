import math

import numpy as np
import pytest

from gennli import autodiff as ad
from gennli.data import EOS, UNK, Embeddings, Instance, Vocabulary, extend_for_pair
from gennli.model import (
    PROB_FLOOR,
    ModelParams,
    all_label_scores,
    decode_step,
    encode,
    generate_greedy,
    gold_scores,
    init_params,
    initial_state,
    load_checkpoint,
    predict,
    save_checkpoint,
    score_hypothesis,
    score_reverse,
    score_stepwise,
)

LABELS = ("entailment", "neutral", "contradiction")
VOCAB = Vocabulary.from_tokens([f"t{i}" for i in range(14)], LABELS)


def _params(seed=0, d_w=6, d=8, d_y=4, vocab=VOCAB, perturb_biases=True):
    """Small model; biases are randomised so that every parameter matters."""
    params = init_params(vocab, d_w=d_w, d=d, d_y=d_y, seed=seed)
    if perturb_biases:
        rng = np.random.default_rng(seed + 100)
        for name in ("encoder_fwd.b", "encoder_bwd.b", "decoder.b", "output.b", "output.b_out", "copy.b"):
            params[name].assign(rng.normal(scale=0.3, size=params[name].shape))
    return params


def _with(params, **arrays):
    out = params.copy()
    for name, value in arrays.items():
        out[name.replace("__", ".")].assign(value)
    return out


# ---------------------------------------------------------------------------
# independent scalar-loop oracle


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _matvec_t(M, v):
    """v @ M for nested lists."""
    return [sum(v[k] * M[k][j] for k in range(len(v))) for j in range(len(M[0]))]


def _lstm(x, h, c, W, b):
    d = len(h)
    z = [zj + bj for zj, bj in zip(_matvec_t(W, list(x) + list(h)), b)]
    c2 = [_sig(z[d + j]) * c[j] + _sig(z[j]) * math.tanh(z[3 * d + j]) for j in range(d)]
    h2 = [_sig(z[2 * d + j]) * math.tanh(c2[j]) for j in range(d)]
    return h2, c2


def _softmax(v):
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


def oracle_encoder(premise, params):
    P = {n: p.data.tolist() for n, p in params.tensors.items()}
    half = params.dims.hidden // 2
    xs = [P["word_embeddings"][params.vocab.id(t)] for t in premise]
    fwd, h, c = [], [0.0] * half, [0.0] * half
    for x in xs:
        h, c = _lstm(x, h, c, P["encoder_fwd.W"], P["encoder_fwd.b"])
        fwd.append(h)
    bwd, h, c = [None] * len(xs), [0.0] * half, [0.0] * half
    for n in reversed(range(len(xs))):
        h, c = _lstm(xs[n], h, c, P["encoder_bwd.W"], P["encoder_bwd.b"])
        bwd[n] = h
    return [f + b for f, b in zip(fwd, bwd)]


def oracle_score(premise, hypothesis, label, params):
    """log p(hypothesis + EOS | premise, label), one token at a time."""
    P = {n: p.data.tolist() for n, p in params.tensors.items()}
    vocab = params.vocab
    V, d = len(vocab), params.dims.hidden
    S = oracle_encoder(premise, params)
    extra = []
    for t in premise:
        if t not in vocab and t not in extra:
            extra.append(t)

    def ext_id(t):
        if t in vocab:
            return vocab.id(t)
        return V + extra.index(t) if t in extra else UNK

    premise_ids = [ext_id(t) for t in premise]
    v_y = P["label_embeddings"][label]
    h, c = [0.0] * d, [0.0] * d
    prev = vocab.bos(label)
    total = 0.0
    for target in [ext_id(t) for t in hypothesis] + [EOS]:
        x = P["word_embeddings"][prev if prev < V else UNK]
        h, c = _lstm(x, h, c, P["decoder.W"], P["decoder.b"])
        alpha = _softmax([sum(a * b for a, b in zip(s, h)) for s in S])
        ctx = [sum(alpha[n] * S[n][j] for n in range(len(S))) for j in range(d)]
        feat = h + ctx + v_y
        hidden = [a + b for a, b in zip(_matvec_t(P["output.V"], feat), P["output.b"])]
        p_vocab = _softmax([a + b for a, b in zip(_matvec_t(P["output.V_out"], hidden), P["output.b_out"])])
        g = _sig(sum(a * b for a, b in zip(feat, P["copy.w"])) + P["copy.b"][0])
        prob = (1 - g) * p_vocab[target] if target < V else 0.0
        prob += g * sum(a for a, i in zip(alpha, premise_ids) if i == target)
        total += math.log(max(prob, PROB_FLOOR))
        prev = target
    return total


PREMISE = ("t3", "oovword", "t7", "t1")
HYPOTHESIS = ("oovword", "t7", "unseen", "t2")


class TestScalarOracle:
    def test_encoder_states(self):
        params = _params(seed=3)
        np.testing.assert_allclose(
            encode(PREMISE, params).states, oracle_encoder(PREMISE, params), rtol=1e-12, atol=1e-14
        )

    @pytest.mark.parametrize("label", range(3))
    def test_score(self, label):
        params = _params(seed=4)
        ref = oracle_score(PREMISE, HYPOTHESIS, label, params)
        assert score_hypothesis(PREMISE, HYPOTHESIS, label, params) == pytest.approx(ref, rel=1e-12)
        assert score_stepwise(PREMISE, HYPOTHESIS, label, params) == pytest.approx(ref, rel=1e-12)

    def test_reverse_score(self):
        params = _params(seed=5)
        ref = oracle_score(HYPOTHESIS, PREMISE, 1, params)
        assert score_reverse(PREMISE, HYPOTHESIS, 1, params) == pytest.approx(ref, rel=1e-12)


# ---------------------------------------------------------------------------
# parameters


class TestInit:
    def test_same_seed_is_bit_identical(self):
        a, b = init_params(VOCAB, 6, 8, 4, seed=9), init_params(VOCAB, 6, 8, 4, seed=9)
        for name in a.tensors:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_hidden_size_split_across_directions(self):
        params = init_params(VOCAB, 6, 8, 4)
        assert params["encoder_fwd.W"].shape == (6 + 4, 16)
        assert encode(("t1", "t2"), params).states.shape == (2, 8)

    def test_odd_hidden_size_rejected(self):
        with pytest.raises(ValueError):
            init_params(VOCAB, 6, 7, 4)

    def test_pretrained_rows_copied_exactly(self):
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(len(VOCAB), 6))
        found = np.zeros(len(VOCAB), bool)
        found[VOCAB.id("t5")] = True
        params = init_params(VOCAB, 6, 8, 4, pretrained=Embeddings(vectors, found))
        np.testing.assert_array_equal(params["word_embeddings"].data[VOCAB.id("t5")], vectors[VOCAB.id("t5")])

    def test_wrong_shape_rejected(self):
        params = init_params(VOCAB, 6, 8, 4)
        tensors = dict(params.tensors)
        tensors["copy.w"] = ad.Parameter(np.zeros(3), "copy.w")
        with pytest.raises(ad.ShapeError, match="copy.w"):
            ModelParams(VOCAB, params.dims, tensors)


class TestEncoder:
    def test_single_token(self):
        params = _params()
        P = {n: p.data for n, p in params.tensors.items()}
        x = P["word_embeddings"][VOCAB.id("t4")]
        z = np.zeros(4)
        hf, _ = ad.lstm_cell(x, z, z, P["encoder_fwd.W"], P["encoder_fwd.b"])
        hb, _ = ad.lstm_cell(x, z, z, P["encoder_bwd.W"], P["encoder_bwd.b"])
        states = encode(("t4",), params).states
        assert states.shape == (1, 8)
        np.testing.assert_array_equal(states[0], np.concatenate([hf.data, hb.data]))

    def test_reversal_swaps_directions(self):
        params = _params(seed=2)
        swapped = _with(
            params,
            encoder_fwd__W=params["encoder_bwd.W"].data,
            encoder_fwd__b=params["encoder_bwd.b"].data,
            encoder_bwd__W=params["encoder_fwd.W"].data,
            encoder_bwd__b=params["encoder_fwd.b"].data,
        )
        s = encode(PREMISE, params).states
        r = encode(PREMISE[::-1], swapped).states[::-1]
        np.testing.assert_allclose(r, np.concatenate([s[:, 4:], s[:, :4]], axis=1), rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------------------------
# decoder distribution


def _first_step(params, label=0, premise=PREMISE):
    enc = encode(premise, params)
    ext = extend_for_pair(params.vocab, premise)
    step, _ = decode_step(params.vocab.bos(label), initial_state(params), enc, label, ext, params)
    return step, ext


class TestDecodeStep:
    @pytest.mark.parametrize("seed", range(10))
    def test_distribution_normalised(self, seed):
        params = _params(seed=seed)
        enc = encode(PREMISE, params)
        ext = extend_for_pair(VOCAB, PREMISE)
        state, prev = initial_state(params), VOCAB.bos(seed % 3)
        for target in ext.ids(HYPOTHESIS):
            step, state = decode_step(prev, state, enc, seed % 3, ext, params)
            assert abs(step.dist.sum() - 1.0) < 1e-6
            prev = target

    def test_mixture_rederived_from_exposed_parts(self):
        step, ext = _first_step(_params(seed=1))
        copy_dist = np.zeros(len(ext))
        for tok, a in zip(PREMISE, step.attention):
            copy_dist[ext.id(tok)] += a
        base = np.zeros(len(ext))
        base[: len(VOCAB)] = step.p_vocab
        np.testing.assert_allclose(step.dist, step.p_copy * copy_dist + (1 - step.p_copy) * base, atol=1e-9)

    def test_gate_closed_gives_vocab_distribution(self):
        params = _with(_params(), copy__b=np.array([-1e4]))
        step, ext = _first_step(params)
        assert step.p_copy == 0.0
        np.testing.assert_array_equal(step.dist[: len(VOCAB)], step.p_vocab)
        np.testing.assert_array_equal(step.dist[len(VOCAB) :], 0.0)

    def test_gate_open_supports_only_premise(self):
        params = _with(_params(), copy__b=np.array([1e4]))
        step, ext = _first_step(params)
        assert step.p_copy == 1.0
        premise_ids = set(ext.ids(PREMISE))
        support = set(np.flatnonzero(step.dist).tolist())
        assert support <= premise_ids

    def test_label_embedding_changes_distribution(self):
        params = _params()
        # same BOS row for both labels so that only v_y differs
        emb = params["word_embeddings"].data.copy()
        emb[VOCAB.bos(1)] = emb[VOCAB.bos(0)]
        params = _with(params, word_embeddings=emb)
        d0, _ = _first_step(params, label=0)
        d1, _ = _first_step(params, label=1)
        assert not np.allclose(d0.dist, d1.dist)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            _first_step(_params(), label=3)


# ---------------------------------------------------------------------------
# scores


class TestScores:
    def test_scores_are_log_probabilities(self):
        params = _params(seed=6)
        scores = all_label_scores([Instance(PREMISE, HYPOTHESIS, 0)], params).data
        assert np.all(scores <= 0)

    def test_label_permutation_symmetry(self):
        params = _params(seed=7)
        perm = (2, 0, 1)  # new label k is old label perm[k]
        vocab2 = Vocabulary(VOCAB.tokens[:3] + tuple(VOCAB.tokens[3 + p] for p in perm) + VOCAB.tokens[6:],
                            tuple(LABELS[p] for p in perm))  # fmt: skip
        emb = params["word_embeddings"].data.copy()
        emb[3:6] = emb[[3 + p for p in perm]]
        lab = params["label_embeddings"].data[list(perm)]
        tensors = {n: ad.Parameter(p.data.copy(), n) for n, p in params.tensors.items()}
        tensors["word_embeddings"] = ad.Parameter(emb, "word_embeddings")
        tensors["label_embeddings"] = ad.Parameter(lab, "label_embeddings")
        params2 = ModelParams(vocab2, params.dims, tensors)
        for k, old in enumerate(perm):
            assert score_hypothesis(PREMISE, HYPOTHESIS, k, params2) == pytest.approx(
                score_hypothesis(PREMISE, HYPOTHESIS, old, params), abs=1e-12
            )

    def test_equalised_labels_score_identically(self):
        params = _params(seed=8)
        emb = params["word_embeddings"].data.copy()
        emb[3:6] = emb[3]
        lab = np.tile(params["label_embeddings"].data[0], (3, 1))
        params = _with(params, word_embeddings=emb, label_embeddings=lab)
        scores = all_label_scores([Instance(PREMISE, HYPOTHESIS, 0)], params).data[0]
        np.testing.assert_allclose(scores, scores[0], atol=1e-9)

    def test_padding_invariance(self):
        params = _params(seed=9)
        batch = [
            Instance(PREMISE, HYPOTHESIS, 0),
            Instance(("t1",) * 9, ("t2",) * 7, 1),
            Instance(("t5", "t6"), ("t5",), 2),
        ]
        batched = gold_scores(batch, params).data
        for inst, value in zip(batch, batched):
            assert value == pytest.approx(score_hypothesis(inst.premise, inst.hypothesis, inst.label, params), abs=1e-5)

    def test_symmetric_instance_forward_equals_reverse(self):
        params = _params(seed=10)
        seq = ("t1", "t4", "t9")
        assert score_hypothesis(seq, seq, 1, params) == score_reverse(seq, seq, 1, params)

    def test_predict_single_label(self):
        vocab = Vocabulary.from_tokens(["t1"], ("only",))
        params = init_params(vocab, 4, 4, 2)
        label, scores = predict(("t1",), ("t1",), params)
        assert label == 0 and scores.shape == (1,)

    def test_predict_ties_go_to_first_label(self):
        params = _params(seed=8)
        emb = params["word_embeddings"].data.copy()
        emb[3:6] = emb[3]
        params = _with(params, word_embeddings=emb, label_embeddings=np.zeros((3, 4)))
        label, scores = predict(PREMISE, HYPOTHESIS, params)
        assert label == 0
        assert len(set(scores.tolist())) == 1

    def test_scores_are_deterministic(self):
        params = _params(seed=11)
        inst = [Instance(PREMISE, HYPOTHESIS, 0)]
        np.testing.assert_array_equal(all_label_scores(inst, params).data, all_label_scores(inst, params).data)


# ---------------------------------------------------------------------------
# generation and checkpoints


class TestGeneration:
    def test_deterministic_and_bounded(self):
        params = _params(seed=12)
        first = generate_greedy(PREMISE, 0, params, max_len=5)
        assert first == generate_greedy(PREMISE, 0, params, max_len=5)
        assert len(first) <= 5

    def test_gate_open_copies_premise_tokens(self):
        for seed in range(5):
            params = _with(_params(seed=seed), copy__b=np.array([1e4]))
            out = generate_greedy(PREMISE, seed % 3, params, max_len=10)
            assert set(out) <= set(PREMISE)

    def test_stops_at_eos(self):
        params = _params(seed=13)
        bias = np.full(len(VOCAB), -50.0)
        bias[EOS] = 50.0
        params = _with(params, output__b_out=bias, copy__b=np.array([-1e4]))
        assert generate_greedy(PREMISE, 0, params) == []

    def test_bad_max_len(self):
        with pytest.raises(ValueError):
            generate_greedy(PREMISE, 0, _params(), max_len=0)


def test_checkpoint_round_trip(tmp_path):
    params = _params(seed=14)
    save_checkpoint(params, tmp_path / "m.npz")
    loaded = load_checkpoint(tmp_path / "m.npz")
    assert loaded.vocab == params.vocab and loaded.dims == params.dims
    for name in params.tensors:
        np.testing.assert_array_equal(loaded[name].data, params[name].data)
    assert score_hypothesis(PREMISE, HYPOTHESIS, 2, loaded) == score_hypothesis(PREMISE, HYPOTHESIS, 2, params)


def test_non_checkpoint_rejected(tmp_path):
    np.savez(tmp_path / "x.npz", __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.npz")
