# %% [markdown]
# # Generative NLI on a toy entailment task
#
# The toy task: a hypothesis is *entailed* when it is a contiguous span of
# the premise. Non-entailed hypotheses have one token swapped for a word
# that never appears in any premise. A generative classifier scores each
# label by how well it can regenerate the hypothesis from the premise under
# that label, so copying from the premise should pay off for "entailment".
#
# Run top to bottom with `python3 notebooks/01_synthetic_walkthrough.py`
# (about a minute on a laptop CPU), or open it as a percent-format notebook.

# %%
import numpy as np

from gennli import (
    TrainConfig,
    build_vocab,
    evaluate,
    generate_greedy,
    init_params,
    mcc,
    train,
)
from gennli.data import extend_for_pair
from gennli.model import decode_step, encode, initial_state
from gennli.synthetic import contiguous_subsequence_task

train_set, dev_set, test_set = contiguous_subsequence_task(n_train=200, n_dev=100, n_test=100, seed=0)
print(len(train_set), "train pairs; labels", train_set.label_set)
for inst in train_set[:4]:
    print(train_set.label_set[inst.label], "|", " ".join(inst.premise), "=>", " ".join(inst.hypothesis))

# %% [markdown]
# ## Training
#
# A few generative epochs teach the decoder to copy. Then a short
# discriminative phase pushes the gold label's score above the others.
# The dev set picks the best epoch.

# %%
vocab = build_vocab(train_set)
params = init_params(vocab, d_w=16, d=32, d_y=8, seed=0)
print(f"{params.num_parameters():,} parameters")
config = TrainConfig(gen_epochs=4, ft_epochs=2, ft_loss="infinilog", batch_size=4, seed=0)
model, report = train(train_set, dev_set, params, config)
for rec in report.records:
    print(f"epoch {rec.epoch:2d} {rec.phase:14s} loss {rec.loss:8.3f} dev acc {rec.dev_accuracy:.2f}")
print("selected epoch", report.best_epoch)

# %%
acc, cm = evaluate(test_set, model)
print(f"test accuracy {acc:.3f}, MCC {mcc(cm):.3f}")
print("confusion (rows gold, cols predicted):\n", cm.counts)

# %% [markdown]
# ## Looking inside one decoding step
#
# The copy gate `p_copy` mixes the vocabulary softmax with the attention
# over premise positions. After training, the first step under the
# entailment label should lean on copying.

# %%
premise = test_set[0].premise
ext = extend_for_pair(vocab, premise)
enc = encode(premise, model)
label = model.labels.index("entailment")
step, _ = decode_step(vocab.bos(label), initial_state(model), enc, label, ext, model)
print("premise:  ", " ".join(premise))
print("attention:", np.array2string(step.attention, precision=2))
print(f"copy gate: {step.p_copy:.3f}; top token {ext.token(int(np.argmax(step.dist)))!r}")

# %% [markdown]
# ## Greedy generation under each label

# %%
for inst in test_set[:3]:
    print("premise:", " ".join(inst.premise))
    for y, name in enumerate(model.labels):
        print(f"  {name:15s}", " ".join(generate_greedy(inst.premise, y, model, max_len=12)))
