# %% [markdown]
# # Robustness under data perturbations
#
# The harness applies one perturbation per run (per-class subsampling,
# label noise or class imbalance) and repeats training over several seeds.
# Every random choice comes from the seed, so rerunning a cell reproduces
# its table exactly.
#
# Run with `python3 notebooks/02_perturbation_study.py` (a few minutes).

# %%
from gennli import ExperimentConfig, TrainConfig, run_experiment
from gennli.harness import Imbalance, Noise, Subsample, flip_labels
from gennli.synthetic import contiguous_subsequence_task

train_set, dev_set, test_set = contiguous_subsequence_task(n_train=200, n_dev=100, n_test=100, seed=0)

# %% [markdown]
# Label noise flips an exact count of labels: 30% of 200 is 60 pairs.

# %%
noisy = flip_labels(train_set, 0.3, seed=1)
print(sum(a.label != b.label for a, b in zip(train_set, noisy)), "labels flipped")

# %% [markdown]
# ## Same budget, three perturbations
#
# A small model and a short schedule keep this quick. The printed tables
# give per-seed accuracy and MCC, then the median over seeds.

# %%
schedule = TrainConfig(gen_epochs=3, ft_epochs=2, ft_loss="infinilog", batch_size=4)
for perturbation in (Subsample(20), Noise(0.2), Imbalance("entailment", 0.2)):
    cfg = ExperimentConfig(
        train_data=train_set, dev_data=dev_set, test_data=test_set,
        perturbation=perturbation, seeds=(0, 1, 2), train=schedule, d_w=16, d=32, d_y=8,
    )  # fmt: skip
    print(run_experiment(cfg).to_text())

# %% [markdown]
# ## Comparing fine-tuning losses on 20 pairs per class
#
# `selection="finetune"` restricts dev selection to fine-tuning epochs, so
# the comparison reflects the loss rather than the shared generative phase.

# %%
for loss in ("log", "softmax-margin", "infinilog"):
    cfg = ExperimentConfig(
        train_data=train_set, dev_data=dev_set, test_data=test_set, perturbation=Subsample(20),
        seeds=(0, 1, 2), train=TrainConfig(gen_epochs=3, ft_epochs=2, ft_loss=loss, batch_size=4, selection="finetune"),
        d_w=16, d=32, d_y=8,
    )  # fmt: skip
    print(f"{loss:15s} median accuracy {run_experiment(cfg).median_accuracy:.3f}")
