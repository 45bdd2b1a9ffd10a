"""Command-line workflows: train, evaluate, generate, perturb, experiment, gradcheck.

Every subcommand accepts ``--config FILE`` (see :mod:`gennli.config` for
the schema). Flags given on the command line override values read from
the file. All randomness is derived from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, Settings, load_settings
from .data import DatasetError, build_vocab, load_dataset, load_embeddings, save_jsonl, tokenize
from .gradcheck import check_reference_model
from .harness import ExperimentError, Identity, run_experiment
from .metrics import mcc
from .model import generate_greedy, init_params, load_checkpoint, save_checkpoint
from .objectives import LossKind
from .trainer import TrainingError, evaluate, train

GRADCHECK_TOLERANCE = 1e-4

# flag dest -> settings key, for flags that may also come from a config file
_SETTING_FLAGS = {
    "data": "train",
    "dev": "dev",
    "test": "test",
    "format": "format",
    "embeddings": "embeddings",
    "seed": "seed",
    "loss": "loss",
    "gen_epochs": "gen_epochs",
    "ft_epochs": "ft_epochs",
    "optimizer": "optimizer",
    "lr": "lr",
    "batch_size": "batch_size",
    "direction": "direction",
    "selection": "selection",
    "d_w": "d_w",
    "d": "d",
    "d_y": "d_y",
    "min_freq": "min_freq",
    "subsample_k": "subsample_k",
    "noise": "noise",
    "imbalance_label": "imbalance_label",
    "keep_fraction": "keep_fraction",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--data", help="input dataset (training data for train/experiment)")
    p.add_argument("--dev", help="dev dataset for model selection")
    p.add_argument("--test", help="test dataset")
    p.add_argument("--format", choices=("jsonl", "tsv"), help="dataset format (default: from suffix)")
    p.add_argument("--embeddings", help="pretrained word vectors")
    p.add_argument("--checkpoint", help="model checkpoint (.npz)")
    p.add_argument("--out", help="output file")
    p.add_argument("--seed", type=int, help="the single source of randomness")
    p.add_argument("--loss", choices=[k.value for k in LossKind], help="fine-tuning loss")
    p.add_argument("--gen-epochs", type=int)
    p.add_argument("--ft-epochs", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--direction", choices=("forward", "reverse"))
    p.add_argument("--selection", choices=("all", "finetune"), help="epochs eligible for dev selection")
    p.add_argument("--d-w", type=int, help="word embedding size")
    p.add_argument("--d", type=int, help="encoder/decoder state size")
    p.add_argument("--d-y", type=int, help="label embedding size")
    p.add_argument("--min-freq", type=int)
    p.add_argument("--subsample-k", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--imbalance-label")
    p.add_argument("--keep-fraction", type=float)
    p.add_argument("--label", help="label to condition generation on")
    p.add_argument("--premise", help="premise text for generation")
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gennli", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common()
    helps = {
        "train": "train a model; writes --checkpoint and a JSONL report (--out)",
        "evaluate": "accuracy and MCC of --checkpoint on --data",
        "generate": "greedy hypothesis for --premise under --label",
        "perturb": "write a perturbed copy of --data to --out",
        "experiment": "multi-seed perturb/train/evaluate run; prints the report",
        "gradcheck": "finite-difference check of the reference model",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _settings(args) -> Settings:
    base = load_settings(args.config) if args.config else Settings()
    overrides = {key: getattr(args, dest) for dest, key in _SETTING_FLAGS.items()}
    return base.with_overrides(**overrides)


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def cmd_train(args, s: Settings) -> None:
    checkpoint = Path(_require(args.checkpoint, "--checkpoint"))
    dataset = load_dataset(_require(s.train, "--data (or 'train' in --config)"), s.format)
    dev = load_dataset(s.dev, s.format, dataset.label_set) if s.dev else None
    dataset = s.perturbation().apply(dataset, s.seed)
    vocab = build_vocab(dataset, s.min_freq)
    pretrained = load_embeddings(s.embeddings, vocab, s.d_w, s.seed) if s.embeddings else None
    params = init_params(vocab, s.d_w, s.d, s.d_y, seed=s.seed, pretrained=pretrained)
    model, report = train(dataset, dev, params, s.train_config())
    save_checkpoint(model, checkpoint)
    report_path = Path(args.out) if args.out else checkpoint.with_suffix(".report.jsonl")
    report.save(report_path)
    print(f"best epoch {report.best_epoch}; dev accuracy {report.best_dev_accuracy}")
    print(f"checkpoint: {checkpoint}\nreport: {report_path}")


def cmd_evaluate(args, s: Settings) -> None:
    params = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    path = _require(s.test or s.train, "--data or --test")
    dataset = load_dataset(path, s.format, params.labels)
    acc, cm = evaluate(dataset, params, s.direction)
    result = {"accuracy": acc, "mcc": mcc(cm), "confusion": cm.counts.tolist(), "labels": list(params.labels)}
    text = json.dumps(result)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


def cmd_generate(args, s: Settings) -> None:
    params = load_checkpoint(_require(args.checkpoint, "--checkpoint"))
    label = _require(args.label, "--label")
    if label not in params.labels:
        raise ConfigError(f"unknown label {label!r}; the model knows {list(params.labels)}")
    premise = tokenize(_require(args.premise, "--premise"))
    tokens = generate_greedy(premise, params.labels.index(label), params, args.max_len)
    print(" ".join(tokens))


def cmd_perturb(args, s: Settings) -> None:
    out = _require(args.out, "--out")
    dataset = load_dataset(_require(s.train, "--data"), s.format)
    perturbation = s.perturbation()
    if isinstance(perturbation, Identity):
        raise ConfigError("perturb needs one of --subsample-k, --noise, --imbalance-label")
    save_jsonl(perturbation.apply(dataset, s.seed), out)
    print(f"{perturbation.describe()} seed={s.seed}: wrote {out}")


def cmd_experiment(args, s: Settings) -> None:
    if args.seed is not None:
        s = s.with_overrides(seeds=(args.seed,))
    report = run_experiment(s.experiment_config())
    text = report.to_text()
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.write_text(report.to_csv() if out.suffix == ".csv" else text)


def cmd_gradcheck(args, s: Settings) -> int:
    errors = check_reference_model(seed=s.seed)
    for name, err in errors.items():
        print(f"{name:20s} {err:.3e}")
    worst = max(errors.values())
    ok = worst < GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "generate": cmd_generate,
    "perturb": cmd_perturb,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        status = COMMANDS[args.command](args, _settings(args))
    except (ConfigError, DatasetError, ExperimentError, TrainingError, OSError, ValueError) as exc:
        print(f"gennli {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
