"""Command-line entry points.

Subcommands:
  preprocess           tokenize raw JSONL splits, build the vocabulary,
                       write index-encoded splits
  pretrain-embeddings  skip-gram pretraining over the encoded train split
  train                fit a model, logging one JSONL record per epoch and
                       writing the best checkpoint plus report files
  evaluate             score an encoded split with a checkpoint
  predict              rank labels for raw documents (optionally rendering
                       per-label attention figures)
  synth-gen            generate a synthetic pattern-planted corpus

Configuration is a flat key=value file (``#`` comments allowed); any key can
also be given as a command-line flag, and flags win over the file.  A
``preset`` picks the architecture shape; explicit keys override the preset.
The effective configuration is written next to the run's outputs so every
run is reproducible from its artifacts.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .embeddings import (
    load_text_embeddings,
    pretrain_skipgram,
    random_embeddings,
)
from .errors import ConfigError, DataError, NumericError
from .model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .pipeline import (
    build_vocab,
    encode_dataset,
    load_encoded_jsonl,
    load_jsonl,
    read_vocab,
    synth_corpus,
    write_encoded_jsonl,
    write_jsonl,
    write_vocab,
)
from .reports import (
    render_attention_profile,
    render_metrics_bars,
    render_training_curves,
    write_history_csv,
    write_metrics_csv,
    write_predictions_csv,
)
from .training import TrainConfig, evaluate, predict_scores, train

PRESETS: dict[str, dict] = {
    "cnn": {
        "kernel_sizes": (9,),
        "residual_blocks": 0,
        "channel_schedule": (100,),
    },
    "multicnn3": {
        "kernel_sizes": (5, 9, 15),
        "residual_blocks": 0,
        "channel_schedule": (100,),
    },
    "multicnn5": {
        "kernel_sizes": (3, 5, 9, 15, 19),
        "residual_blocks": 0,
        "channel_schedule": (100,),
    },
    "multicnn": {
        "kernel_sizes": (3, 5, 9, 15, 19, 25),
        "residual_blocks": 0,
        "channel_schedule": (100,),
    },
    "rescnn": {
        "kernel_sizes": (9,),
        "residual_blocks": 1,
        "channel_schedule": (100, 50),
    },
    "rescnn2": {
        "kernel_sizes": (9,),
        "residual_blocks": 2,
        "channel_schedule": (100, 100, 50),
    },
    "rescnn3": {
        "kernel_sizes": (9,),
        "residual_blocks": 3,
        "channel_schedule": (100, 150, 100, 50),
    },
    "multirescnn": {
        "kernel_sizes": (3, 5, 9, 15, 19, 25),
        "residual_blocks": 1,
        "channel_schedule": (100, 50),
    },
}

CONFIG_TYPES: dict[str, str] = {
    "preset": "str",
    "kernel_sizes": "ints",
    "filter_out_channels": "int",
    "residual_blocks": "int",
    "channel_schedule": "ints",
    "embed_dim": "int",
    "dropout": "float",
    "output_mode": "str",
    "use_bias": "bool",
    "mask_pad": "bool",
    "learning_rate": "float",
    "batch_size": "int",
    "max_epochs": "int",
    "patience": "int",
    "early_stop_metric": "str",
    "seed": "int",
    "freeze_embeddings": "bool",
    "eval_ks": "ints",
    "threshold": "float",
    "min_doc_freq": "int",
    "max_length": "int",
}

DEFAULTS: dict = {
    "preset": "multirescnn",
    "kernel_sizes": (3, 5, 9, 15, 19, 25),
    "filter_out_channels": 100,
    "residual_blocks": 1,
    "channel_schedule": (100, 50),
    "embed_dim": 100,
    "dropout": 0.2,
    "output_mode": "per_label",
    "use_bias": True,
    "mask_pad": True,
    "learning_rate": 1e-4,
    "batch_size": 16,
    "max_epochs": 100,
    "patience": 10,
    "early_stop_metric": "auto",
    "seed": 0,
    "freeze_embeddings": False,
    "eval_ks": (5, 8),
    "threshold": 0.5,
    "min_doc_freq": 3,
    "max_length": 2500,
}

_FLAG_HELP = {
    "preset": f"architecture preset: {', '.join(sorted(PRESETS))}",
    "kernel_sizes": "comma-separated odd kernel sizes, e.g. 3,5,9",
    "filter_out_channels": "output channels of each first-layer filter",
    "residual_blocks": "residual blocks per filter (0 disables them)",
    "channel_schedule": "comma-separated residual widths, first equals filter_out_channels",
    "embed_dim": "embedding dimension",
    "dropout": "embedding dropout rate in [0, 1)",
    "output_mode": "per_label or literal_row_sum",
    "use_bias": "true/false: include bias terms",
    "mask_pad": "true/false: zero padded rows and mask attention",
    "learning_rate": "Adam learning rate",
    "batch_size": "documents per batch",
    "max_epochs": "maximum training epochs",
    "patience": "epochs without dev improvement before stopping",
    "early_stop_metric": "auto, micro_f1, macro_f1, micro_auc, macro_auc, or p_at_K",
    "seed": "RNG seed (falls back to $MULTIRESCNN_SEED, then 0)",
    "freeze_embeddings": "true/false: keep embedding rows fixed",
    "eval_ks": "comma-separated k values for precision@k",
    "threshold": "decision threshold for F1",
    "min_doc_freq": "vocabulary document-frequency cutoff",
    "max_length": "token truncation length",
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def parse_config_value(key: str, raw: str):
    """Parse one raw string according to the key's declared type."""
    if key not in CONFIG_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = CONFIG_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw, key)
        if kind == "ints":
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from e
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; unknown or repeated keys are errors."""
    vals: dict = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in vals:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        vals[key] = parse_config_value(key, raw)
    return vals


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def write_config_file(vals: dict, path) -> None:
    """Serialize the effective configuration; round-trips through
    ``read_config_file``."""
    lines = [f"{k} = {_format_value(vals[k])}" for k in sorted(vals)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_config(file_vals: dict, flag_vals: dict) -> dict:
    """defaults < preset < config file < command-line flags.

    The preset itself is taken from flags first, then the file.  The seed
    falls back to $MULTIRESCNN_SEED when neither source sets it.
    """
    vals = dict(DEFAULTS)
    preset = flag_vals.get("preset", file_vals.get("preset", vals["preset"]))
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}"
        )
    vals.update(PRESETS[preset])
    vals["preset"] = preset
    vals.update({k: v for k, v in file_vals.items() if k != "preset"})
    vals.update({k: v for k, v in flag_vals.items() if k != "preset"})
    if "seed" not in file_vals and "seed" not in flag_vals:
        env = os.environ.get("MULTIRESCNN_SEED")
        if env is not None:
            try:
                vals["seed"] = int(env)
            except ValueError as e:
                raise ConfigError(
                    f"MULTIRESCNN_SEED must be an integer, got {env!r}"
                ) from e
    return vals


def model_config_from(vals: dict, num_labels: int) -> ModelConfig:
    # Without residual blocks the schedule is exactly (filter_out_channels,),
    # so it follows that key instead of forcing users to set both.
    schedule = vals["channel_schedule"]
    if vals["residual_blocks"] == 0:
        schedule = (vals["filter_out_channels"],)
    return ModelConfig(
        kernel_sizes=vals["kernel_sizes"],
        num_labels=num_labels,
        embed_dim=vals["embed_dim"],
        filter_out_channels=vals["filter_out_channels"],
        residual_blocks=vals["residual_blocks"],
        channel_schedule=schedule,
        dropout_rate=vals["dropout"],
        output_mode=vals["output_mode"],
        use_bias=vals["use_bias"],
        mask_pad=vals["mask_pad"],
    )


def train_config_from(vals: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=vals["learning_rate"],
        batch_size=vals["batch_size"],
        max_epochs=vals["max_epochs"],
        patience=vals["patience"],
        early_stop_metric=vals["early_stop_metric"],
        seed=vals["seed"],
        freeze_embeddings=vals["freeze_embeddings"],
        eval_ks=vals["eval_ks"],
        threshold=vals["threshold"],
    )


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key=value config file")
    for key in CONFIG_TYPES:
        p.add_argument(
            "--" + key.replace("_", "-"),
            dest=f"cfg_{key}",
            metavar="V",
            help=_FLAG_HELP[key],
        )


def _vals_from_args(args) -> dict:
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_vals = {}
    for key in CONFIG_TYPES:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            flag_vals[key] = parse_config_value(key, str(raw))
    return resolve_config(file_vals, flag_vals)


def _load_data_dir(data_dir, splits: tuple[str, ...]):
    data = Path(data_dir)
    vocab = read_vocab(data / "tokens.txt", data / "labels.txt")
    datasets = {
        tag: load_encoded_jsonl(data / f"{tag}.encoded.jsonl", vocab.num_labels, tag)
        for tag in splits
    }
    return vocab, datasets


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    vals = _vals_from_args(args)
    t0 = time.monotonic()
    raw = {
        "train": load_jsonl(args.train, max_length=vals["max_length"]),
        "dev": load_jsonl(args.dev, max_length=vals["max_length"]),
        "test": load_jsonl(args.test, max_length=vals["max_length"]),
    }
    vocab = build_vocab(raw["train"], min_doc_freq=vals["min_doc_freq"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_vocab(vocab, out / "tokens.txt", out / "labels.txt")
    total_docs = 0
    for tag, docs in raw.items():
        ds = encode_dataset(docs, vocab, tag)
        write_encoded_jsonl(ds, out / f"{tag}.encoded.jsonl")
        total_docs += len(docs)
        print(f"{tag}: {len(docs)} documents")
    secs = time.monotonic() - t0
    print(
        f"vocabulary: {vocab.num_tokens - 2} tokens (+pad/unk), "
        f"{vocab.num_labels} labels"
    )
    print(f"done in {secs:.1f}s ({total_docs / secs:.0f} docs/s) -> {out}")
    return 0


def cmd_pretrain(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("MULTIRESCNN_SEED", "0"))
    splits = ["train"]
    if args.include_dev:
        splits.append("dev")
    if args.include_test:
        splits.append("test")
    vocab, datasets = _load_data_dir(args.data, tuple(splits))
    sequences = [ex.token_ids for s in splits for ex in datasets[s].examples]
    t0 = time.monotonic()
    pretrain_skipgram(
        sequences,
        vocab,
        args.dim,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        lr=args.lr,
        seed=seed,
        out_path=args.out,
    )
    secs = time.monotonic() - t0
    total_tokens = sum(s.size for s in sequences) * args.epochs
    print(
        f"pretrained {args.dim}-d embeddings on {len(sequences)} documents "
        f"in {secs:.1f}s ({total_tokens / max(secs, 1e-9):.0f} tokens/s) -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    vals = _vals_from_args(args)
    vocab, datasets = _load_data_dir(args.data, ("train", "dev"))
    train_ds, dev_ds = datasets["train"], datasets["dev"]
    mcfg = model_config_from(vals, vocab.num_labels)
    tcfg = train_config_from(vals)

    if args.embeddings:
        em = load_text_embeddings(args.embeddings, vocab, mcfg.embed_dim, seed=vals["seed"])
        print(f"embedding coverage: {em.coverage_line()}")
    else:
        em = random_embeddings(vocab, mcfg.embed_dim, vals["seed"])
    params = init_params(mcfg, vals["seed"], em.rows)

    total, breakdown = param_count(mcfg, vocab.num_tokens)
    parts = ", ".join(f"{k} {v:,}" for k, v in breakdown.items() if v)
    print(f"{vals['preset']}: {total:,} parameters ({parts})")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(vals, out / "config.ini")

    n_train = len(train_ds.examples)

    def progress(rec):
        mv = rec["monitor_value"]
        mv_s = "n/a" if mv is None else f"{mv:.4f}"
        rate = n_train / rec["seconds"] if rec["seconds"] > 0 else float("inf")
        print(
            f"epoch {rec['epoch']:3d}  loss {rec['train_loss']:.4f}  "
            f"dev {rec['monitor']} {mv_s}  ({rec['seconds']:.1f}s, {rate:.0f} docs/s)"
        )

    t0 = time.monotonic()
    result = train(
        params, mcfg, train_ds, dev_ds, tcfg,
        log_path=out / "train_log.jsonl", progress=progress,
    )
    secs = time.monotonic() - t0

    save_checkpoint(result.best_params, mcfg, vocab.checksum(), out / "model.ckpt")
    write_history_csv(result.history, out / "history.csv")
    render_training_curves(result.history, out / "training_curves.png")
    stop = "early stop" if result.early_stopped else "epoch limit"
    print(
        f"best {result.metric_name} {result.best_value:.4f} at epoch "
        f"{result.best_epoch} ({stop}); {secs:.1f}s total -> {out / 'model.ckpt'}"
    )
    return 0


def cmd_evaluate(args) -> int:
    vals = _vals_from_args(args)
    vocab, datasets = _load_data_dir(args.data, (args.split,))
    ds = datasets[args.split]
    params, mcfg, _ = load_checkpoint(args.checkpoint, expected_vocab_checksum=vocab.checksum())
    t0 = time.monotonic()
    report, _ = evaluate(
        params, mcfg, ds, vals["batch_size"], ks=vals["eval_ks"],
        threshold=vals["threshold"], labelwise_macro=args.labelwise_macro,
    )
    secs = time.monotonic() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    write_metrics_csv(report, out / "metrics.csv")
    render_metrics_bars(report, out / "metrics.png", title=f"{args.split} evaluation")
    for line in report.lines():
        print(line)
    print(f"scored {len(ds)} documents in {secs:.1f}s ({len(ds) / max(secs, 1e-9):.0f} docs/s)")
    return 0


def cmd_predict(args) -> int:
    vals = _vals_from_args(args)
    data = Path(args.data)
    vocab = read_vocab(data / "tokens.txt", data / "labels.txt")
    params, mcfg, _ = load_checkpoint(args.checkpoint, expected_vocab_checksum=vocab.checksum())
    docs = load_jsonl(args.input, max_length=vals["max_length"], require_labels=False)
    ds = encode_dataset(docs, vocab, "predict")
    scores = predict_scores(params, mcfg, ds, vals["batch_size"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions_csv(
        [d.id for d in docs], scores, vocab.index_to_label,
        out / "predictions.csv", top_k=args.top_k,
    )
    print(f"wrote top-{args.top_k} predictions for {len(docs)} documents -> {out / 'predictions.csv'}")
    if args.explain:
        for i in range(min(args.explain, len(docs))):
            ex = ds.examples[i]
            _, trace = forward(ex.token_ids, params, mcfg)
            top = np.argsort(-scores[i], kind="stable")[: min(5, vocab.num_labels)]
            fig_path = out / f"attention_{ex.id}.png"
            render_attention_profile(
                docs[i].tokens, trace.A[0], vocab.index_to_label, list(top), fig_path
            )
            print(f"attention figure -> {fig_path}")
    return 0


def cmd_synth_gen(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("MULTIRESCNN_SEED", "0"))
    pattern_lengths = [int(x) for x in args.pattern_lengths.split(",") if x.strip()]
    train_docs, dev_docs, test_docs = synth_corpus(
        num_docs=args.num_docs,
        num_labels=args.num_labels,
        pattern_lengths=pattern_lengths,
        vocab_size=args.vocab_size,
        doc_length=args.doc_length,
        noise_rate=args.noise_rate,
        seed=seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag, docs in (("train", train_docs), ("dev", dev_docs), ("test", test_docs)):
        write_jsonl(docs, out / f"{tag}.jsonl")
        print(f"{tag}: {len(docs)} documents")
    print(f"synthetic corpus (seed {seed}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multirescnn",
        description="multi-filter residual convolutional multi-label text classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize, build vocabulary, encode splits")
    p.add_argument("--train", required=True, metavar="JSONL")
    p.add_argument("--dev", required=True, metavar="JSONL")
    p.add_argument("--test", required=True, metavar="JSONL")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain-embeddings", help="skip-gram embedding pretraining")
    p.add_argument("--data", required=True, metavar="DIR", help="preprocess output dir")
    p.add_argument("--out", required=True, metavar="FILE", help="text embedding file")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--include-dev", action="store_true",
                   help="also train on the dev split")
    p.add_argument("--include-test", action="store_true",
                   help="also train on the test split")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--data", required=True, metavar="DIR", help="preprocess output dir")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--embeddings", metavar="FILE", help="pretrained text embeddings")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score an encoded split with a checkpoint")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument(
        "--labelwise-macro", action="store_true",
        help="also report the mean of per-label F1s (the headline macro F1 "
        "is the harmonic mean of macro-averaged precision and recall)",
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank labels for raw documents")
    p.add_argument("--data", required=True, metavar="DIR", help="dir with vocab files")
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--input", required=True, metavar="JSONL")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument(
        "--explain", type=int, default=0, metavar="N",
        help="render per-label attention figures for the first N documents",
    )
    _add_config_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth-gen", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--num-docs", type=int, default=1000)
    p.add_argument("--num-labels", type=int, default=20)
    p.add_argument("--pattern-lengths", default="2,5,9", metavar="CSV")
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--doc-length", type=int, default=100)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
