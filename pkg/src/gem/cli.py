"""Command-line interface.

Subcommands: ingest, train-bpe, pretrain, extend, finetune, generate,
pipeline, eval, stats. Every subcommand accepts --config FILE, a
line-delimited JSON file of flat, module-namespaced keys (for example
{"training.batch_size": 8}); explicit flags override config values, which
override built-in defaults. Unknown config keys are rejected. Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bpe import encode, decode, load_vocab, save_vocab, train_bpe
from .corpus import build_vocabulary, ingest_corpus, save_corpus
from .errors import ConfigError, GemError
from .generation import GenerationParams, generate
from .metrics import attack_metrics, format_report, read_claim_records
from .model import (
    BaseLm, GemModel, ModelConfig, extend_from_base, load_checkpoint, save_checkpoint,
)
from .pipeline import (
    PipelineConfig, claim_stats, run_pipeline, write_claims, write_stats,
)
from .synthetic import write_synthetic_corpus
from .training import (
    SampleBuilderConfig, TrainConfig, article_lm_samples, build_dataset, train,
)

# (flag, dest, type, default, config key, help) for options that may come
# from a config file. Flags parse with default=None so "explicitly set"
# is detectable; resolution order is flag > config > default.
_MODEL_OPTS = [
    ("--d-model", "d_model", int, 64, "model.d_model", "embedding width"),
    ("--n-layers", "n_layers", int, 2, "model.n_layers", "transformer blocks per stack"),
    ("--n-heads", "n_heads", int, 4, "model.n_heads", "attention heads"),
    ("--d-ff", "d_ff", int, 256, "model.d_ff", "feed-forward width"),
    ("--max-positions", "max_positions", int, 256, "model.max_positions", "positional table size"),
    ("--init-std", "init_std", float, 0.02, "model.init_std", "weight init standard deviation"),
]
_TRAIN_OPTS = [
    ("--batch-size", "batch_size", int, 16, "training.batch_size", "samples per optimizer step"),
    ("--learning-rate", "learning_rate", float, 1e-5, "training.learning_rate", "Adam learning rate"),
    ("--epochs", "epochs", int, 6, "training.epochs", "training epochs"),
]
_GEN_OPTS = [
    ("--temperature", "temperature", float, 1.0, "generation.temperature", "softmax temperature (0 = greedy)"),
    ("--top-k", "top_k", int, 40, "generation.top_k", "top-k restriction (0 disables)"),
    ("--max-tokens", "max_tokens", int, 48, "generation.max_tokens", "maximum tokens to generate"),
]
_PIPELINE_OPTS = [
    ("--min-len", "min_len", int, 30, "pipeline.min_len", "minimum claim length (chars)"),
    ("--max-len", "max_len", int, 200, "pipeline.max_len", "maximum claim length (chars)"),
    ("--similarity-threshold", "similarity_threshold", float, 0.35, "pipeline.similarity_threshold", "minimum normalized edit distance to wiki-A's first sentence"),
    ("--context-budget", "context_token_budget", int, 160, "pipeline.context_token_budget", "context token budget"),
    ("--attempts-per-claim", "attempts_per_claim", int, 50, "pipeline.attempts_per_claim", "attempt budget multiplier"),
]
_SEED_OPT = [("--seed", "seed", int, 0, "seed", "master random seed")]
_BPE_OPTS = [("--vocab-size", "vocab_size", int, 512, "bpe.vocab_size", "total BPE vocabulary size")]
_SYNTH_OPTS = [
    ("--articles", "articles", int, 400, "synthetic.articles", "number of articles"),
    ("--sentences", "sentences", int, 5, "synthetic.sentences", "sentences per article"),
]

_KNOWN_CONFIG_KEYS = {
    spec[4]
    for group in (_MODEL_OPTS, _TRAIN_OPTS, _GEN_OPTS, _PIPELINE_OPTS, _SEED_OPT, _BPE_OPTS, _SYNTH_OPTS)
    for spec in group
} | {"pipeline.jobs"}


def _add_opts(parser: argparse.ArgumentParser, groups: list) -> None:
    for group in groups:
        for flag, dest, typ, default, key, help_text in group:
            parser.add_argument(
                flag, dest=dest, type=typ, default=None,
                help=f"{help_text} (default {default})",
            )


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {file}")
    merged: dict = {}
    for lineno, raw in enumerate(file.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{file} line {lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{file} line {lineno}: config lines must be JSON objects")
        merged.update(obj)
    unknown = sorted(set(merged) - _KNOWN_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {unknown}")
    return merged


def _resolve(args: argparse.Namespace, groups: list, config: dict) -> None:
    for group in groups:
        for _, dest, typ, default, key, _ in group:
            value = getattr(args, dest)
            if value is None:
                value = config.get(key, default)
                if value is not None:
                    value = typ(value)
            setattr(args, dest, value)


def _model_config(args: argparse.Namespace, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        d_model=args.d_model, n_layers=args.n_layers, n_heads=args.n_heads,
        d_ff=args.d_ff, vocab_size=vocab_size, max_positions=args.max_positions,
        init_std=args.init_std,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size, learning_rate=args.learning_rate,
        epochs=args.epochs, seed=args.seed,
    )


def _cmd_ingest(args) -> int:
    store = ingest_corpus(args.infile)
    save_corpus(store, args.out)
    print(f"ingested {len(store)} articles -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    store = write_synthetic_corpus(args.out, args.articles, args.sentences, seed=args.seed)
    print(f"wrote {len(store)} synthetic articles -> {args.out}")
    return 0


def _cmd_train_bpe(args) -> int:
    store = ingest_corpus(args.corpus)
    vocab = train_bpe(store, args.vocab_size)
    save_vocab(vocab, args.out)
    note = " (truncated: corpus too small)" if vocab.truncated else ""
    print(f"trained BPE vocab of {len(vocab)} tokens -> {args.out}{note}")
    return 0


def _cmd_pretrain(args) -> int:
    store = ingest_corpus(args.corpus)
    vocab = load_vocab(args.bpe)
    samples = article_lm_samples(store, vocab)
    model = BaseLm(_model_config(args, len(vocab)), seed=args.seed)
    history = train(model, samples, _train_config(args), vocab.end_of_text_id,
                    checkpoint_dir=args.checkpoints)
    save_checkpoint(model, args.out)
    if args.metrics:
        history.to_csv(args.metrics)
    final = history.epochs[-1]
    acc = f", val acc {final.val_token_accuracy:.4f}" if final.val_token_accuracy is not None else ""
    print(f"pretrained {len(samples)} articles for {args.epochs} epochs "
          f"(final loss {final.mean_loss:.4f}{acc}) -> {args.out}")
    return 0


def _cmd_extend(args) -> int:
    base = load_checkpoint(args.base)
    if not isinstance(base, BaseLm):
        raise ConfigError("extend expects a base checkpoint")
    gem = extend_from_base(base, seed=args.seed)
    save_checkpoint(gem, args.out)
    print(f"extended {args.base} -> {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    store = ingest_corpus(args.corpus)
    vocab = load_vocab(args.bpe)
    model = load_checkpoint(args.model)
    builder = SampleBuilderConfig(seed=args.seed)
    samples = build_dataset(store, builder, vocab)
    history = train(model, samples, _train_config(args), vocab.end_of_text_id,
                    checkpoint_dir=args.checkpoints)
    save_checkpoint(model, args.out)
    if args.metrics:
        history.to_csv(args.metrics)
    final = history.epochs[-1]
    acc = f", val acc {final.val_token_accuracy:.4f}" if final.val_token_accuracy is not None else ""
    print(f"fine-tuned on {len(samples)} samples for {args.epochs} epochs "
          f"(final loss {final.mean_loss:.4f}{acc}) -> {args.out}")
    return 0


def _cmd_generate(args) -> int:
    model = load_checkpoint(args.model)
    if not isinstance(model, GemModel):
        raise ConfigError("generate expects an extended (gem) checkpoint")
    vocab = load_vocab(args.bpe)
    context = encode(args.context, vocab, kind="context") if args.context else []
    target_words = args.targets.split() if args.targets else []
    target = (
        encode(" " + " ".join(target_words), vocab, kind="target")
        if target_words else []
    )
    params = GenerationParams(
        temperature=args.temperature, top_k=args.top_k,
        max_tokens=args.max_tokens, seed=args.seed,
    )
    tokens = generate(model, context, target, params, vocab.end_of_text_id)
    text = decode(tokens, vocab)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_pipeline(args) -> int:
    store = ingest_corpus(args.corpus)
    bpe_vocab = load_vocab(args.bpe)
    model = load_checkpoint(args.model)
    if not isinstance(model, GemModel):
        raise ConfigError("pipeline expects an extended (gem) checkpoint")
    word_vocab = build_vocabulary(store)
    cfg = PipelineConfig(
        min_len=args.min_len, max_len=args.max_len,
        similarity_threshold=args.similarity_threshold,
        context_token_budget=args.context_token_budget,
        seed=args.seed, attempts_per_claim=args.attempts_per_claim,
    )
    gen_params = GenerationParams(
        temperature=args.temperature, top_k=args.top_k,
        max_tokens=args.max_tokens, seed=args.seed,
    )
    result = run_pipeline(
        store, model, bpe_vocab, word_vocab, args.n_claims, cfg, gen_params,
        jobs=args.jobs,
    )
    write_claims(result, args.out)
    write_stats(result, args.stats)
    print(f"accepted {len(result.accepted)} claims in {result.attempts} attempts "
          f"({result.rejected_count} rejected)")
    for rule, count in sorted(result.rejected_by_rule.items()):
        print(f"rejected {rule}: {count}")
    return 0


def _cmd_eval(args) -> int:
    records = read_claim_records(args.infile)
    metrics = attack_metrics(records, over_correct_only=not args.all_claims)
    print(format_report(metrics))
    return 0


def _cmd_stats(args) -> int:
    path = Path(args.infile)
    if not path.exists():
        raise ConfigError(f"stats file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "target_count,sentence_word_len":
        raise ConfigError(f"{path}: header must be target_count,sentence_word_len")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            tc, wl = line.split(",")
            pairs.append((int(tc), int(wl)))
        except ValueError:
            raise ConfigError(f"{path} line {lineno}: expected two integers") from None
    stats = claim_stats(pairs)
    for tc, count in stats.histogram.items():
        print(f"hist,{tc},{count}")
    for tc, mean in stats.mean_length.items():
        print(f"mean,{tc},{mean:.4f}")
    print(f"spearman,{stats.spearman:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gem",
        description="Controlled text generation with target words, plus the claims pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func, _groups=[])
        p.add_argument("--config", default=None, help="line-delimited JSON config file")
        return p

    p = add("ingest", _cmd_ingest, "validate a corpus file and write its canonical form")
    p.add_argument("--in", dest="infile", required=True, help="input corpus (LDJSON)")
    p.add_argument("--out", required=True, help="output corpus path")

    p = add("synth", _cmd_synth, "write a templated synthetic corpus")
    p.add_argument("--out", required=True, help="output corpus path")
    _add_opts(p, [_SYNTH_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_SYNTH_OPTS, _SEED_OPT])

    p = add("train-bpe", _cmd_train_bpe, "train the byte-level BPE vocabulary")
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--out", required=True, help="output vocab path")
    _add_opts(p, [_BPE_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_BPE_OPTS, _SEED_OPT])

    p = add("pretrain", _cmd_pretrain, "pretrain the base LM on whole articles")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bpe", required=True, help="trained vocab file")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--checkpoints", default=None, help="directory for per-epoch checkpoints")
    p.add_argument("--metrics", default=None, help="per-step metrics CSV")
    _add_opts(p, [_MODEL_OPTS, _TRAIN_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_MODEL_OPTS, _TRAIN_OPTS, _SEED_OPT])

    p = add("extend", _cmd_extend, "graft the target encoder onto a base checkpoint")
    p.add_argument("--base", required=True, help="base checkpoint")
    p.add_argument("--out", required=True, help="output checkpoint")
    _add_opts(p, [_SEED_OPT])
    p.set_defaults(_groups=[_SEED_OPT])

    p = add("finetune", _cmd_finetune, "fine-tune a checkpoint on context/target samples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--model", required=True, help="checkpoint to fine-tune")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--checkpoints", default=None, help="directory for per-epoch checkpoints")
    p.add_argument("--metrics", default=None, help="per-step metrics CSV")
    _add_opts(p, [_TRAIN_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_TRAIN_OPTS, _SEED_OPT])

    p = add("generate", _cmd_generate, "decode tokens for a context and target words")
    p.add_argument("--model", required=True, help="extended checkpoint")
    p.add_argument("--bpe", required=True)
    p.add_argument("--context", default="", help="context text")
    p.add_argument("--targets", default="", help="space-separated target words")
    p.add_argument("--out", default=None, help="also write the text here")
    _add_opts(p, [_GEN_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_GEN_OPTS, _SEED_OPT])

    p = add("pipeline", _cmd_pipeline, "generate and filter claims from article pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--model", required=True, help="extended checkpoint")
    p.add_argument("--n-claims", dest="n_claims", type=int, required=True)
    p.add_argument("--out", required=True, help="claims output (LDJSON)")
    p.add_argument("--stats", required=True, help="stats output (CSV)")
    p.add_argument("--jobs", type=int, default=1, help="parallel claim attempts")
    _add_opts(p, [_PIPELINE_OPTS, _GEN_OPTS, _SEED_OPT])
    p.set_defaults(_groups=[_PIPELINE_OPTS, _GEN_OPTS, _SEED_OPT])

    p = add("eval", _cmd_eval, "attack metrics from a claim/system CSV")
    p.add_argument("--in", dest="infile", required=True, help="metrics CSV")
    p.add_argument("--all-claims", action="store_true",
                   help="average raw potency over all claims, not only correct ones")

    p = add("stats", _cmd_stats, "summarize a pipeline stats CSV")
    p.add_argument("--in", dest="infile", required=True, help="stats CSV")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _load_config(args.config)
        _resolve(args, args._groups, config)
        return args.func(args)
    except GemError as exc:
        print(f"gem: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gem: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
