"""Command-line surface: synth, curate, train, eval, explain.

Every command is seeded and idempotent: rerunning with identical inputs,
config, and seed produces identical outputs.  A ``manifest.json`` is written
alongside every command's outputs recording the command, its config snapshot,
the seed, sha256 hashes of all input files, output paths, and wall-clock
duration.

Config files are flat ``key=value`` text; keys match long option names with
hyphens replaced by underscores.  Command-line flags override config-file
values, which override built-in defaults.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baseline_lr, corpus as corpus_mod, render
from .baseline_lr import BaselineError, explain_lr, load_lr, predict_lr, train_lr
from .corpus import CorpusError, CurationConfig, SynthConfig
from .encoder import EncoderConfig, EncoderError
from .head import HeadError, predict, predict_pooled
from .metrics import MetricsError, classification_report, sd_average, sd_prf
from .tokenizer import Token, TokenizerError, Vocab, build_vocab
from .training import (
    CheckpointError,
    NumericError,
    TrainConfig,
    TrainingError,
    VocabMismatchError,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

_DATA_ERRORS = (
    CorpusError,
    TokenizerError,
    EncoderError,
    HeadError,
    TrainingError,
    CheckpointError,
    VocabMismatchError,
    BaselineError,
    MetricsError,
    FileNotFoundError,
    IsADirectoryError,
)


class UsageError(ValueError):
    """Flag combinations argparse cannot express; exits with code 2."""


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunContext:
    """Collects inputs/outputs for the manifest written next to the outputs."""

    def __init__(self, command: str, args: argparse.Namespace) -> None:
        self.command = command
        self.seed = args.seed
        self.out_dir = Path(args.out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = {
            k: v
            for k, v in sorted(vars(args).items())
            if k not in ("command", "config", "out") and not k.startswith("_")
        }
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def add_input(self, path: str | Path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = _sha256_file(path)
        return path

    def out_path(self, name: str) -> Path:
        path = self.out_dir / name
        self.outputs.append(str(path))
        return path

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_seconds": time.monotonic() - self.started,
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    ctx = RunContext("synth", args)
    config = SynthConfig(
        size=args.size,
        min_words=args.min_words,
        max_words=args.max_words,
        frac_toxic=args.frac_toxic,
        frac_context_toxic=args.frac_context_toxic,
        frac_context_benign=args.frac_context_benign,
    )
    generated = corpus_mod.generate_synthetic(config, seed=args.seed)
    out = ctx.out_path(args.name)
    corpus_mod.save_jsonl(generated, out)
    by_prefix: dict[str, int] = {}
    for post in generated:
        by_prefix[post.id.split("-")[0]] = by_prefix.get(post.id.split("-")[0], 0) + 1
    print(f"wrote {len(generated)} posts to {out} ({json.dumps(by_prefix, sort_keys=True)})")
    ctx.finish()
    return 0


def cmd_curate(args: argparse.Namespace) -> int:
    ctx = RunContext("curate", args)
    main_corpus = corpus_mod.load_jsonl(ctx.add_input(args.corpus))
    span_corpus = corpus_mod.load_jsonl(ctx.add_input(args.span_corpus), role="span")
    if args.highly_toxic is not None:
        config = CurationConfig(
            highly_toxic=args.highly_toxic,
            non_toxic=args.non_toxic,
            ambiguous=args.ambiguous,
            extra_toxic=args.extra_toxic,
            span_annotated=args.span_annotated,
            train_fraction=args.train_fraction,
            seed=args.seed,
        )
    else:
        config = CurationConfig.paper_proportions(scale=args.scale, seed=args.seed)
    term_list = corpus_mod.build_toxic_term_list(span_corpus, min_count=args.min_count)
    train_split, test_split = corpus_mod.curate(main_corpus, span_corpus, config, term_list)
    corpus_mod.save_jsonl(train_split, ctx.out_path("train.jsonl"))
    corpus_mod.save_jsonl(test_split, ctx.out_path("test.jsonl"))
    ctx.out_path("terms.tsv").write_text(term_list.to_tsv(), encoding="utf-8")
    ctx.config["strata"] = {
        "highly_toxic": config.highly_toxic,
        "non_toxic": config.non_toxic,
        "ambiguous": config.ambiguous,
        "extra_toxic": config.extra_toxic,
        "span_annotated": config.span_annotated,
    }
    print(
        f"curated {len(train_split)} train / {len(test_split)} test posts; "
        f"{len(term_list)} frequent terms"
    )
    ctx.finish()
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    ctx = RunContext("train", args)
    full = corpus_mod.load_jsonl(ctx.add_input(args.train))
    if args.mode == "lr":
        model = train_lr(
            full,
            l2_strength=args.l2,
            epochs=args.epochs,
            lr=args.lr if args.lr is not None else 1.0,
            seed=args.seed,
        )
        baseline_lr.save_lr(model, ctx.out_path("lr_model.tsv"))
        accuracy = float(
            np.mean([int(predict_lr(model, p.text) >= 0.5) == p.label for p in full])
        )
        print(f"trained LR on {len(full)} posts; training accuracy {accuracy:.3f}")
        ctx.finish()
        return 0

    cls_corpus, span_corpus = corpus_mod.split_for_training(full)
    val_corpus = corpus_mod.load_jsonl(ctx.add_input(args.val)) if args.val else None
    merged = corpus_mod.Corpus(
        posts=tuple(cls_corpus.posts + span_corpus.posts), role="mixed"
    )
    vocab = build_vocab(merged, min_freq=args.min_freq)
    encoder_config = EncoderConfig(
        vocab_size=len(vocab),
        d=args.d,
        layers=args.layers,
        heads=args.heads,
        ffn_width=args.ffn_width,
        max_len=args.max_len,
        arch=args.arch,
    )
    config = TrainConfig(
        lam=args.lam,
        learning_rate=args.lr if args.lr is not None else 1e-3,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        mode=args.mode,
        min_freq=args.min_freq,
        early_stop=args.early_stop,
    )
    result = train(
        cls_corpus,
        span_corpus,
        config,
        encoder_config=encoder_config,
        vocab=vocab,
        val_corpus=val_corpus,
    )
    for row in result.metrics:
        parts = [f"epoch {row.epoch}: L={row.total:.6f}"]
        if row.l_c is not None:
            parts.append(f"L_C={row.l_c:.6f}")
        if row.l_s is not None:
            parts.append(f"L_S={row.l_s:.6f}")
        if row.val_macro_f1 is not None:
            parts.append(f"val_macro_f1={row.val_macro_f1:.4f}")
        print(" ".join(parts))
    save_checkpoint(result.checkpoint, ctx.out_path("model.ckpt"))
    ctx.out_path("vocab.tsv").write_text(vocab.to_tsv(), encoding="utf-8")
    write_metrics_csv(result.metrics, ctx.out_path("metrics.csv"))
    print(f"trained {args.mode} model: {len(cls_corpus)} label-only + {len(span_corpus)} span posts")
    ctx.finish()
    return 0


def _load_neural(ctx: RunContext, args: argparse.Namespace):
    ckpt_path = ctx.add_input(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else ckpt_path.parent / "vocab.tsv"
    vocab = Vocab.from_tsv(ctx.add_input(vocab_path).read_text(encoding="utf-8"))
    return model_from_checkpoint(load_checkpoint(ckpt_path), vocab)


def _neural_prediction(model, text: str, args: argparse.Namespace, post_id: str):
    fn = predict_pooled if model.mode == "cls" else predict
    return fn(text, model, tau_cls=args.tau_cls, tau_span=args.tau_span, post_id=post_id)


def cmd_eval(args: argparse.Namespace) -> int:
    ctx = RunContext("eval", args)
    test = corpus_mod.load_jsonl(ctx.add_input(args.test))
    want_neural = args.model in ("neural", "both")
    want_lr = args.model in ("lr", "both")
    results: dict[str, dict] = {}
    lines: list[str] = []

    gold_labels = [p.label for p in test]
    span_posts = [p for p in test if p.spans is not None]
    if args.skip_empty_gold:
        span_posts = [p for p in span_posts if len(p.spans) > 0]

    def evaluate(name: str, label_fn, chars_fn) -> None:
        report = classification_report(gold_labels, [label_fn(p) for p in test])
        section = {"classification": report.to_dict()}
        lines.append(report.to_text(name))
        if span_posts:
            per_post = [
                sd_prf(p.span_char_set(), chars_fn(p)) for p in span_posts
            ]
            span_result = sd_average(per_post)
            section["span_detection"] = span_result.to_dict()
            lines.append(span_result.to_text(name))
        results[name] = section

    if want_neural:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for neural evaluation")
        model = _load_neural(ctx, args)
        cache = {p.id: _neural_prediction(model, p.text, args, p.id) for p in test}
        evaluate(
            f"spanmax-{model.mode}",
            lambda p: cache[p.id].label,
            lambda p: cache[p.id].predicted_char_set,
        )
    if want_lr:
        if not args.lr_model:
            raise UsageError("--lr-model is required for baseline evaluation")
        lr_model = load_lr(ctx.add_input(args.lr_model))
        evaluate(
            "lr",
            lambda p: int(predict_lr(lr_model, p.text) >= 0.5),
            lambda p: explain_lr(lr_model, p.text).char_set,
        )

    text_report = "\n\n".join(lines) + "\n"
    ctx.out_path("eval.txt").write_text(text_report, encoding="utf-8")
    ctx.out_path("eval.json").write_text(
        json.dumps(results, indent=2) + "\n", encoding="utf-8"
    )
    print(text_report, end="")
    ctx.finish()
    return 0


def _read_input_texts(path: Path) -> list[tuple[str, str]]:
    """Texts to explain: JSONL records need only "text" (id optional)."""
    lines = path.read_text(encoding="utf-8").splitlines()
    if path.suffix == ".jsonl":
        texts = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if "text" not in record:
                raise CorpusError(f"{path}:{lineno}: missing field 'text'")
            texts.append((str(record.get("id", f"t{lineno:04d}")), record["text"]))
        return texts
    return [(f"t{i:04d}", line) for i, line in enumerate(lines, start=1) if line.strip()]


def _lr_entry(lr_model, post_id: str, text: str, k: int) -> render.ExplainEntry:
    """Baseline entry: word contributions squashed through a sigmoid for coloring."""
    explanation = explain_lr(lr_model, text)
    probability = predict_lr(lr_model, text)
    word_tokens = tuple(
        Token(surface=w.word, start=w.start, end=w.end) for w in explanation.words
    )
    scores = tuple(
        float(1.0 / (1.0 + np.exp(-w.contribution))) for w in explanation.words
    )
    ranked = sorted(
        explanation.words, key=lambda w: (-w.contribution, w.start)
    )[:k]
    return render.ExplainEntry(
        post_id=post_id,
        text=text,
        tokens=word_tokens,
        scores=scores,
        sequence_score=probability,
        label=int(probability >= 0.5),
        explanation=tuple((w.word, w.contribution) for w in ranked),
        model_name="lr",
    )


def cmd_explain(args: argparse.Namespace) -> int:
    ctx = RunContext("explain", args)
    texts = _read_input_texts(ctx.add_input(args.input))
    model = _load_neural(ctx, args)
    name = f"spanmax-{model.mode}"
    entries = []
    for post_id, text in texts:
        pred = _neural_prediction(model, text, args, post_id)
        entries.append(
            render.ExplainEntry(
                post_id=post_id,
                text=text,
                tokens=pred.tokens,
                scores=pred.token_scores,
                sequence_score=pred.sequence_score,
                label=pred.label,
                explanation=pred.explanation,
                model_name=name,
            )
        )
    ctx.out_path("explain.html").write_text(render.html_report(entries), encoding="utf-8")
    ansi = "\n".join(render.ansi_render(e) for e in entries)
    ctx.out_path("explain.txt").write_text(ansi + "\n", encoding="utf-8")
    ctx.out_path("explain.json").write_text(
        render.entries_to_json(entries) + "\n", encoding="utf-8"
    )
    if args.lr_model:
        lr_model = load_lr(ctx.add_input(args.lr_model))
        lr_entries = [
            _lr_entry(lr_model, post_id, text, args.top_k) for post_id, text in texts
        ]
        pairs = list(zip(entries, lr_entries))
        comparison, key = render.side_by_side_report(pairs, seed=args.seed)
        ctx.out_path("comparison.html").write_text(comparison, encoding="utf-8")
        ctx.out_path("comparison_key.json").write_text(
            json.dumps(key, indent=2) + "\n", encoding="utf-8"
        )
    print(ansi)
    ctx.finish()
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def _build_parser() -> tuple[argparse.ArgumentParser, argparse._SubParsersAction]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global random seed")
    common.add_argument("--config", type=str, default=None, help="flat key=value config file")
    common.add_argument("--out", type=str, default=".", help="output directory")

    parser = argparse.ArgumentParser(
        prog="spanmax",
        description="Interpretable toxicity classification via max-pooled token scores",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--name", type=str, default="corpus.jsonl")
    p.add_argument("--min-words", type=int, default=6)
    p.add_argument("--max-words", type=int, default=14)
    p.add_argument("--frac-toxic", type=float, default=0.35)
    p.add_argument("--frac-context-toxic", type=float, default=0.08)
    p.add_argument("--frac-context-benign", type=float, default=0.12)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("curate", parents=[common], help="build a curated train/test split")
    p.add_argument("--corpus", required=True, help="main corpus JSONL")
    p.add_argument("--span-corpus", required=True, help="span-annotated corpus JSONL")
    p.add_argument("--scale", type=float, default=0.01,
                   help="scale for the standard stratum proportions")
    p.add_argument("--highly-toxic", type=int, default=None)
    p.add_argument("--non-toxic", type=int, default=None)
    p.add_argument("--ambiguous", type=int, default=None)
    p.add_argument("--extra-toxic", type=int, default=None)
    p.add_argument("--span-annotated", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=14 / 30)
    p.add_argument("--min-count", type=int, default=20, help="term-list frequency cutoff")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--train", required=True, help="curated training JSONL")
    p.add_argument("--val", default=None, help="validation JSONL")
    p.add_argument("--mode", choices=("mt", "sp", "cls", "lr"), default="mt")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5,
                   help="classification-task weight in the joint loss")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate (default 1e-3 neural, 1.0 baseline)")
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--ffn-width", type=int, default=128)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--arch", choices=("transformer", "bi-recurrent"), default="transformer")
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--l2", type=float, default=0.1, help="L2 strength for --mode lr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate on a test corpus")
    p.add_argument("--test", required=True, help="test JSONL")
    p.add_argument("--model", choices=("neural", "lr", "both"), default="neural")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--vocab", default=None, help="vocab TSV (default: next to checkpoint)")
    p.add_argument("--lr-model", default=None)
    p.add_argument("--tau-cls", type=float, default=0.5)
    p.add_argument("--tau-span", type=float, default=0.5)
    p.add_argument("--skip-empty-gold", action="store_true",
                   help="exclude posts with empty gold spans from span averaging")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="render highlighted explanations")
    p.add_argument("--input", required=True, help="texts: JSONL or one text per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--lr-model", default=None,
                   help="also render the baseline, blinded side by side")
    p.add_argument("--tau-cls", type=float, default=0.5)
    p.add_argument("--tau-span", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(func=cmd_explain)
    return parser, sub


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CorpusError(f"{path}:{lineno}: expected key=value")
        key, value = stripped.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _typed_defaults(
    sub: argparse._SubParsersAction, command: str, raw: dict[str, str]
) -> dict:
    # keys resolve by dest or by long option name (so "lambda" finds dest "lam")
    actions: dict[str, argparse.Action] = {}
    for action in sub.choices[command]._actions:
        actions[action.dest] = action
        for option in action.option_strings:
            actions[option.lstrip("-").replace("-", "_")] = action
    converted: dict = {}
    for key, value in raw.items():
        action = actions.get(key)
        if action is None:
            raise CorpusError(f"config file sets unknown key {key!r} for {command!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            converted[action.dest] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            converted[action.dest] = action.type(value)
        else:
            converted[action.dest] = value
    return converted


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            defaults = _typed_defaults(sub, args.command, _parse_config_file(args.config))
            parser, sub = _build_parser()
            # defaults must land on the subcommand parser: subparsers parse
            # into a fresh namespace, so top-level defaults would be shadowed
            sub.choices[args.command].set_defaults(**defaults)
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
