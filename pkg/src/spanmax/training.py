"""Joint multi-task optimization with interleaved updates and checkpointing.

Three training modes share one parameter space:

* ``mt``  -- alternates one batch of span-annotated samples (joint loss:
  lam * classification + (1 - lam) * span) with one batch of label-only
  samples (classification loss alone), matching a 1:1 interleave; when one
  stream runs out the other finishes the epoch.
* ``sp``  -- span-detection loss only, trained on the annotated subset;
  sequence predictions still come from max pooling at inference.
* ``cls`` -- ablation: mean-pooled sequence classifier with a binary
  cross-entropy objective and no token supervision.

Both task losses are mean squared error: sequence scores against binary
labels, token scores against aligned 0/1 token labels (averaged over tokens,
then posts).  The max-pool backward routes gradient to the earliest argmax
token only.

Checkpoints are a self-describing binary format: magic ``SPMX``, a u32
format version, a JSON header (encoder config, mode, vocab hash, step
counter, RNG state), then a tensor table of (name, shape, little-endian f64
data) entries sorted by name.  ``load(save(x))`` round-trips bitwise.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict, dataclass
from itertools import zip_longest
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward_batch,
    forward_batch,
    init_params,
)
from .head import HeadParams, SpanMaxModel, init_head, sigmoid
from .metrics import classification_report
from .tokenizer import TokenizedPost, Vocab, build_vocab, tokenize_post

TRAIN_MODES = ("mt", "sp", "cls")

CHECKPOINT_MAGIC = b"SPMX"
CHECKPOINT_VERSION = 1


class TrainingError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Non-finite gradient or loss; training aborts with a diagnostic."""


class CheckpointError(ValueError):
    pass


class VocabMismatchError(ValueError):
    """Checkpoint was trained against a different vocabulary."""


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    mode: str = "mt"
    min_freq: int = 2
    early_stop: bool = False
    patience: int = 3

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise TrainingError(f"lam must lie in [0, 1], got {self.lam}")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise TrainingError("learning_rate, epochs, and batch_size must be positive")
        if self.mode not in TRAIN_MODES:
            raise TrainingError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.patience < 1:
            raise TrainingError("patience must be at least 1")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-batch loss terms: l_c and l_s are unweighted; total applies lam."""

    l_c: float | None
    l_s: float | None
    total: float


@dataclass(frozen=True)
class Example:
    tokenized: TokenizedPost
    label: float


def build_examples(
    corpus: Corpus,
    vocab: Vocab,
    max_len: int,
    require_token_labels: bool = False,
) -> list[Example]:
    examples = []
    for post in corpus:
        tp = tokenize_post(post, vocab, max_len)
        if len(tp) == 0:
            raise TrainingError(f"post {post.id!r} has no tokens")
        if require_token_labels and tp.token_labels is None:
            raise TrainingError(f"post {post.id!r} lacks span annotations")
        examples.append(Example(tokenized=tp, label=float(post.label)))
    return examples


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse(pred, target) -> float:
    """Mean of squared differences; errors on length mismatch."""
    p = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise TrainingError(f"mse shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def _batch_scores(examples: Sequence[Example], model: SpanMaxModel):
    out = forward_batch([ex.tokenized.ids for ex in examples], model.encoder)
    z = out.H @ model.head.w + model.head.b[0]
    return out, sigmoid(z)


def _max_scores(s: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    masked = np.where(mask, s, -1.0)  # scores live in (0, 1); -1 never wins
    am = masked.argmax(axis=1)
    return s[np.arange(s.shape[0]), am], am


def classification_loss(examples: Sequence[Example], model: SpanMaxModel) -> float:
    """MSE between max-pooled sequence scores and binary labels."""
    out, s = _batch_scores(examples, model)
    s_tilde, _ = _max_scores(s, out.mask)
    return mse(s_tilde, [ex.label for ex in examples])


def span_loss(examples: Sequence[Example], model: SpanMaxModel) -> float:
    """MSE between token scores and token labels, averaged over tokens then posts."""
    for ex in examples:
        if ex.tokenized.token_labels is None:
            raise TrainingError(f"post {ex.tokenized.post_id!r} has no token labels")
    out, s = _batch_scores(examples, model)
    per_post = []
    for b, ex in enumerate(examples):
        n = out.lengths[b]
        y = np.asarray(ex.tokenized.token_labels, dtype=np.float64)
        per_post.append(np.mean((s[b, :n] - y) ** 2))
    return float(np.mean(per_post))


def joint_loss(examples: Sequence[Example], model: SpanMaxModel, lam: float) -> LossBreakdown:
    """Weighted two-task loss; falls back to classification when no span targets.

    The classification term covers every example in the batch; the span term
    covers the span-annotated subset.  With no annotated examples the total is
    the plain classification loss.
    """
    l_c = classification_loss(examples, model)
    annotated = [ex for ex in examples if ex.tokenized.token_labels is not None]
    if not annotated:
        return LossBreakdown(l_c=l_c, l_s=None, total=l_c)
    l_s = span_loss(annotated, model)
    return LossBreakdown(l_c=l_c, l_s=l_s, total=lam * l_c + (1.0 - lam) * l_s)


def _loss_and_grads(
    examples: Sequence[Example],
    model: SpanMaxModel,
    cls_coef: float,
    span_coef: float,
    pooling: str = "max",
):
    """One fused forward/backward pass over a batch.

    Returns (LossBreakdown, grads) where grads covers encoder tensors plus
    ``head.w``/``head.b``.  ``pooling`` selects the sequence circuit: ``max``
    (MSE on the max token score) or ``mean`` (BCE on a mean-pooled score, the
    cls-style ablation).
    """
    out, s = _batch_scores(examples, model)
    B = len(examples)
    y = np.asarray([ex.label for ex in examples], dtype=np.float64)
    w = model.head.w
    ds = np.zeros_like(s)
    dH_extra = None
    dw_extra = np.zeros_like(w)
    db_extra = 0.0
    l_c: float | None = None
    l_s: float | None = None
    total = 0.0

    if pooling == "mean":
        lengths = np.asarray(out.lengths, dtype=np.float64)
        pooled = (out.H * out.mask[:, :, None]).sum(axis=1) / lengths[:, None]
        z_tilde = pooled @ w + model.head.b[0]
        p = sigmoid(z_tilde)
        l_c = float(np.mean(np.logaddexp(0.0, z_tilde) - y * z_tilde))
        total = cls_coef * l_c
        dz = cls_coef * (p - y) / B
        dw_extra += pooled.T @ dz
        db_extra += float(dz.sum())
        dH_extra = (dz / lengths)[:, None, None] * w[None, None, :] * out.mask[:, :, None]
    elif cls_coef != 0.0:
        s_tilde, am = _max_scores(s, out.mask)
        l_c = mse(s_tilde, y)
        total += cls_coef * l_c
        ds[np.arange(B), am] += cls_coef * 2.0 * (s_tilde - y) / B

    if span_coef != 0.0 and pooling != "mean":
        per_post = []
        for b, ex in enumerate(examples):
            if ex.tokenized.token_labels is None:
                raise TrainingError(f"post {ex.tokenized.post_id!r} has no token labels")
            n = out.lengths[b]
            t = np.asarray(ex.tokenized.token_labels, dtype=np.float64)
            diff = s[b, :n] - t
            per_post.append(np.mean(diff**2))
            ds[b, :n] += span_coef * 2.0 * diff / (n * B)
        l_s = float(np.mean(per_post))
        total += span_coef * l_s

    dz_tok = ds * s * (1.0 - s)
    dH = dz_tok[:, :, None] * w[None, None, :]
    if dH_extra is not None:
        dH = dH + dH_extra
    grads, _ = backward_batch(out, dH, model.encoder)
    grads["head.w"] = np.einsum("bt,btd->d", dz_tok, out.H) + dw_extra
    grads["head.b"] = np.asarray([dz_tok.sum() + db_extra])
    return LossBreakdown(l_c=l_c, l_s=l_s, total=float(total)), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
            t=0,
        )


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place; aborts on non-finite grads."""
    for name, g in grads.items():
        if name not in tensors:
            raise TrainingError(f"gradient for unknown tensor {name!r}")
        if g.shape != tensors[name].shape:
            raise TrainingError(
                f"gradient shape {g.shape} does not match tensor {name!r} {tensors[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name!r} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return tensors, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    total: float
    l_c: float | None
    l_s: float | None
    val_macro_f1: float | None


@dataclass
class TrainResult:
    checkpoint: "Checkpoint"
    model: SpanMaxModel
    metrics: list[EpochMetrics]
    vocab: Vocab


def sequence_scores(
    examples: Sequence[Example],
    model: SpanMaxModel,
    pooling: str = "max",
    batch_size: int = 64,
) -> np.ndarray:
    """Sequence scores for a list of examples, batched for speed."""
    values = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        out, s = _batch_scores(chunk, model)
        if pooling == "mean":
            lengths = np.asarray(out.lengths, dtype=np.float64)
            pooled = (out.H * out.mask[:, :, None]).sum(axis=1) / lengths[:, None]
            values.append(sigmoid(pooled @ model.head.w + model.head.b[0]))
        else:
            s_tilde, _ = _max_scores(s, out.mask)
            values.append(s_tilde)
    return np.concatenate(values) if values else np.zeros(0)


def _chunks(indices: np.ndarray, size: int) -> list[np.ndarray]:
    return [indices[i : i + size] for i in range(0, len(indices), size)]


def train(
    train_corpus: Corpus,
    span_corpus: Corpus,
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    vocab: Vocab | None = None,
    val_corpus: Corpus | None = None,
) -> TrainResult:
    """Train a model per ``config.mode``; deterministic given the seed.

    ``train_corpus`` holds label-only samples, ``span_corpus`` the annotated
    ones.  The returned checkpoint includes optimizer state and the RNG state
    so training can be replayed.
    """
    if config.mode == "mt" and len(span_corpus) == 0:
        raise TrainingError("mt mode needs a non-empty span corpus")
    if config.mode == "sp" and len(span_corpus) == 0:
        raise TrainingError("sp mode needs a non-empty span corpus")
    if len(train_corpus) == 0 and len(span_corpus) == 0:
        raise TrainingError("both corpora are empty")

    if vocab is None:
        merged = Corpus(posts=tuple(train_corpus.posts + span_corpus.posts), role="mixed")
        vocab = build_vocab(merged, min_freq=config.min_freq)
    if encoder_config is None:
        encoder_config = EncoderConfig(vocab_size=len(vocab))
    elif encoder_config.vocab_size != len(vocab):
        raise TrainingError(
            f"encoder vocab_size {encoder_config.vocab_size} != vocabulary size {len(vocab)}"
        )

    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    params = init_params(encoder_config, seed=int(seeds[0]))
    head = init_head(encoder_config.d, seed=int(seeds[1]))
    rng = np.random.default_rng(int(seeds[2]))
    tensors: dict[str, np.ndarray] = dict(params.tensors)
    tensors["head.w"] = head.w
    tensors["head.b"] = head.b
    model = SpanMaxModel(encoder=params, head=head, vocab=vocab, mode=config.mode)

    cls_examples = build_examples(train_corpus, vocab, encoder_config.max_len)
    span_examples = build_examples(
        span_corpus, vocab, encoder_config.max_len, require_token_labels=True
    )
    val_examples = (
        build_examples(val_corpus, vocab, encoder_config.max_len) if val_corpus else None
    )

    state = AdamState.zeros(tensors)
    metrics: list[EpochMetrics] = []
    best_f1 = -1.0
    best_snapshot: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(1, config.epochs + 1):
        schedule: list[tuple[Sequence[Example], float, float, str]] = []
        if config.mode == "mt":
            span_batches = _chunks(rng.permutation(len(span_examples)), config.batch_size)
            cls_batches = _chunks(rng.permutation(len(cls_examples)), config.batch_size)
            for sb, cb in zip_longest(span_batches, cls_batches):
                if sb is not None:
                    batch = [span_examples[int(i)] for i in sb]
                    schedule.append((batch, config.lam, 1.0 - config.lam, "max"))
                if cb is not None:
                    batch = [cls_examples[int(i)] for i in cb]
                    schedule.append((batch, 1.0, 0.0, "max"))
        elif config.mode == "sp":
            for sb in _chunks(rng.permutation(len(span_examples)), config.batch_size):
                schedule.append(([span_examples[int(i)] for i in sb], 0.0, 1.0, "max"))
        else:  # cls-style ablation: labels only, mean pooling
            pool = cls_examples + span_examples
            for cb in _chunks(rng.permutation(len(pool)), config.batch_size):
                schedule.append(([pool[int(i)] for i in cb], 1.0, 0.0, "mean"))

        totals, lcs, lss = [], [], []
        for batch, cls_coef, span_coef, pooling in schedule:
            breakdown, grads = _loss_and_grads(batch, model, cls_coef, span_coef, pooling)
            adam_step(tensors, grads, state, config.learning_rate)
            totals.append(breakdown.total)
            if breakdown.l_c is not None:
                lcs.append(breakdown.l_c)
            if breakdown.l_s is not None:
                lss.append(breakdown.l_s)

        val_f1 = None
        if val_examples is not None:
            pooling = "mean" if config.mode == "cls" else "max"
            scores = sequence_scores(val_examples, model, pooling=pooling)
            pred = (scores >= 0.5).astype(int)
            gold = [int(ex.label) for ex in val_examples]
            val_f1 = classification_report(gold, pred.tolist()).macro_f1
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                total=float(np.mean(totals)) if totals else 0.0,
                l_c=float(np.mean(lcs)) if lcs else None,
                l_s=float(np.mean(lss)) if lss else None,
                val_macro_f1=val_f1,
            )
        )

        if config.early_stop and val_f1 is not None:
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_snapshot = {k: a.copy() for k, a in tensors.items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if best_snapshot is not None:
        for key, arr in best_snapshot.items():
            tensors[key][...] = arr

    checkpoint = Checkpoint(
        version=CHECKPOINT_VERSION,
        config=encoder_config,
        tensors={
            **{k: v for k, v in tensors.items()},
            **{f"adam.m.{k}": v for k, v in state.m.items()},
            **{f"adam.v.{k}": v for k, v in state.v.items()},
        },
        vocab_sha256=vocab.sha256(),
        step=state.t,
        rng_state=rng.bit_generator.state,
        mode=config.mode,
    )
    return TrainResult(checkpoint=checkpoint, model=model, metrics=metrics, vocab=vocab)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    version: int
    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    vocab_sha256: str
    step: int
    rng_state: dict
    mode: str


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write the binary checkpoint atomically (temp file + rename)."""
    path = Path(path)
    header = {
        "config": asdict(ckpt.config),
        "mode": ckpt.mode,
        "rng_state": ckpt.rng_state,
        "step": ckpt.step,
        "vocab_sha256": ckpt.vocab_sha256,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", ckpt.version)
    buf += struct.pack("<I", len(header_bytes))
    buf += header_bytes
    names = sorted(ckpt.tensors)
    buf += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint, rejecting bad magic, version skew, and truncation."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(
                f"truncated checkpoint: need {n} bytes at offset {pos}, "
                f"have {len(data) - pos}"
            )
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("wrong magic header (not a checkpoint file)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    (header_len,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        raw = take(8 * n_values)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes at offset {pos}")
    return Checkpoint(
        version=version,
        config=EncoderConfig(**header["config"]),
        tensors=tensors,
        vocab_sha256=header["vocab_sha256"],
        step=header["step"],
        rng_state=header["rng_state"],
        mode=header["mode"],
    )


def model_from_checkpoint(ckpt: Checkpoint, vocab: Vocab) -> SpanMaxModel:
    """Rebuild an inference model, verifying the vocabulary hash binding."""
    if vocab.sha256() != ckpt.vocab_sha256:
        raise VocabMismatchError(
            f"vocab hash {vocab.sha256()[:12]} does not match checkpoint "
            f"{ckpt.vocab_sha256[:12]}"
        )
    enc_tensors = {
        k: v
        for k, v in ckpt.tensors.items()
        if not k.startswith("adam.") and not k.startswith("head.")
    }
    return SpanMaxModel(
        encoder=EncoderParams(config=ckpt.config, tensors=enc_tensors),
        head=HeadParams(w=ckpt.tensors["head.w"], b=ckpt.tensors["head.b"]),
        vocab=vocab,
        mode=ckpt.mode,
    )


def write_metrics_csv(metrics: Sequence[EpochMetrics], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "L", "L_C", "L_S", "val_macro_f1"])
        for row in metrics:
            writer.writerow(
                [
                    row.epoch,
                    row.total,
                    "" if row.l_c is None else row.l_c,
                    "" if row.l_s is None else row.l_s,
                    "" if row.val_macro_f1 is None else row.val_macro_f1,
                ]
            )
