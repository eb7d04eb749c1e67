"""Token scoring head, max-pool aggregation, and explanation extraction.

The head is a single affine map shared across positions: every token gets a
toxicity score s_i = sigmoid(h_i . w + b), and the sequence score is exactly
max(s) -- the sequence is scored by its most toxic token, no averaging or
approximation.  Ties resolve to the earliest index so explanations are
deterministic.  Explanations are the k highest-scoring word tokens;
punctuation tokens participate in the max but are never offered as words.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .encoder import EncoderParams, forward
from .tokenizer import (
    Token,
    Vocab,
    encode,
    is_punctuation_token,
    tokenize,
    tokens_to_char_set,
)


class HeadError(ValueError):
    pass


@dataclass
class HeadParams:
    """Affine scoring head: weight vector w of shape (d,), bias b of shape (1,)."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if self.w.ndim != 1 or self.b.shape != (1,):
            raise HeadError("head expects w of shape (d,) and b of shape (1,)")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise HeadError("head parameters must be finite")


def init_head(d: int, seed: int) -> HeadParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)
    return HeadParams(w=rng.uniform(-scale, scale, size=d), b=np.zeros(1))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def token_scores(H: np.ndarray, head: HeadParams) -> np.ndarray:
    """Per-token scores sigmoid(H . w + b); works on (n, d) or (B, T, d)."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[-1] != head.w.shape[0]:
        raise HeadError(f"hidden width {H.shape[-1]} does not match head ({head.w.shape[0]})")
    return sigmoid(H @ head.w + head.b[0])


class SequenceScore(NamedTuple):
    value: float
    index: int


def sequence_score(scores: Sequence[float]) -> SequenceScore:
    """Exact maximum of the token scores and its earliest attaining index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise HeadError("sequence_score of an empty score vector")
    index = int(np.argmax(s))  # argmax returns the first maximum
    return SequenceScore(value=float(s[index]), index=index)


def mean_pool_score(H: np.ndarray, head: HeadParams) -> float:
    """Mean-pooled sequence score: the aggregation used by the cls-style ablation."""
    H = np.asarray(H, dtype=np.float64)
    return float(sigmoid(H.mean(axis=0) @ head.w + head.b[0]))


def top_k_explanation(
    tokens: Sequence[Token], scores: Sequence[float], k: int = 3
) -> list[tuple[str, float]]:
    """The k highest-scoring words as (word, score), earliest-first on ties.

    Punctuation tokens are skipped; if fewer than k words exist, all of them
    are returned.
    """
    if k < 1:
        raise HeadError("k must be at least 1")
    s = np.asarray(scores, dtype=np.float64)
    if len(tokens) != s.size:
        raise HeadError("tokens and scores must have equal length")
    word_indices = [i for i, t in enumerate(tokens) if not is_punctuation_token(t)]
    ranked = sorted(word_indices, key=lambda i: (-s[i], i))[:k]
    return [(tokens[i].surface, float(s[i])) for i in ranked]


@dataclass(frozen=True)
class Prediction:
    """A scored sequence: token scores, their max, label, and explanation."""

    post_id: str
    tokens: tuple[Token, ...]
    token_scores: tuple[float, ...]
    sequence_score: float
    argmax_index: int
    label: int
    explanation: tuple[tuple[str, float], ...]
    predicted_char_set: frozenset[int]

    def to_record(self) -> dict:
        return {
            "id": self.post_id,
            "label": self.label,
            "score": self.sequence_score,
            "tokens": [
                {"surface": t.surface, "start": t.start, "end": t.end, "score": s}
                for t, s in zip(self.tokens, self.token_scores)
            ],
            "explanation": [{"word": w, "score": s} for w, s in self.explanation],
        }


@dataclass
class SpanMaxModel:
    """Everything needed for inference: encoder, head, vocabulary, and mode."""

    encoder: EncoderParams
    head: HeadParams
    vocab: Vocab
    mode: str = "mt"


def score_text(model: SpanMaxModel, text: str) -> tuple[list[Token], np.ndarray]:
    """Tokenize, encode, and score one text; errors on untokenizable input."""
    tokens = tokenize(text)
    if not tokens:
        raise HeadError("text produced no tokens")
    tokens, ids = encode(tokens, model.vocab, model.encoder.config.max_len)
    H = forward(ids, model.encoder).H
    return tokens, token_scores(H, model.head)


def predict_pooled(
    text: str,
    model: SpanMaxModel,
    tau_cls: float = 0.5,
    tau_span: float = 0.5,
    k: int = 3,
    post_id: str = "",
) -> Prediction:
    """Score with mean pooling instead of max: the cls-style ablation path.

    The returned record relaxes the max-pool invariant (its sequence score is
    the pooled score, not max(s)); token scores and spans still come from the
    shared head so the ablation stays comparable in reports.
    """
    tokens = tokenize(text)
    if not tokens:
        raise HeadError("text produced no tokens")
    tokens, ids = encode(tokens, model.vocab, model.encoder.config.max_len)
    H = forward(ids, model.encoder).H
    s = token_scores(H, model.head)
    pooled = mean_pool_score(H, model.head)
    selected = [i for i, v in enumerate(s) if v >= tau_span]
    return Prediction(
        post_id=post_id,
        tokens=tuple(tokens),
        token_scores=tuple(float(v) for v in s),
        sequence_score=pooled,
        argmax_index=int(np.argmax(s)),
        label=1 if pooled >= tau_cls else 0,
        explanation=tuple(top_k_explanation(tokens, s, k)),
        predicted_char_set=frozenset(tokens_to_char_set(tokens, selected)),
    )


def predict(
    text: str,
    model: SpanMaxModel,
    tau_cls: float = 0.5,
    tau_span: float = 0.5,
    k: int = 3,
    post_id: str = "",
) -> Prediction:
    """Full prediction: scores, max-pooled label, explanation, and span offsets.

    The label is 1 iff the sequence score (the exact max of token scores)
    reaches ``tau_cls``; the predicted character set unions the offsets of all
    tokens scoring at least ``tau_span``.
    """
    tokens, s = score_text(model, text)
    top = sequence_score(s)
    selected = [i for i, v in enumerate(s) if v >= tau_span]
    return Prediction(
        post_id=post_id,
        tokens=tuple(tokens),
        token_scores=tuple(float(v) for v in s),
        sequence_score=top.value,
        argmax_index=top.index,
        label=1 if top.value >= tau_cls else 0,
        explanation=tuple(top_k_explanation(tokens, s, k)),
        predicted_char_set=frozenset(tokens_to_char_set(tokens, selected)),
    )
