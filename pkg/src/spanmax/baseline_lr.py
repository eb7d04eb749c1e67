"""Logistic-regression baseline over stemmed uni/bi-gram counts.

Feature extraction: word tokens (punctuation dropped), a rule-based suffix
stemmer, then unigram counts plus adjacent-bigram counts (bigrams join their
stems with "_").  Training is full-batch gradient descent on mean log-loss
plus an L2 penalty on the weights (bias unpenalized), with backtracking step
halving; it stops when the gradient infinity-norm drops below 1e-6 or the
epoch cap is reached.

Explanations mirror the classic bag-of-features reading: every feature whose
weight * count is strictly positive marks the character offsets of all token
occurrences backing it (a bigram marks both tokens), and each word reports
the sum of its backing features' contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus
from .tokenizer import is_punctuation_token, tokenize

STEMMER_VERSION = 1
_MIN_STEM = 3


class BaselineError(ValueError):
    pass


def stem(token: str) -> str:
    """Deterministic suffix stripping (-ing/-ed/-ly/-es/-s, one pass).

    "es" is stripped only after s/x/z/ch/sh (so "classes" -> "class" but
    "hates" -> "hate" via the plain "-s" rule); a trailing "s" survives after
    "ss".  Stems shorter than three characters are left untouched.
    """
    for suffix in ("ing", "ed", "ly"):
        if token.endswith(suffix) and len(token) - len(suffix) >= _MIN_STEM:
            return token[: -len(suffix)]
    if token.endswith("es"):
        root = token[:-2]
        if len(root) >= _MIN_STEM and (
            root.endswith(("s", "x", "z", "ch", "sh"))
        ):
            return root
    if token.endswith("s") and not token.endswith("ss"):
        root = token[:-1]
        if len(root) >= _MIN_STEM:
            return root
    return token


def _word_stems(text: str) -> list[tuple[str, int, int]]:
    """(stem, start, end) for each word token, punctuation excluded."""
    return [
        (stem(t.surface), t.start, t.end)
        for t in tokenize(text)
        if not is_punctuation_token(t)
    ]


def featurize(text: str) -> dict[str, int]:
    """Counts of stemmed unigrams and adjacent stemmed bigrams."""
    words = _word_stems(text)
    counts: dict[str, int] = {}
    for w, _, _ in words:
        counts[w] = counts.get(w, 0) + 1
    for (a, _, _), (b, _, _) in zip(words, words[1:]):
        key = f"{a}_{b}"
        counts[key] = counts.get(key, 0) + 1
    return counts


@dataclass(frozen=True)
class LrModel:
    feature_ids: dict[str, int]
    weights: np.ndarray
    bias: float
    l2_strength: float
    stemmer_version: int = STEMMER_VERSION

    def weight_of(self, feature: str) -> float:
        idx = self.feature_ids.get(feature)
        return 0.0 if idx is None else float(self.weights[idx])


def _design_matrix(
    texts: Sequence[str], feature_ids: dict[str, int]
) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for i, text in enumerate(texts):
        for feature, count in featurize(text).items():
            j = feature_ids.get(feature)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(count)
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(texts), len(feature_ids)), dtype=np.float64
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_lr(
    corpus: Corpus,
    l2_strength: float = 0.1,
    epochs: int = 2000,
    lr: float = 1.0,
    seed: int = 0,
    grad_tol: float = 1e-6,
) -> LrModel:
    """Fit the baseline by full-batch gradient descent; deterministic given seed.

    The objective is mean log-loss + l2_strength * ||w||^2 (bias excluded
    from the penalty).  The seed is recorded for provenance; optimization
    itself starts from zeros and is deterministic.
    """
    if len(corpus) == 0:
        raise BaselineError("cannot train on an empty corpus")
    if l2_strength < 0:
        raise BaselineError("l2_strength must be non-negative")
    del seed  # zero init; kept in the signature for a uniform training surface
    texts = [p.text for p in corpus]
    y = np.asarray([p.label for p in corpus], dtype=np.float64)
    features = sorted({f for text in texts for f in featurize(text)})
    feature_ids = {f: i for i, f in enumerate(features)}
    X = _design_matrix(texts, feature_ids)
    n = len(texts)
    w = np.zeros(len(features))
    b = 0.0

    def objective(w_: np.ndarray, b_: float) -> float:
        z = X @ w_ + b_
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + l2_strength * w_ @ w_)

    loss = objective(w, b)
    step = lr
    for _ in range(epochs):
        p = _sigmoid(X @ w + b)
        residual = (p - y) / n
        gw = X.T @ residual + 2.0 * l2_strength * w
        gb = float(residual.sum())
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) < grad_tol:
            break
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            loss_new = objective(w_new, b_new)
            if loss_new <= loss or step < 1e-12:
                break
            step *= 0.5
        w, b, loss = w_new, b_new, loss_new
        step = min(step * 1.1, lr)
    return LrModel(
        feature_ids=feature_ids,
        weights=w,
        bias=b,
        l2_strength=l2_strength,
    )


def decision_value(model: LrModel, text: str) -> float:
    z = model.bias
    for feature, count in featurize(text).items():
        z += model.weight_of(feature) * count
    return z


def predict_lr(model: LrModel, text: str) -> float:
    """Probability of the toxic class; unseen features are ignored."""
    return float(_sigmoid(np.asarray([decision_value(model, text)]))[0])


@dataclass(frozen=True)
class WordContribution:
    word: str
    contribution: float
    start: int
    end: int


@dataclass(frozen=True)
class LrExplanation:
    char_set: frozenset[int]
    words: tuple[WordContribution, ...]


def explain_lr(model: LrModel, text: str) -> LrExplanation:
    """Positive-contribution explanation: marked offsets and per-word sums.

    A feature contributes weight * count; strictly positive contributions mark
    every token occurrence backing the feature.  Each word occurrence reports
    the summed contribution of its unigram and the bigrams it participates in.
    """
    words = _word_stems(text)
    counts = featurize(text)
    # occurrence index -> features it backs
    backing: list[list[str]] = [[w] for w, _, _ in words]
    for i in range(len(words) - 1):
        key = f"{words[i][0]}_{words[i + 1][0]}"
        backing[i].append(key)
        backing[i + 1].append(key)

    def contribution(feature: str) -> float:
        return model.weight_of(feature) * counts.get(feature, 0)

    marked: set[int] = set()
    tokens = [t for t in tokenize(text) if not is_punctuation_token(t)]
    out_words = []
    for i, (token, (stem_i, start, end)) in enumerate(zip(tokens, words)):
        total = sum(contribution(f) for f in backing[i])
        if any(contribution(f) > 0 for f in backing[i]):
            marked.update(range(start, end))
        out_words.append(
            WordContribution(word=token.surface, contribution=total, start=start, end=end)
        )
    return LrExplanation(char_set=frozenset(marked), words=tuple(out_words))


# ---------------------------------------------------------------------------
# Model file format: header line, then feature<TAB>weight rows
# ---------------------------------------------------------------------------

def save_lr(model: LrModel, path: str | Path) -> None:
    lines = [
        f"#spanmax-lr\tversion=1\tbias={float(model.bias)!r}"
        f"\tl2_strength={float(model.l2_strength)!r}\tstemmer={model.stemmer_version}"
    ]
    for feature, idx in sorted(model.feature_ids.items()):
        lines.append(f"{feature}\t{float(model.weights[idx])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lr(path: str | Path) -> LrModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#spanmax-lr"):
        raise BaselineError(f"{path}: missing LR model header")
    fields = dict(
        part.split("=", 1) for part in lines[0].split("\t")[1:] if "=" in part
    )
    features: list[tuple[str, float]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        feature, weight = line.split("\t")
        features.append((feature, float(weight)))
    return LrModel(
        feature_ids={f: i for i, (f, _) in enumerate(features)},
        weights=np.asarray([w for _, w in features], dtype=np.float64),
        bias=float(fields["bias"]),
        l2_strength=float(fields["l2_strength"]),
        stemmer_version=int(fields["stemmer"]),
    )
