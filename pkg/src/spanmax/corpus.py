"""Dataset model, JSONL ingestion, curation, and synthetic corpus generation.

A corpus is an ordered collection of posts.  Each post carries a real-valued
toxicity in [0, 1], a binary label derived from it, and optionally a set of
gold character spans marking the toxic part of the text.  Span offsets are
Unicode code-point offsets, half-open [start, end).

``spans is None`` means no span annotation exists for the post; an empty
tuple means the post was annotated as having no toxic span.  The two cases
are handled differently during training: a toxic post with an empty span set
is used for classification loss only.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

Span = tuple[int, int]

CORPUS_ROLES = ("classification", "span", "mixed")


class CorpusError(ValueError):
    """Malformed records, out-of-range values, or infeasible sampling requests."""


def binarize(toxicity: float, threshold: float = 0.5) -> int:
    """Cast a toxicity score to a binary label: 1 iff toxicity >= threshold."""
    if not 0.0 <= toxicity <= 1.0:
        raise CorpusError(f"toxicity {toxicity!r} outside [0, 1]")
    return 1 if toxicity >= threshold else 0


def normalize_spans(spans: Iterable[Iterable[int]], text_len: int) -> tuple[Span, ...]:
    """Sort spans, merge overlapping or touching ranges, and bounds-check them."""
    cleaned: list[Span] = []
    for raw in spans:
        pair = tuple(raw)
        if len(pair) != 2:
            raise CorpusError(f"span {raw!r} is not a [start, end) pair")
        start, end = int(pair[0]), int(pair[1])
        if not 0 <= start < end <= text_len:
            raise CorpusError(
                f"span [{start}, {end}) out of bounds for text of length {text_len}"
            )
        cleaned.append((start, end))
    cleaned.sort()
    merged: list[Span] = []
    for start, end in cleaned:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return tuple(merged)


@dataclass(frozen=True)
class Post:
    """One text sample with toxicity, derived label, and optional gold spans."""

    id: str
    text: str
    toxicity: float
    label: int
    spans: tuple[Span, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.toxicity <= 1.0:
            raise CorpusError(f"post {self.id!r}: toxicity {self.toxicity} outside [0, 1]")
        if self.spans is None:
            return
        prev_end = -1
        for start, end in self.spans:
            if not 0 <= start < end <= len(self.text):
                raise CorpusError(f"post {self.id!r}: span [{start}, {end}) out of bounds")
            if start <= prev_end:
                raise CorpusError(f"post {self.id!r}: spans not sorted and disjoint")
            prev_end = end

    def span_char_set(self) -> frozenset[int]:
        """All character offsets covered by the gold spans (empty if unannotated)."""
        if not self.spans:
            return frozenset()
        return frozenset(c for start, end in self.spans for c in range(start, end))


def make_post(
    id: str,
    text: str,
    toxicity: float,
    spans: Iterable[Iterable[int]] | None = None,
    threshold: float = 0.5,
) -> Post:
    """Build a post with normalized spans and a label derived from the toxicity."""
    norm = None if spans is None else normalize_spans(spans, len(text))
    return Post(id=str(id), text=text, toxicity=float(toxicity),
                label=binarize(float(toxicity), threshold), spans=norm)


@dataclass(frozen=True)
class Corpus:
    """An ordered, id-unique collection of posts."""

    posts: tuple[Post, ...]
    role: str = "mixed"

    def __post_init__(self) -> None:
        if self.role not in CORPUS_ROLES:
            raise CorpusError(f"unknown corpus role {self.role!r}")
        seen: set[str] = set()
        for post in self.posts:
            if post.id in seen:
                raise CorpusError(f"duplicate post id {post.id!r}")
            seen.add(post.id)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self) -> Iterator[Post]:
        return iter(self.posts)

    def __getitem__(self, index: int) -> Post:
        return self.posts[index]

    def ids(self) -> frozenset[str]:
        return frozenset(post.id for post in self.posts)


def load_jsonl(path: str | Path, threshold: float = 0.5, role: str = "mixed") -> Corpus:
    """Read a corpus from a UTF-8 JSONL file.

    Each line must hold an object with ``id``, ``text``, ``toxicity``, and an
    optional ``spans`` list of [start, end) pairs.  Overlapping spans are
    merged on load.  Errors name the offending line.
    """
    path = Path(path)
    posts: list[Post] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            for key in ("id", "text", "toxicity"):
                if key not in record:
                    raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
            try:
                posts.append(
                    make_post(
                        id=record["id"],
                        text=record["text"],
                        toxicity=record["toxicity"],
                        spans=record.get("spans"),
                        threshold=threshold,
                    )
                )
            except (CorpusError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return Corpus(posts=tuple(posts), role=role)


def save_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in the JSONL interchange format (spans omitted when absent)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for post in corpus:
            record: dict = {"id": post.id, "text": post.text, "toxicity": post.toxicity}
            if post.spans is not None:
                record["spans"] = [list(span) for span in post.spans]
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Term frequency list and ambiguous-sample mining
# ---------------------------------------------------------------------------

def _is_punct(char: str) -> bool:
    return unicodedata.category(char).startswith("P")


def iter_terms(text: str) -> Iterator[tuple[str, int, int]]:
    """Yield (lowercased term, start, end) for whitespace-delimited terms.

    Surrounding punctuation is stripped from each chunk; interior punctuation
    is kept (so "a-hole" is one term while "idiots!" yields "idiots").
    """
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        start, end = i, j
        while start < end and _is_punct(text[start]):
            start += 1
        while end > start and _is_punct(text[end - 1]):
            end -= 1
        if start < end:
            yield text[start:end].lower(), start, end
        i = j


@dataclass(frozen=True)
class TermFrequencyList:
    """Terms counted inside annotated toxic spans, sorted by descending count."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for term, count in self.entries:
            if count < 1:
                raise CorpusError(f"term {term!r} has non-positive count {count}")

    def counts(self) -> dict[str, int]:
        return dict(self.entries)

    def __contains__(self, term: str) -> bool:
        return any(term == entry for entry, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def terms(self) -> frozenset[str]:
        return frozenset(term for term, _ in self.entries)

    def to_tsv(self) -> str:
        return "".join(f"{term}\t{count}\n" for term, count in self.entries)

    @classmethod
    def from_tsv(cls, text: str) -> "TermFrequencyList":
        entries = []
        for line in text.splitlines():
            if not line.strip():
                continue
            term, count = line.split("\t")
            entries.append((term, int(count)))
        return cls(entries=tuple(entries))


def build_toxic_term_list(span_corpus: Corpus, min_count: int = 20) -> TermFrequencyList:
    """Count terms whose characters fall entirely inside annotated spans.

    Returns the terms seen at least ``min_count`` times, ordered by descending
    count (ties broken lexicographically).
    """
    annotated = [post for post in span_corpus if post.spans is not None]
    if not annotated:
        raise CorpusError("corpus has no span annotations")
    counts: dict[str, int] = {}
    for post in annotated:
        if not post.spans:
            continue
        covered = post.span_char_set()
        for term, start, end in iter_terms(post.text):
            if all(c in covered for c in range(start, end)):
                counts[term] = counts.get(term, 0) + 1
    kept = [(term, count) for term, count in counts.items() if count >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return TermFrequencyList(entries=tuple(kept))


def mine_ambiguous(
    corpus: Corpus,
    terms: TermFrequencyList,
    lo: float = 0.1,
    hi: float = 0.3,
) -> Corpus:
    """Select mildly-scored posts (lo <= toxicity <= hi) containing a listed term."""
    listed = terms.terms()
    picked = [
        post
        for post in corpus
        if lo <= post.toxicity <= hi
        and any(term in listed for term, _, _ in iter_terms(post.text))
    ]
    return Corpus(posts=tuple(picked), role=corpus.role)


# ---------------------------------------------------------------------------
# Curation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurationConfig:
    """Stratum sizes and split fraction for building a curated corpus.

    The default proportions follow the 30,000-sample recipe: equal clear-cut
    toxic/non-toxic pools (a sub-quota of the toxic pool drawn from the
    span-annotated corpus), an ambiguous stratum of innocuous uses of frequent
    toxic terms, an equal top-up of extra toxic posts, and a 14/30 train split.
    """

    highly_toxic: int
    non_toxic: int
    ambiguous: int
    extra_toxic: int
    span_annotated: int
    train_fraction: float = 14 / 30
    seed: int = 0
    toxic_cutoff: float = 0.8
    clean_cutoff: float = 0.1
    ambiguous_lo: float = 0.1
    ambiguous_hi: float = 0.3

    def __post_init__(self) -> None:
        for name in ("highly_toxic", "non_toxic", "ambiguous", "extra_toxic", "span_annotated"):
            if getattr(self, name) < 0:
                raise CorpusError(f"{name} must be non-negative")
        if self.span_annotated > self.highly_toxic:
            raise CorpusError("span_annotated cannot exceed the highly_toxic quota")
        if not 0.0 < self.train_fraction < 1.0:
            raise CorpusError("train_fraction must lie strictly between 0 and 1")

    @classmethod
    def paper_proportions(cls, scale: float = 1.0, seed: int = 0) -> "CurationConfig":
        """Scale the 7,000/7,000/8,000/8,000 recipe (3,000 span-annotated) by ``scale``."""
        return cls(
            highly_toxic=round(7000 * scale),
            non_toxic=round(7000 * scale),
            ambiguous=round(8000 * scale),
            extra_toxic=round(8000 * scale),
            span_annotated=round(3000 * scale),
            train_fraction=14 / 30,
            seed=seed,
        )

    def total(self) -> int:
        return self.highly_toxic + self.non_toxic + self.ambiguous + self.extra_toxic


def _sample_stratum(
    pool: list[Post], k: int, rng: np.random.Generator, stratum: str
) -> list[Post]:
    if len(pool) < k:
        raise CorpusError(f"stratum '{stratum}': need {k} posts, have {len(pool)}")
    if k == 0:
        return []
    chosen = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(int(i) for i in chosen)]


def curate(
    corpus: Corpus,
    span_corpus: Corpus,
    config: CurationConfig,
    term_list: TermFrequencyList | None = None,
) -> tuple[Corpus, Corpus]:
    """Assemble a curated train/test pair by stratified sampling without replacement.

    Strata, in sampling order: span-annotated highly toxic posts (drawn from
    ``span_corpus``, spans kept), remaining highly toxic posts, clearly
    non-toxic posts, ambiguous posts containing frequent span terms, and an
    extra toxic top-up.  Only the span-annotated stratum keeps its spans; all
    other samples are marked unannotated.  A seeded shuffle then splits the
    pool by ``config.train_fraction``.
    """
    if term_list is None:
        term_list = build_toxic_term_list(span_corpus)
    rng = np.random.default_rng(config.seed)
    taken: set[str] = set()

    def available(posts: Iterable[Post]) -> list[Post]:
        return [p for p in posts if p.id not in taken]

    span_pool = available(
        p for p in span_corpus
        if p.toxicity > config.toxic_cutoff and p.spans is not None
    )
    with_spans = _sample_stratum(span_pool, config.span_annotated, rng, "span-annotated toxic")
    taken.update(p.id for p in with_spans)

    toxic_pool = available(p for p in corpus if p.toxicity > config.toxic_cutoff)
    plain_toxic = _sample_stratum(
        toxic_pool, config.highly_toxic - config.span_annotated, rng, "highly toxic"
    )
    taken.update(p.id for p in plain_toxic)

    clean_pool = available(p for p in corpus if p.toxicity < config.clean_cutoff)
    clean = _sample_stratum(clean_pool, config.non_toxic, rng, "non-toxic")
    taken.update(p.id for p in clean)

    ambiguous_pool = available(
        mine_ambiguous(corpus, term_list, config.ambiguous_lo, config.ambiguous_hi)
    )
    ambiguous = _sample_stratum(ambiguous_pool, config.ambiguous, rng, "ambiguous non-toxic")
    taken.update(p.id for p in ambiguous)

    extra_pool = available(p for p in corpus if p.toxicity > config.toxic_cutoff)
    extra = _sample_stratum(extra_pool, config.extra_toxic, rng, "extra toxic")
    taken.update(p.id for p in extra)

    pool = (
        with_spans
        + [replace(p, spans=None) for p in plain_toxic + clean + ambiguous + extra]
    )
    order = rng.permutation(len(pool))
    shuffled = [pool[int(i)] for i in order]
    n_train = int(len(shuffled) * config.train_fraction + 0.5)
    train = Corpus(posts=tuple(shuffled[:n_train]), role="mixed")
    test = Corpus(posts=tuple(shuffled[n_train:]), role="mixed")
    return train, test


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

_SYLLABLES = (
    "ba", "do", "ri", "ta", "mu", "ne", "ko", "sel", "va", "pin",
    "lor", "ke", "mi", "ran", "to", "fe",
)


def _benign_word(index: int) -> str:
    """Deterministic pronounceable filler word for a vocabulary index."""
    base = len(_SYLLABLES)
    first, second = divmod(index, base)
    word = _SYLLABLES[first % base] + _SYLLABLES[second]
    if index >= base * base:
        word += _SYLLABLES[(index // (base * base)) % base]
    return word


@dataclass(frozen=True)
class ContextRule:
    """A term that is toxic only when it completes a specific trigram.

    The post is toxic exactly when the text contains
    ``trigger[0] trigger[1] term`` as three consecutive words; the same term
    preceded by any other word is innocuous.  Trigger words also occur freely
    in benign text, so no unigram or bigram separates the two uses.
    """

    term: str
    trigger: tuple[str, str]


@dataclass(frozen=True)
class SynthConfig:
    """Mixture weights and shape parameters for the synthetic generator."""

    size: int
    toxic_lexicon: tuple[str, ...] = ("zorg", "frubbit", "klarv", "snagger")
    context_rules: tuple[ContextRule, ...] = (
        ContextRule(term="drazzle", trigger=("mulor", "keta")),
        ContextRule(term="quopp", trigger=("seldo", "rinpa")),
    )
    benign_vocab_size: int = 80
    min_words: int = 6
    max_words: int = 14
    frac_toxic: float = 0.35
    frac_context_toxic: float = 0.08
    frac_context_benign: float = 0.12
    end_punct_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.size < 0:
            raise CorpusError("size must be non-negative")
        if not self.toxic_lexicon:
            raise CorpusError("toxic lexicon is empty")
        if self.min_words < 3 or self.max_words < self.min_words:
            raise CorpusError("need max_words >= min_words >= 3")
        total = self.frac_toxic + self.frac_context_toxic + self.frac_context_benign
        if total > 1.0 + 1e-12:
            raise CorpusError("category fractions exceed 1")


def generate_synthetic(config: SynthConfig, seed: int) -> Corpus:
    """Generate a corpus with gold spans and toxicity assigned by construction.

    Planted lexicon terms make a post toxic (toxicity in (0.8, 1.0], gold span
    over the term).  Context-rule terms are toxic only inside their trigger
    trigram; in any other context the post scores in [0.1, 0.3) with no span.
    Remaining posts are plain benign filler (toxicity below 0.1).  Post ids
    carry a category prefix (tox/ctxt/ctxb/ben) for slicing in experiments.
    Output is deterministic given (config, seed).
    """
    rng = np.random.default_rng(seed)
    reserved = set(config.toxic_lexicon)
    for rule in config.context_rules:
        reserved.add(rule.term)
    fillers = [w for i in range(config.benign_vocab_size)
               if (w := _benign_word(i)) not in reserved]
    for rule in config.context_rules:
        for trigger_word in rule.trigger:
            if trigger_word not in fillers:
                fillers.append(trigger_word)

    posts: list[Post] = []
    for i in range(config.size):
        u = rng.random()
        if u < config.frac_toxic:
            category = "tox"
        elif u < config.frac_toxic + config.frac_context_toxic:
            category = "ctxt"
        elif u < config.frac_toxic + config.frac_context_toxic + config.frac_context_benign:
            category = "ctxb"
        else:
            category = "ben"
        if category in ("ctxt", "ctxb") and not config.context_rules:
            category = "tox" if category == "ctxt" else "ben"

        n_words = int(rng.integers(config.min_words, config.max_words + 1))
        words = [fillers[int(k)] for k in rng.integers(0, len(fillers), size=n_words)]

        span_words: tuple[int, int] | None = None  # word-index range of the gold span
        if category == "tox":
            term = config.toxic_lexicon[int(rng.integers(0, len(config.toxic_lexicon)))]
            at = int(rng.integers(0, len(words) + 1))
            words.insert(at, term)
            span_words = (at, at + 1)
            toxicity = 1.0 - 0.199 * rng.random()  # (0.801, 1.0]
        elif category in ("ctxt", "ctxb"):
            rule = config.context_rules[int(rng.integers(0, len(config.context_rules)))]
            first = rule.trigger[0]
            if category == "ctxb":
                # Any word but the real trigger head; keeps the tail bigram shared.
                while True:
                    first = fillers[int(rng.integers(0, len(fillers)))]
                    if first != rule.trigger[0]:
                        break
                if rng.random() < 0.5:
                    # A naked trigger bigram elsewhere in the post keeps the
                    # pair itself non-predictive; only the full trigram is.
                    at = int(rng.integers(0, len(words) + 1))
                    words[at:at] = list(rule.trigger)
            at = int(rng.integers(0, len(words) + 1))
            words[at:at] = [first, rule.trigger[1], rule.term]
            if category == "ctxt":
                span_words = (at + 2, at + 3)
                toxicity = 1.0 - 0.199 * rng.random()
            else:
                toxicity = 0.1 + 0.199 * rng.random()  # [0.1, 0.3)
        else:
            toxicity = 0.099 * rng.random()  # [0, 0.1)
            if config.context_rules and rng.random() < 0.3:
                # Plant a naked trigger bigram so it is not predictive on its own.
                rule = config.context_rules[int(rng.integers(0, len(config.context_rules)))]
                at = int(rng.integers(0, len(words) + 1))
                words[at:at] = list(rule.trigger)

        offsets: list[tuple[int, int]] = []
        cursor = 0
        pieces: list[str] = []
        for w in words:
            if pieces:
                pieces.append(" ")
                cursor += 1
            offsets.append((cursor, cursor + len(w)))
            pieces.append(w)
            cursor += len(w)
        if rng.random() < config.end_punct_rate:
            pieces.append("." if rng.random() < 0.8 else "!")
        text = "".join(pieces)

        spans: tuple[Span, ...]
        if span_words is not None:
            spans = (offsets[span_words[0]],)
        else:
            spans = ()
        posts.append(
            Post(
                id=f"{category}-{i:05d}",
                text=text,
                toxicity=float(toxicity),
                label=binarize(float(toxicity)),
                spans=spans,
            )
        )
    return Corpus(posts=tuple(posts), role="mixed")


# ---------------------------------------------------------------------------
# Splitting helpers for multi-task training
# ---------------------------------------------------------------------------

def strip_spans(corpus: Corpus, role: str = "classification") -> Corpus:
    """Drop all span annotations, keeping labels (a classification-only view)."""
    return Corpus(posts=tuple(replace(p, spans=None) for p in corpus), role=role)


def split_for_training(corpus: Corpus) -> tuple[Corpus, Corpus]:
    """Split by annotation presence into (classification-only, span-annotated).

    Toxic posts annotated with an empty span set go to the classification
    side: an all-zero token target would contradict max-pool aggregation for
    a toxic sequence.
    """
    span_side: list[Post] = []
    cls_side: list[Post] = []
    for post in corpus:
        if post.spans is not None and not (post.label == 1 and len(post.spans) == 0):
            span_side.append(post)
        else:
            cls_side.append(replace(post, spans=None))
    return (
        Corpus(posts=tuple(cls_side), role="classification"),
        Corpus(posts=tuple(span_side), role="span"),
    )


def partition_span_annotations(
    corpus: Corpus,
    span_fraction: float,
    seed: int,
    toxic_only: bool = True,
) -> tuple[Corpus, Corpus]:
    """Randomly designate a fraction of annotated posts as the span dataset.

    Mirrors the situation where span annotations exist only for a subset of
    the corpus (by default only for toxic posts, matching how such datasets
    are collected).  Every other post is stripped to a classification-only
    sample; no post appears on both sides.
    """
    if not 0.0 <= span_fraction <= 1.0:
        raise CorpusError("span_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    candidates = [
        i for i, p in enumerate(corpus)
        if p.spans is not None
        and len(p.spans) > 0
        and (p.label == 1 or not toxic_only)
    ]
    k = int(round(span_fraction * len(candidates)))
    chosen = set(
        int(i) for i in rng.choice(candidates, size=k, replace=False)
    ) if k else set()
    span_side = [corpus[i] for i in sorted(chosen)]
    cls_side = [replace(p, spans=None) for i, p in enumerate(corpus) if i not in chosen]
    return (
        Corpus(posts=tuple(cls_side), role="classification"),
        Corpus(posts=tuple(span_side), role="span"),
    )
