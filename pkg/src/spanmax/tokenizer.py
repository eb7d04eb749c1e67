"""Offset-preserving word tokenization, vocabulary, and span-label alignment.

Tokens are whitespace-delimited words with every punctuation character split
into its own single-character token ("a-hole" -> "a", "-", "hole").  Surfaces
are lowercased; offsets always index the original, unmodified text as Unicode
code points, half-open [start, end).
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

UNK_ID = 0
PAD_ID = 1
UNK_TERM = "<unk>"
PAD_TERM = "<pad>"

VOCAB_FORMAT_VERSION = 1


class TokenizerError(ValueError):
    pass


def _is_punct(char: str) -> bool:
    return unicodedata.category(char).startswith("P")


@dataclass(frozen=True)
class Token:
    surface: str  # lowercased
    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise TokenizerError(f"bad token offsets [{self.start}, {self.end})")


def is_punctuation_token(token: Token) -> bool:
    return all(_is_punct(c) for c in token.surface)


def tokenize(text: str) -> list[Token]:
    """Split text into lowercased word and punctuation tokens with offsets."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        char = text[i]
        if char.isspace():
            i += 1
            continue
        if _is_punct(char):
            tokens.append(Token(surface=char.lower(), start=i, end=i + 1))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace() and not _is_punct(text[j]):
            j += 1
        tokens.append(Token(surface=text[i:j].lower(), start=i, end=j))
        i = j
    return tokens


@dataclass(frozen=True)
class Vocab:
    """Frozen term-to-id map with reserved UNK (0) and PAD (1) ids."""

    term_ids: Mapping[str, int]

    def __post_init__(self) -> None:
        expected = set(range(2, 2 + len(self.term_ids)))
        if set(self.term_ids.values()) != expected:
            raise TokenizerError("vocab ids must be dense starting at 2")

    def __len__(self) -> int:
        return len(self.term_ids) + 2

    def __contains__(self, term: str) -> bool:
        return term in self.term_ids

    def id_of(self, term: str) -> int:
        return self.term_ids.get(term, UNK_ID)

    def to_tsv(self) -> str:
        header = (
            f"#spanmax-vocab\tversion={VOCAB_FORMAT_VERSION}"
            f"\tunk={UNK_ID}\tpad={PAD_ID}\n"
        )
        rows = sorted(self.term_ids.items(), key=lambda item: item[1])
        return header + "".join(f"{term}\t{idx}\n" for term, idx in rows)

    @classmethod
    def from_tsv(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#spanmax-vocab"):
            raise TokenizerError("missing vocab header line")
        term_ids: dict[str, int] = {}
        for line in lines[1:]:
            if not line.strip():
                continue
            term, idx = line.split("\t")
            term_ids[term] = int(idx)
        return cls(term_ids=term_ids)

    def sha256(self) -> str:
        """Hash of the canonical TSV serialization; binds checkpoints to a vocab."""
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()


def build_vocab(corpus, min_freq: int = 2) -> Vocab:
    """Build a vocabulary of token surfaces seen at least ``min_freq`` times.

    Ids are assigned by descending frequency, ties broken lexicographically,
    so identical corpora always produce identical vocabularies.
    """
    if len(corpus) == 0:
        raise TokenizerError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for post in corpus:
        for token in tokenize(post.text):
            counts[token.surface] = counts.get(token.surface, 0) + 1
    kept = [(term, count) for term, count in counts.items() if count >= min_freq]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocab(term_ids={term: 2 + i for i, (term, _) in enumerate(kept)})


def encode(
    tokens: Sequence[Token], vocab: Vocab, max_len: int = 256
) -> tuple[list[Token], list[int]]:
    """Map tokens to vocabulary ids, trimming past ``max_len``.

    Returns the kept tokens alongside their ids so offsets stay aligned with
    the id sequence after trimming.
    """
    if max_len < 1:
        raise TokenizerError("max_len must be at least 1")
    kept = list(tokens[:max_len])
    return kept, [vocab.id_of(t.surface) for t in kept]


def align_span_labels(
    tokens: Sequence[Token],
    gold_spans: Iterable[tuple[int, int]],
    text_len: int | None = None,
) -> list[float]:
    """Token labels from gold character spans: 1.0 on any overlap, else 0.0."""
    spans = [(int(s), int(e)) for s, e in gold_spans]
    for start, end in spans:
        if start < 0 or start >= end or (text_len is not None and end > text_len):
            raise TokenizerError(f"gold span [{start}, {end}) out of bounds")
    return [
        1.0 if any(s < t.end and t.start < e for s, e in spans) else 0.0
        for t in tokens
    ]


def tokens_to_char_set(tokens: Sequence[Token], selected: Iterable[int]) -> set[int]:
    """Union of character offsets covered by the selected token indices."""
    chars: set[int] = set()
    for index in selected:
        if not 0 <= index < len(tokens):
            raise TokenizerError(f"token index {index} out of range")
        chars.update(range(tokens[index].start, tokens[index].end))
    return chars


@dataclass(frozen=True)
class TokenizedPost:
    """A post's token sequence, vocab ids, and optional aligned token labels."""

    post_id: str
    tokens: tuple[Token, ...]
    ids: tuple[int, ...]
    token_labels: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.ids):
            raise TokenizerError("tokens and ids must have equal length")
        if self.token_labels is not None and len(self.token_labels) != len(self.tokens):
            raise TokenizerError("token_labels length must match tokens")
        prev = -1
        for t in self.tokens:
            if t.start <= prev:
                raise TokenizerError("tokens must be strictly increasing by start")
            prev = t.start

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize_post(post, vocab: Vocab, max_len: int = 256) -> TokenizedPost:
    """Tokenize, encode, and (when the post is annotated) align token labels."""
    tokens, ids = encode(tokenize(post.text), vocab, max_len)
    labels = None
    if post.spans is not None:
        labels = tuple(align_span_labels(tokens, post.spans, len(post.text)))
    return TokenizedPost(
        post_id=post.id, tokens=tuple(tokens), ids=tuple(ids), token_labels=labels
    )
