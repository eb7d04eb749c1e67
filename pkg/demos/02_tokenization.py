#!/usr/bin/env python3
"""Offset-preserving tokenization and span-to-token alignment.

Offsets always index the original text, so token-level decisions can be
mapped back to exact character ranges and compared against gold spans.
"""

from spanmax.corpus import Corpus, make_post
from spanmax.tokenizer import (
    align_span_labels,
    build_vocab,
    encode,
    tokenize,
    tokens_to_char_set,
)

text = "You IDIOT! Stop being an a-hole..."
tokens = tokenize(text)
print(f"text: {text!r}")
print(f"{'surface':<10} {'start':>5} {'end':>4}  slice")
for t in tokens:
    print(f"{t.surface:<10} {t.start:>5} {t.end:>4}  {text[t.start:t.end]!r}")

# Gold spans cover "IDIOT" and "a-hole"; any overlapping token gets label 1.
gold = [(4, 9), (25, 31)]
labels = align_span_labels(tokens, gold, text_len=len(text))
print("\ntoken labels from gold spans", gold)
print("  " + " ".join(f"{t.surface}={int(l)}" for t, l in zip(tokens, labels)))

selected = [i for i, l in enumerate(labels) if l == 1.0]
chars = tokens_to_char_set(tokens, selected)
print(f"selected char offsets cover: {''.join(text[c] if c in chars else '.' for c in range(len(text)))}")

# Vocabulary construction is frequency-then-lexicographic and deterministic.
corpus = Corpus(posts=(
    make_post("a", "you idiot you fool", 0.9),
    make_post("b", "idiot idiot fool", 0.9),
))
vocab = build_vocab(corpus, min_freq=2)
print(f"\nvocab ({len(vocab)} ids incl. unk/pad): {dict(vocab.term_ids)}")
kept, ids = encode(tokens, vocab, max_len=256)
print("encoded:", ids, "(0 = unknown)")
print("vocab hash:", vocab.sha256()[:16], "... binds checkpoints to this vocabulary")
