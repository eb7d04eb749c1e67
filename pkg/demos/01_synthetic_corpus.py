#!/usr/bin/env python3
"""Build a synthetic corpus and walk through the curation recipe.

The generator plants invented toxic terms with exact gold spans, plus
context-dependent terms that are toxic only inside a specific trigram, so
every downstream capability can be exercised against a known ground truth.
"""

from spanmax.corpus import (
    Corpus,
    CurationConfig,
    SynthConfig,
    build_toxic_term_list,
    curate,
    generate_synthetic,
    mine_ambiguous,
)

config = SynthConfig(size=4000)
corpus = generate_synthetic(config, seed=21)

print(f"generated {len(corpus)} posts")
by_kind: dict[str, int] = {}
for post in corpus:
    by_kind[post.id.split("-")[0]] = by_kind.get(post.id.split("-")[0], 0) + 1
print("categories:", dict(sorted(by_kind.items())))

print("\nthree samples:")
for post in (corpus[0], corpus[1], corpus[2]):
    mark = ""
    if post.spans:
        start, end = post.spans[0]
        mark = f"  span -> {post.text[start:end]!r} at [{start}, {end})"
    print(f"  [{post.toxicity:.3f} -> label {post.label}] {post.text!r}{mark}")

# The span-annotated view plays the role of the span-detection dataset.
span_corpus = Corpus(posts=tuple(p for p in corpus if p.spans), role="span")
terms = build_toxic_term_list(span_corpus, min_count=20)
print(f"\nterms annotated >= 20 times inside spans ({len(terms)}):")
for term, count in terms.entries:
    print(f"  {term:<10} {count}")

ambiguous = mine_ambiguous(corpus, terms)
print(f"\nambiguous posts (mild scores, listed term in a benign context): {len(ambiguous)}")
print("  e.g.", ambiguous[0].text)

# Stratified curation: clear-cut toxic/non-toxic, ambiguous, extra toxic.
cfg = CurationConfig.paper_proportions(scale=0.01, seed=5)
train_split, test_split = curate(corpus, span_corpus, cfg, terms)
print(f"\ncurated split at scale 0.01: {len(train_split)} train / {len(test_split)} test")
print(f"span-annotated samples kept: "
      f"{sum(1 for p in list(train_split) + list(test_split) if p.spans is not None)}")
