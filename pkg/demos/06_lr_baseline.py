#!/usr/bin/env python3
"""The n-gram logistic-regression baseline and its feature-level explanations.

LR explains itself through feature weights: features contributing positively
to the score mark their character offsets.  On the trigram-context slice that
transparency has a ceiling: no unigram or bigram separates toxic from benign
use of the same term, so the baseline sits at chance there while the
context-aware model does not.
"""

import numpy as np

from spanmax.baseline_lr import explain_lr, predict_lr, stem, train_lr
from spanmax.corpus import Corpus, SynthConfig, generate_synthetic, partition_span_annotations
from spanmax.head import predict
from spanmax.metrics import classification_report
from spanmax.training import TrainConfig, train

print("stemmer:", {w: stem(w) for w in ("idiots", "followers", "classes", "is")})

config = SynthConfig(size=2000, frac_toxic=0.30, frac_context_toxic=0.12,
                     frac_context_benign=0.18)
synth = generate_synthetic(config, seed=29)
train_corpus = Corpus(posts=synth.posts[:1600])
test_corpus = Corpus(posts=synth.posts[1600:])

lr_model = train_lr(train_corpus, l2_strength=0.01, epochs=300)
sample = next(p for p in test_corpus if p.label == 1)
explanation = explain_lr(lr_model, sample.text)
print(f"\nsample: {sample.text!r}")
print(f"  probability {predict_lr(lr_model, sample.text):.3f}")
print("  word contributions:",
      [(w.word, round(w.contribution, 2)) for w in explanation.words])
marked = "".join(c if i in explanation.char_set else "." for i, c in enumerate(sample.text))
print(f"  marked chars: {marked}")

# L2 shrinks the weight vector monotonically.
norms = {l2: float(np.linalg.norm(train_lr(train_corpus, l2_strength=l2,
                                           epochs=200).weights))
         for l2 in (0.001, 0.1, 10.0)}
print("\n||w|| across the regularization path:", {k: round(v, 3) for k, v in norms.items()})

# Context slice: toxicity decided by a trigram the bigram features cannot see.
cls_c, span_c = partition_span_annotations(train_corpus, 0.4, seed=1)
mt = train(cls_c, span_c, TrainConfig(epochs=12, batch_size=32, seed=0, mode="mt"))
ctx = [p for p in test_corpus if p.id.startswith(("ctxt-", "ctxb-"))]
gold = [p.label for p in ctx]
lr_f1 = classification_report(gold, [int(predict_lr(lr_model, p.text) >= 0.5)
                                     for p in ctx]).macro_f1
mt_f1 = classification_report(gold, [predict(p.text, mt.model).label
                                     for p in ctx]).macro_f1
print(f"\ncontext slice ({len(ctx)} posts): LR macro-F1 {lr_f1:.3f} vs "
      f"multi-task {mt_f1:.3f}")
