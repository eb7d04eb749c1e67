#!/usr/bin/env python3
"""Train the multi-task model and evaluate classification and span detection.

One batch of span-annotated samples (joint loss) alternates with one batch of
label-only samples (classification loss).  Because the sequence score is the
max of token scores, a model trained this way flags a post exactly when it
can point at a token that carries the toxicity.
"""

import time

from spanmax.corpus import Corpus, SynthConfig, generate_synthetic, partition_span_annotations
from spanmax.head import predict
from spanmax.metrics import classification_report, sd_average, sd_prf
from spanmax.training import TrainConfig, train

synth = generate_synthetic(
    SynthConfig(size=1500, frac_toxic=0.45, frac_context_toxic=0.0,
                frac_context_benign=0.0),
    seed=11,
)
train_corpus = Corpus(posts=synth.posts[:1200])
test_corpus = Corpus(posts=synth.posts[1200:])

# Only a fraction of toxic posts keep their span annotations, mirroring how
# span datasets are much smaller than label datasets.
cls_corpus, span_corpus = partition_span_annotations(train_corpus, 0.4, seed=1)
print(f"{len(cls_corpus)} label-only posts, {len(span_corpus)} span-annotated posts")

config = TrainConfig(lam=0.5, epochs=8, batch_size=32, seed=0, mode="mt")
started = time.monotonic()
result = train(cls_corpus, span_corpus, config)
print(f"trained {config.epochs} epochs in {time.monotonic() - started:.0f}s")
print("loss curve:", " -> ".join(f"{m.total:.4f}" for m in result.metrics))

predictions = [predict(p.text, result.model, post_id=p.id) for p in test_corpus]
report = classification_report([p.label for p in test_corpus],
                               [pr.label for pr in predictions])
print("\n" + report.to_text("multi-task"))

span_eval = sd_average([
    sd_prf(p.span_char_set(), pr.predicted_char_set)
    for p, pr in zip(test_corpus, predictions)
])
print("\n" + span_eval.to_text("multi-task"))

toxic = next(p for p, pr in zip(test_corpus, predictions) if pr.label == 1)
pred = next(pr for pr in predictions if pr.post_id == toxic.id)
print(f"\nexample: {toxic.text!r}")
print(f"  sequence score {pred.sequence_score:.3f} == max of "
      f"{[round(s, 3) for s in pred.token_scores]}")
print(f"  top words: {[(w, round(s, 3)) for w, s in pred.explanation]}")
