#!/usr/bin/env python3
"""Render highlighted explanations in the terminal and as an HTML report.

Scores color each token around a white midpoint at 0.5: warm toward 1, cool
toward 0.  The HTML report keeps the original text byte-for-byte, so it can
be reconstructed exactly from the rendered block.
"""

from pathlib import Path

from spanmax.corpus import Corpus, SynthConfig, generate_synthetic, partition_span_annotations
from spanmax.head import predict
from spanmax.render import ExplainEntry, ansi_render, html_report, reconstruct_text
from spanmax.training import TrainConfig, train

synth = generate_synthetic(
    SynthConfig(size=800, frac_toxic=0.45, frac_context_toxic=0.0,
                frac_context_benign=0.0),
    seed=11,
)
cls_corpus, span_corpus = partition_span_annotations(
    Corpus(posts=synth.posts[:600]), 0.4, seed=1
)
result = train(cls_corpus, span_corpus,
               TrainConfig(epochs=6, batch_size=32, seed=0, mode="mt"))

entries = []
for post in synth.posts[600:606]:
    pred = predict(post.text, result.model, post_id=post.id)
    entry = ExplainEntry(
        post_id=post.id,
        text=post.text,
        tokens=pred.tokens,
        scores=pred.token_scores,
        sequence_score=pred.sequence_score,
        label=pred.label,
        explanation=pred.explanation,
        model_name="multi-task",
    )
    entries.append(entry)
    print(ansi_render(entry))
    print()

report = html_report(entries, title="Demo explanations")
out = Path("demo_explanations.html")
out.write_text(report, encoding="utf-8")
print(f"wrote {out} ({len(report)} bytes)")

roundtrip = all(reconstruct_text(report, e.post_id) == e.text for e in entries)
print(f"HTML reconstructs every input text exactly: {roundtrip}")
