"""Interpretable toxicity classification via max-pooled token scores.

The sequence prediction is, by construction, the maximum of per-token
toxicity scores from a shared affine head over a small from-scratch encoder;
training optimizes a weighted sum of a sequence-level and a token-level MSE
objective.  Subpackages: ``corpus`` (data model, curation, synthetic
generator), ``tokenizer`` (offset-preserving tokenization), ``encoder``
(transformer / bi-recurrent with exact hand-written gradients), ``head``
(token scoring, max pooling, explanations), ``training`` (losses, Adam,
checkpoints), ``baseline_lr`` (n-gram logistic regression), ``metrics``
(classification and character-level span scores), ``render`` and ``cli``.
"""

__version__ = "0.1.0"
