"""Classification reports and character-level span-detection metrics.

Span detection is scored with partial credit at the character level: for one
post, precision is |system ∩ gold| / |system| and recall is
|system ∩ gold| / |gold| over the two offset sets, with
F1 = 2PR / (P + R).  Degenerate cases follow the shared-task convention the
metrics descend from: both sets empty scores (1, 1, 1); exactly one empty
scores (0, 0, 0).  Corpus-level numbers are unweighted means over posts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence


class MetricsError(ValueError):
    pass


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics(precision, recall, f1)


@dataclass(frozen=True)
class ClassificationReport:
    toxic: ClassMetrics
    non_toxic: ClassMetrics
    macro_f1: float
    tp: int  # confusion counts with "toxic" as the positive class
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return {
            "non_toxic": self.non_toxic._asdict(),
            "toxic": self.toxic._asdict(),
            "macro_f1": self.macro_f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }

    def to_text(self, name: str = "") -> str:
        lines = []
        if name:
            lines.append(f"model: {name}")
        lines.append(f"{'class':<10} {'P':>7} {'R':>7} {'F1':>7}")
        for label, m in (("non-toxic", self.non_toxic), ("toxic", self.toxic)):
            lines.append(f"{label:<10} {m.precision:7.3f} {m.recall:7.3f} {m.f1:7.3f}")
        lines.append(f"{'macro-F1':<10} {self.macro_f1:23.3f}")
        return "\n".join(lines)


def classification_report(
    gold: Sequence[int], predicted: Sequence[int]
) -> ClassificationReport:
    """Per-class precision/recall/F1 and macro-F1 from confusion counts.

    Zero-denominator precision or recall scores 0.
    """
    if len(gold) != len(predicted):
        raise MetricsError(f"length mismatch: {len(gold)} gold vs {len(predicted)} predicted")
    if not gold:
        raise MetricsError("empty label sequences")
    tp = fp = fn = tn = 0
    for g, p in zip(gold, predicted):
        if g not in (0, 1) or p not in (0, 1):
            raise MetricsError(f"labels must be binary, got ({g}, {p})")
        if g == 1 and p == 1:
            tp += 1
        elif g == 0 and p == 1:
            fp += 1
        elif g == 1 and p == 0:
            fn += 1
        else:
            tn += 1
    toxic = _prf(tp, fp, fn)
    non_toxic = _prf(tn, fn, fp)
    return ClassificationReport(
        toxic=toxic,
        non_toxic=non_toxic,
        macro_f1=(toxic.f1 + non_toxic.f1) / 2,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


class SdPRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def sd_prf(gold: Iterable[int], system: Iterable[int]) -> SdPRF:
    """Character-level partial-credit precision/recall/F1 for one post."""
    gold_set = frozenset(gold)
    system_set = frozenset(system)
    if not gold_set and not system_set:
        return SdPRF(1.0, 1.0, 1.0)
    if not gold_set or not system_set:
        return SdPRF(0.0, 0.0, 0.0)
    inter = len(gold_set & system_set)
    precision = inter / len(system_set)
    recall = inter / len(gold_set)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SdPRF(precision, recall, f1)


@dataclass(frozen=True)
class SpanEvalResult:
    per_post: tuple[SdPRF, ...]
    sd_p: float
    sd_r: float
    sd_f1: float

    def to_dict(self) -> dict:
        return {
            "sd_p": self.sd_p,
            "sd_r": self.sd_r,
            "sd_f1": self.sd_f1,
            "posts": len(self.per_post),
        }

    def to_text(self, name: str = "") -> str:
        prefix = f"{name:<12} " if name else ""
        header = f"{'':<12} {'SD-P':>7} {'SD-R':>7} {'SD-F1':>7}" if name else (
            f"{'SD-P':>7} {'SD-R':>7} {'SD-F1':>7}"
        )
        row = f"{prefix}{self.sd_p:7.3f} {self.sd_r:7.3f} {self.sd_f1:7.3f}"
        return header + "\n" + row


def sd_average(results: Sequence[SdPRF]) -> SpanEvalResult:
    """Unweighted arithmetic means of per-post precision, recall, and F1."""
    if not results:
        raise MetricsError("no per-post results to average")
    n = len(results)
    return SpanEvalResult(
        per_post=tuple(results),
        sd_p=sum(r.precision for r in results) / n,
        sd_r=sum(r.recall for r in results) / n,
        sd_f1=sum(r.f1 for r in results) / n,
    )
