"""Highlighted explanation reports: HTML, ANSI terminal, and JSON dumps.

Each token's background intensity is linear in its score with a white
midpoint at 0.5: scores above 0.5 shade toward a saturated warm red, scores
below toward a saturated cool blue.  Reports embed the original text
losslessly -- tokens keep their original casing and the gaps between them are
preserved verbatim -- so concatenating the text nodes of a post block
reproduces the input exactly.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Sequence

import numpy as np

from .tokenizer import Token


@dataclass(frozen=True)
class ExplainEntry:
    """One rendered post: text, per-token scores, and the model's explanation."""

    post_id: str
    text: str
    tokens: tuple[Token, ...]
    scores: tuple[float, ...]
    sequence_score: float
    label: int
    explanation: tuple[tuple[str, float], ...]
    model_name: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.post_id,
            "model": self.model_name,
            "label": self.label,
            "score": self.sequence_score,
            "tokens": [
                {"surface": t.surface, "start": t.start, "end": t.end, "score": s}
                for t, s in zip(self.tokens, self.scores)
            ],
            "explanation": [{"word": w, "score": s} for w, s in self.explanation],
        }


def token_color(score: float) -> tuple[int, int, int]:
    """Linear white-centered color map: 0.5 -> white, 1 -> warm, 0 -> cool."""
    intensity = min(1.0, max(0.0, abs(score - 0.5) * 2.0))
    fade = int(round(200 * intensity))
    if score >= 0.5:
        return (255, 255 - fade, 255 - fade)
    return (255 - fade, 255 - int(round(80 * intensity)), 255)


def _post_div(entry: ExplainEntry) -> str:
    parts = [f'<div class="post" data-id="{html.escape(entry.post_id, quote=True)}">']
    cursor = 0
    for token, score in zip(entry.tokens, entry.scores):
        if token.start > cursor:
            parts.append(f"<span class=\"gap\">{html.escape(entry.text[cursor:token.start])}</span>")
        r, g, b = token_color(score)
        parts.append(
            f'<span class="tok" data-start="{token.start}" data-end="{token.end}" '
            f'data-score="{score:.6f}" title="{score:.3f}" '
            f'style="background-color:rgb({r},{g},{b})">'
            f"{html.escape(entry.text[token.start:token.end])}</span>"
        )
        cursor = token.end
    if cursor < len(entry.text):
        parts.append(f"<span class=\"gap\">{html.escape(entry.text[cursor:])}</span>")
    parts.append("</div>")
    return "".join(parts)


def _entry_block(entry: ExplainEntry, heading: str | None = None) -> str:
    title = heading if heading is not None else entry.model_name
    verdict = "toxic" if entry.label == 1 else "non-toxic"
    top = ", ".join(f"{w} ({s:.3f})" for w, s in entry.explanation) or "(none)"
    return (
        "<section>"
        f"<h3>{html.escape(entry.post_id)}"
        + (f" &mdash; {html.escape(title)}" if title else "")
        + "</h3>"
        f"<p class=\"meta\">score {entry.sequence_score:.3f} &rarr; {verdict};"
        f" top words: {html.escape(top)}</p>"
        f"{_post_div(entry)}"
        "</section>"
    )


_HTML_STYLE = (
    "body{font-family:sans-serif;max-width:60em;margin:2em auto}"
    ".post{font-size:1.1em;line-height:1.9;white-space:pre-wrap}"
    ".tok{border-radius:3px;padding:1px 0}"
    ".meta{color:#555}"
)


def html_report(entries: Sequence[ExplainEntry], title: str = "Explanations") -> str:
    body = "\n".join(_entry_block(e) for e in entries)
    return (
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>{_HTML_STYLE}</style></head>"
        f"<body><h1>{html.escape(title)}</h1>\n{body}\n</body></html>"
    )


def side_by_side_report(
    pairs: Sequence[tuple[ExplainEntry, ExplainEntry]],
    seed: int,
    title: str = "Blinded comparison",
) -> tuple[str, dict[str, dict[str, str]]]:
    """Render two models per post in randomized, unlabeled order.

    Returns the HTML and a key mapping post id -> {"A": model, "B": model};
    the key is meant to be written to a separate file so a judge never sees it.
    """
    rng = np.random.default_rng(seed)
    blocks = []
    key: dict[str, dict[str, str]] = {}
    for first, second in pairs:
        if rng.random() < 0.5:
            first, second = second, first
        key[first.post_id] = {"A": first.model_name, "B": second.model_name}
        blocks.append(_entry_block(first, heading="Model A"))
        blocks.append(_entry_block(second, heading="Model B"))
    body = "\n".join(blocks)
    report = (
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>{_HTML_STYLE}</style></head>"
        f"<body><h1>{html.escape(title)}</h1>\n{body}\n</body></html>"
    )
    return report, key


class _PostTextCollector(HTMLParser):
    def __init__(self, post_id: str) -> None:
        super().__init__(convert_charrefs=True)
        self.post_id = post_id
        self.depth = 0
        self.pieces: list[str] = []
        self.done = False

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if self.depth > 0:
            self.depth += 1
        elif (
            tag == "div"
            and attrs.get("class") == "post"
            and attrs.get("data-id") == self.post_id
            and not self.done
        ):
            self.depth = 1

    def handle_endtag(self, tag):
        if self.depth > 0:
            self.depth -= 1
            if self.depth == 0:
                self.done = True

    def handle_data(self, data):
        if self.depth > 0 and not self.done:
            self.pieces.append(data)


def reconstruct_text(report_html: str, post_id: str) -> str:
    """Recover a post's original text from its rendered block."""
    collector = _PostTextCollector(post_id)
    collector.feed(report_html)
    return "".join(collector.pieces)


_ANSI_RESET = "\x1b[0m"


def ansi_render(entry: ExplainEntry) -> str:
    """Truecolor terminal rendering of one post, gaps preserved."""
    parts = []
    cursor = 0
    for token, score in zip(entry.tokens, entry.scores):
        if token.start > cursor:
            parts.append(entry.text[cursor:token.start])
        r, g, b = token_color(score)
        parts.append(
            f"\x1b[48;2;{r};{g};{b}m\x1b[38;2;0;0;0m"
            f"{entry.text[token.start:token.end]}{_ANSI_RESET}"
        )
        cursor = token.end
    if cursor < len(entry.text):
        parts.append(entry.text[cursor:])
    verdict = "toxic" if entry.label == 1 else "non-toxic"
    top = ", ".join(f"{w} ({s:.3f})" for w, s in entry.explanation) or "(none)"
    name = f" [{entry.model_name}]" if entry.model_name else ""
    return (
        f"{entry.post_id}{name}: score {entry.sequence_score:.3f} -> {verdict}\n"
        f"  {''.join(parts)}\n  top words: {top}"
    )


def entries_to_json(entries: Sequence[ExplainEntry]) -> str:
    return json.dumps([e.to_record() for e in entries], ensure_ascii=False, indent=2)
