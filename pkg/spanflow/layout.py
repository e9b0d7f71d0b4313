#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Segmentation of positioned tokens into lines and spans.

Coordinates use abstract page units with the origin at the top-left corner
and y increasing downward. Tokens are first grouped into lines by the
bottom coordinate of their boxes, then lines are cut where the whitespace
between neighbouring tokens is column-scale rather than word-scale.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from spanflow.config import Config
from spanflow.errors import ValidationError
from spanflow.storage import read_jsonl, write_jsonl
from spanflow.validators import is_valid_token_record

logger = logging.getLogger(__name__)

BBox = tuple[float, float, float, float]

_MIN_LINE_TOL = 0.5
_LINE_TOL_RATIO = 0.25
_MIN_TOKENS_TO_CUT = 3


@dataclass(frozen=True)
class Token:
    """A positioned unit of text."""

    text: str
    bbox: BBox
    page_id: str

    @property
    def x0(self) -> float:
        return self.bbox[0]

    @property
    def y0(self) -> float:
        return self.bbox[1]

    @property
    def x1(self) -> float:
        return self.bbox[2]

    @property
    def y1(self) -> float:
        return self.bbox[3]


@dataclass(frozen=True)
class Line:
    """Tokens sharing a baseline, ordered left to right."""

    tokens: tuple[Token, ...]
    bottom: float


@dataclass(frozen=True)
class Span:
    """Contiguous run of tokens on one line; the page-graph vertex unit."""

    tokens: tuple[Token, ...]
    span_id: int

    @property
    def bbox(self) -> BBox:
        return (
            min(t.x0 for t in self.tokens),
            min(t.y0 for t in self.tokens),
            max(t.x1 for t in self.tokens),
            max(t.y1 for t in self.tokens),
        )

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)

    @property
    def page_id(self) -> str:
        return self.tokens[0].page_id


@dataclass(frozen=True)
class LayoutConfig:
    """Segmentation parameters.

    Attributes:
        gap_factor: Cut where a gap exceeds this multiple of the median gap
        line_tol: Bottom-coordinate tolerance; None derives it from the page
    """

    gap_factor: float = Config.GAP_FACTOR
    line_tol: float | None = Config.LINE_TOL

    def __post_init__(self) -> None:
        if self.gap_factor <= 0:
            raise ValidationError(f"gap_factor must be > 0, got {self.gap_factor}")
        if self.line_tol is not None and self.line_tol < 0:
            raise ValidationError(f"line_tol must be >= 0, got {self.line_tol}")


def default_line_tol(tokens: list[Token]) -> float:
    """Scale-free line tolerance: a quarter of the median token height.

    Args:
        tokens: Tokens of one page

    Returns:
        float: Tolerance in page units, never below 0.5
    """
    if not tokens:
        return _MIN_LINE_TOL
    heights = np.array([t.y1 - t.y0 for t in tokens], dtype=np.float64)
    return max(_LINE_TOL_RATIO * float(np.median(heights)), _MIN_LINE_TOL)


def _check_single_page(tokens: list[Token]) -> None:
    pages = {t.page_id for t in tokens}
    if len(pages) > 1:
        raise ValidationError(f"tokens span several pages: {sorted(pages)}")


def _x_order(token: Token) -> tuple[float, float, str]:
    return (token.x0, token.x1, token.text)


def group_lines(tokens: list[Token], line_tol: float) -> list[Line]:
    """Group tokens into lines by single-linkage on their bottom coordinate.

    Two tokens share a line iff a chain of tokens connects them in which
    consecutive bottoms differ by at most ``line_tol``.

    Args:
        tokens: Tokens of one page
        line_tol: Linkage threshold in page units

    Returns:
        list[Line]: Lines sorted by bottom, tokens sorted by x0
    """
    if not tokens:
        return []
    _check_single_page(tokens)

    ordered = sorted(tokens, key=lambda t: (t.y1, *_x_order(t)))
    clusters: list[list[Token]] = [[ordered[0]]]
    for prev, token in zip(ordered, ordered[1:], strict=False):
        if token.y1 - prev.y1 > line_tol:
            clusters.append([token])
        else:
            clusters[-1].append(token)

    lines = []
    for cluster in clusters:
        bottom = float(np.median([t.y1 for t in cluster]))
        lines.append(Line(tokens=tuple(sorted(cluster, key=_x_order)), bottom=bottom))
    return lines


def line_gaps(line: Line) -> np.ndarray:
    """Horizontal gaps between consecutive tokens of a line."""
    x0 = np.array([t.x0 for t in line.tokens[1:]], dtype=np.float64)
    x1 = np.array([t.x1 for t in line.tokens[:-1]], dtype=np.float64)
    return x0 - x1


def cut_line(line: Line, gap_factor: float) -> list[Span]:
    """Cut a line at column-scale whitespace.

    A cut falls between tokens i and i+1 iff their gap exceeds
    ``gap_factor`` times the median positive gap of the line. Lines with
    fewer than three tokens or no positive gap are kept whole.

    Args:
        line: Line with at least one token
        gap_factor: Ratio to the median positive gap

    Returns:
        list[Span]: Spans in left-to-right order, ids local to the line
    """
    if not line.tokens:
        raise ValidationError("cannot cut an empty line")

    gaps = line_gaps(line)
    positive = gaps[gaps > 0]
    if len(line.tokens) < _MIN_TOKENS_TO_CUT or positive.size == 0:
        return [Span(tokens=line.tokens, span_id=0)]

    threshold = gap_factor * float(np.median(positive))
    cuts = np.flatnonzero(gaps > threshold) + 1

    spans = []
    start = 0
    for stop in [*cuts.tolist(), len(line.tokens)]:
        spans.append(Span(tokens=line.tokens[start:stop], span_id=len(spans)))
        start = stop
    return spans


def segment_page(tokens: list[Token], config: LayoutConfig | None = None) -> list[Span]:
    """Segment one page into spans numbered in reading order.

    Args:
        tokens: Tokens of a single page
        config: Segmentation parameters (defaults from Config)

    Returns:
        list[Span]: Spans with span_id 0..N-1, top-to-bottom then left-to-right
    """
    config = config or LayoutConfig()
    if not tokens:
        return []
    _check_single_page(tokens)

    line_tol = config.line_tol
    if line_tol is None:
        line_tol = default_line_tol(tokens)
    spans: list[Span] = []
    for line in group_lines(tokens, line_tol):
        for span in cut_line(line, config.gap_factor):
            spans.append(replace(span, span_id=len(spans)))

    logger.debug(
        "page %s: %d tokens -> %d spans (line_tol=%.3f)",
        tokens[0].page_id,
        len(tokens),
        len(spans),
        line_tol,
    )
    return spans


def segment_document(
    tokens: list[Token],
    config: LayoutConfig | None = None,
) -> dict[str, list[Span]]:
    """Segment a multi-page token list page by page.

    Returns:
        dict[str, list[Span]]: Spans per page_id, pages in first-seen order
    """
    pages: dict[str, list[Token]] = {}
    for token in tokens:
        pages.setdefault(token.page_id, []).append(token)
    return {page_id: segment_page(page, config) for page_id, page in pages.items()}


def token_from_record(record: dict[str, Any]) -> Token:
    """Build a Token from a validated JSONL record."""
    return Token(
        text=record["text"],
        bbox=(
            float(record["x0"]),
            float(record["y0"]),
            float(record["x1"]),
            float(record["y1"]),
        ),
        page_id=record["page_id"],
    )


def token_to_record(token: Token) -> dict[str, Any]:
    """Serialize a Token to its JSONL record."""
    x0, y0, x1, y1 = token.bbox
    return {
        "page_id": token.page_id,
        "text": token.text,
        "x0": x0,
        "y0": y0,
        "x1": x1,
        "y1": y1,
    }


def read_tokens(path: str | Path) -> list[Token]:
    """Load a Token JSONL file.

    Raises:
        ValidationError: If a record is malformed (line number reported)
    """
    tokens = []
    for lineno, record in read_jsonl(path):
        if not is_valid_token_record(record):
            raise ValidationError(f"{path}:{lineno}: invalid token record")
        tokens.append(token_from_record(record))
    return tokens


def write_tokens(path: str | Path, tokens: list[Token]) -> Path:
    """Atomically write a Token JSONL file."""
    return write_jsonl(path, (token_to_record(t) for t in tokens))


def span_to_record(span: Span) -> dict[str, Any]:
    """Serialize a Span to its JSONL record."""
    x0, y0, x1, y1 = span.bbox
    return {
        "page_id": span.page_id,
        "span_id": span.span_id,
        "text": span.text,
        "x0": x0,
        "y0": y0,
        "x1": x1,
        "y1": y1,
    }


def write_spans(path: str | Path, spans: list[Span]) -> Path:
    """Atomically write a span JSONL file."""
    return write_jsonl(path, (span_to_record(s) for s in spans))
