#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Deterministic synthetic page pairs sharing labelled facts.

Page 1 of every pair is a table (row labels x segment columns). Page 2
states the same facts as a restyled table with its rows reshuffled, a bulleted
list, or short paragraphs whose middle line carries the figure. Labels
link the two value spans of each fact.

Geometry uses a 1000 x 1400 canvas with fixed word spacing and gutters
far wider than that spacing, so the default segmentation recovers the
spans exactly as laid out; the generator checks this for every page.
"""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import chisquare

from spanflow.errors import ValidationError
from spanflow.layout import LayoutConfig, Token, segment_page, write_tokens
from spanflow.storage import atomic_directory, read_json, write_json
from spanflow.train import LabeledPair

logger = logging.getLogger(__name__)

CANVAS_WIDTH = 1000.0
CANVAS_HEIGHT = 1400.0
PAGE_MARGIN = 60.0
TOKEN_HEIGHT = 10.0
CHAR_WIDTH = 6.0
WORD_GAP = 4.0
BULLET_GAP = 8.0
BULLET = "•"

TABLE_PITCH = 20.0
LIST_PITCH = 18.0
TEXT_PITCH = 18.0
PARAGRAPH_GAP = 12.0
PARAGRAPH_BLOCK_WIDTH = 440.0
CHI_SQUARE_ALPHA = 0.001
ROW_JITTER = 0.15

LAYOUTS = ("paragraph", "list", "table")
MANIFEST_NAME = "manifest.json"

ITEM_NAMES: tuple[str, ...] = (
    "total revenue",
    "net revenue",
    "service revenue",
    "product revenue",
    "licence fee income",
    "cost of sales",
    "gross profit",
    "gross margin",
    "operating costs",
    "operating income",
    "operating margin",
    "research and development",
    "marketing expenses",
    "administrative expenses",
    "personnel costs",
    "depreciation and amortisation",
    "impairment charges",
    "restructuring costs",
    "other operating income",
    "interest income",
    "interest expense",
    "net finance costs",
    "share of associates",
    "profit before tax",
    "income tax expense",
    "net earnings",
    "earnings per share",
    "diluted earnings per share",
    "dividends paid",
    "capital expenditure",
    "free cash flow",
    "operating cash flow",
    "net debt",
    "total assets",
    "total liabilities",
    "shareholders equity",
    "trade receivables",
    "trade payables",
    "inventories on hand",
    "cash and equivalents",
    "order intake",
    "order backlog",
    "average headcount",
    "return on equity",
    "return on capital",
    "adjusted earnings",
)

SEGMENT_HEADERS: tuple[str, ...] = (
    "europe segment",
    "asia segment",
    "americas segment",
    "africa segment",
    "oceania segment",
    "group total",
    "retail division",
    "wholesale division",
)

TITLES: tuple[str, ...] = (
    "consolidated statement of operations",
    "segment information overview",
    "summary of financial performance",
    "key figures by segment",
    "selected financial data",
    "results of operations",
)

UNIT_WORDS: tuple[str, ...] = ("units", "tonnes", "contracts")

SENTENCE_OPENERS: tuple[str, ...] = (
    "{item} for the {header} was",
    "the {header} reported {item} of",
    "{item} in the {header} reached",
    "for the {header} {item} came to",
)

SENTENCE_CLOSERS: tuple[str, ...] = (
    "for the period under review",
    "compared with the prior period",
    "as shown in the segment note",
    "before any adjustments were made",
)


@dataclass(frozen=True)
class CorpusSpec:
    """Synthetic corpus parameters.

    Attributes:
        seed: Base seed; pair i is generated from (seed, i)
        pages: Number of page pairs
        layout_mix: Weights of the page-2 layouts
        rows: Inclusive range of table rows
        columns: Inclusive range of value columns
        vocabulary: Row-label pool (2 to 4 words each)
        noise: Per-row probability of a distractor line
    """

    seed: int = 0
    pages: int = 40
    layout_mix: dict[str, float] = field(
        default_factory=lambda: {"table": 0.5, "list": 0.3, "paragraph": 0.2},
    )
    rows: tuple[int, int] = (4, 35)
    columns: tuple[int, int] = (2, 4)
    vocabulary: tuple[str, ...] = ITEM_NAMES
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.pages < 1:
            raise ValidationError(f"pages must be >= 1, got {self.pages}")
        unknown = set(self.layout_mix) - set(LAYOUTS)
        if unknown:
            raise ValidationError(f"unknown layouts {sorted(unknown)}")
        weights = list(self.layout_mix.values())
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValidationError(
                "layout weights must be non-negative with a positive sum",
            )
        for name, (lo, hi) in (("rows", self.rows), ("columns", self.columns)):
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} range {lo}-{hi} is empty")
        if not 0.0 <= self.noise <= 1.0:
            raise ValidationError(f"noise must be in [0, 1], got {self.noise}")
        distinct = len(set(self.vocabulary))
        if distinct < self.rows[1]:
            raise ValidationError(
                f"vocabulary of {distinct} items cannot fill {self.rows[1]} rows",
            )
        if self.columns[1] > len(SEGMENT_HEADERS):
            raise ValidationError(
                f"at most {len(SEGMENT_HEADERS)} columns are supported",
            )
        if self.rows[1] > _table_capacity(TABLE_PITCH):
            raise ValidationError(f"{self.rows[1]} rows cannot fit the page height")
        for layout in ("list", "paragraph"):
            if self.layout_mix.get(layout, 0) > 0:
                needed = self.rows[0] * self.columns[1]
                if needed > _fact_capacity(layout):
                    raise ValidationError(
                        f"{needed} facts cannot fit a {layout} page "
                        f"(capacity {_fact_capacity(layout)})",
                    )

    @classmethod
    def full_scale(cls, seed: int = 0) -> "CorpusSpec":
        """70 table pairs, about 7000 labelled values and 135 spans per page."""
        return cls(
            seed=seed,
            pages=70,
            layout_mix={"table": 1.0},
            rows=(22, 36),
            columns=(3, 4),
        )

    def to_dict(self) -> dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["rows"] = list(self.rows)
        data["columns"] = list(self.columns)
        data["vocabulary"] = list(self.vocabulary)
        data["layout_mix"] = dict(sorted(self.layout_mix.items()))
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CorpusSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown corpus spec keys {sorted(unknown)}")
        values = dict(data)
        for key in ("rows", "columns"):
            if key in values:
                values[key] = tuple(values[key])
        if "vocabulary" in values:
            values["vocabulary"] = tuple(values["vocabulary"])
        return cls(**values)

    def normalized_mix(self) -> dict[str, float]:
        total = sum(self.layout_mix.values())
        return {name: self.layout_mix.get(name, 0.0) / total for name in LAYOUTS}


def _table_capacity(pitch: float) -> int:
    # title line, blank line, header row, then rows
    return int((CANVAS_HEIGHT - 2 * PAGE_MARGIN) // pitch) - 3


def _fact_capacity(layout: str) -> int:
    usable = CANVAS_HEIGHT - 2 * PAGE_MARGIN
    if layout == "list":
        return int(usable // LIST_PITCH) - 2
    # three lines per fact, two text blocks
    per_block = int((usable + PARAGRAPH_GAP) // (3 * TEXT_PITCH + PARAGRAPH_GAP))
    return 2 * per_block


@dataclass(frozen=True)
class Fact:
    """One figure: row label, column header and its rendered value."""

    row: int
    column: int
    item: str
    header: str
    value: tuple[str, ...]


class PageBuilder:
    """Collects intended spans, then maps them to segmented span ids."""

    def __init__(self, page_id: str):
        self.page_id = page_id
        self.spans: list[list[Token]] = []

    def add(
        self,
        words: list[str] | tuple[str, ...],
        x: float,
        y: float,
        first_gap: float = WORD_GAP,
    ) -> int:
        """Place one span left-aligned at (x, y); returns its handle."""
        tokens = []
        for index, word in enumerate(words):
            width = len(word) * CHAR_WIDTH
            bbox = (x, y, x + width, y + TOKEN_HEIGHT)
            tokens.append(Token(text=word, bbox=bbox, page_id=self.page_id))
            x += width + (first_gap if index == 0 else WORD_GAP)
        if tokens and tokens[-1].x1 > CANVAS_WIDTH - PAGE_MARGIN / 2:
            raise ValidationError(
                f"page {self.page_id}: content does not fit the page width",
            )
        if y + TOKEN_HEIGHT > CANVAS_HEIGHT - PAGE_MARGIN / 2:
            raise ValidationError(
                f"page {self.page_id}: content does not fit the page height",
            )
        self.spans.append(tokens)
        return len(self.spans) - 1

    @staticmethod
    def width(words: list[str] | tuple[str, ...]) -> float:
        if not words:
            return 0.0
        return sum(len(w) * CHAR_WIDTH for w in words) + WORD_GAP * (len(words) - 1)

    def tokens(self) -> list[Token]:
        return [t for span in self.spans for t in span]

    def span_ids(self, layout_config: LayoutConfig | None = None) -> list[int]:
        """Segmented span_id of every intended span, in insertion order.

        Raises:
            ValidationError: If segmentation does not reproduce the layout
        """
        segmented = segment_page(self.tokens(), layout_config)
        by_tokens = {span.tokens: span.span_id for span in segmented}
        ids = []
        for intended in self.spans:
            key = tuple(sorted(intended, key=lambda t: (t.x0, t.x1, t.text)))
            if key not in by_tokens:
                text = " ".join(t.text for t in intended)
                raise ValidationError(
                    f"page {self.page_id}: span {text!r} does not segment as laid out",
                )
            ids.append(by_tokens[key])
        if len(segmented) != len(self.spans):
            raise ValidationError(
                f"page {self.page_id}: {len(segmented)} spans segmented, "
                f"{len(self.spans)} laid out",
            )
        return ids


def _words(text: str) -> list[str]:
    return text.split()


def _format_value(
    rng: np.random.Generator,
    style: str,
    exponent: float | None = None,
) -> tuple[str, ...]:
    """Value words for one figure; ``exponent`` pins the order of magnitude."""
    if style == "percent":
        return (f"{rng.uniform(0.1, 99.9):.1f}", "%")
    if exponent is None:
        exponent = rng.uniform(1.0, 6.5)
    else:
        exponent += rng.uniform(-ROW_JITTER, ROW_JITTER)
    amount = int(10**exponent)
    if style == "currency":
        return ("$", f"{amount:,}")
    return (f"{amount:,}", str(rng.choice(UNIT_WORDS)))


def _draw_facts(
    rng: np.random.Generator,
    spec: CorpusSpec,
    n_rows: int,
    n_columns: int,
) -> tuple[list[str], list[str], list[list[Fact]]]:
    pool = sorted(set(spec.vocabulary))
    items = [str(x) for x in rng.choice(pool, size=n_rows, replace=False)]
    headers = [
        str(x) for x in rng.choice(SEGMENT_HEADERS, size=n_columns, replace=False)
    ]
    style = str(rng.choice(["currency", "percent", "units"]))
    # one order of magnitude per row, jittered per cell
    row_exponents = rng.uniform(1.2, 6.2, size=n_rows)
    grid = [
        [
            Fact(
                i,
                c,
                items[i],
                headers[c],
                _format_value(rng, style, float(row_exponents[i])),
            )
            for c in range(n_columns)
        ]
        for i in range(n_rows)
    ]
    return items, headers, grid


def _render_table(
    builder: PageBuilder,
    title: str,
    items: list[str],
    headers: list[str],
    grid: list[list[Fact]],
    row_order: list[int],
    column_order: list[int],
    *,
    left: float,
    pitch: float,
    gutter: float,
) -> tuple[dict[tuple[int, int], int], float]:
    """Lay out a table.

    Returns:
        tuple: Value-span handles keyed by (row, column), and the next free y
    """
    y = PAGE_MARGIN
    builder.add(_words(title), left, y)
    y += 2 * pitch

    label_width = max(builder.width(_words(item)) for item in items)
    value_width = max(builder.width(f.value) for row in grid for f in row)
    column_x = []
    x = left + label_width + gutter
    for c in column_order:
        column_x.append(x)
        x += max(builder.width(_words(headers[c])), value_width) + gutter

    for x, c in zip(column_x, column_order, strict=True):
        builder.add(_words(headers[c]), x, y)
    y += pitch

    handles: dict[tuple[int, int], int] = {}
    for i in row_order:
        builder.add(_words(items[i]), left, y)
        for x, c in zip(column_x, column_order, strict=True):
            handles[(i, c)] = builder.add(grid[i][c].value, x, y)
        y += pitch
    return handles, y


def _render_list(
    builder: PageBuilder,
    title: str,
    facts: list[Fact],
    *,
    left: float,
) -> tuple[dict[tuple[int, int], int], float]:
    y = PAGE_MARGIN
    builder.add(_words(title), left, y)
    y += 2 * LIST_PITCH

    labels = [_words(f"{f.item} {f.header}") for f in facts]
    bullet_width = len(BULLET) * CHAR_WIDTH + BULLET_GAP
    value_x = left + bullet_width + max(builder.width(words) for words in labels) + 48.0

    handles: dict[tuple[int, int], int] = {}
    for fact, words in zip(facts, labels, strict=True):
        builder.add([BULLET, *words], left, y, first_gap=BULLET_GAP)
        handles[(fact.row, fact.column)] = builder.add(fact.value, value_x, y)
        y += LIST_PITCH
    return handles, y


def generate_paragraph_page(
    builder: PageBuilder,
    facts: list[Fact],
    rng: np.random.Generator,
) -> tuple[dict[tuple[int, int], int], float]:
    """Lay out facts as three-line paragraphs in two text blocks.

    Each paragraph is an opening sentence line, a line holding only the
    figure, and a closing line.

    Returns:
        tuple: Value-span handles by (row, column) and the next free y
    """
    per_block = _fact_capacity("paragraph") // 2
    block_x = (PAGE_MARGIN, PAGE_MARGIN + PARAGRAPH_BLOCK_WIDTH + 40.0)
    step = 3 * TEXT_PITCH + PARAGRAPH_GAP

    handles: dict[tuple[int, int], int] = {}
    bottom = PAGE_MARGIN
    for index, fact in enumerate(facts):
        block, slot = divmod(index, per_block)
        if block >= len(block_x):
            raise ValidationError(f"{len(facts)} facts do not fit a paragraph page")
        x = block_x[block]
        y = PAGE_MARGIN + slot * step
        template = str(rng.choice(SENTENCE_OPENERS))
        opener = template.format(item=fact.item, header=fact.header)
        if builder.width(_words(opener)) > PARAGRAPH_BLOCK_WIDTH:
            raise ValidationError(f"sentence {opener!r} is wider than a text block")
        closer = str(rng.choice(SENTENCE_CLOSERS))
        builder.add(_words(opener), x, y)
        handles[(fact.row, fact.column)] = builder.add(fact.value, x, y + TEXT_PITCH)
        builder.add(_words(closer), x, y + 2 * TEXT_PITCH)
        bottom = max(bottom, y + step)
    return handles, bottom


def _add_distractors(
    builder: PageBuilder,
    rng: np.random.Generator,
    spec: CorpusSpec,
    count: int,
    y: float,
    left: float,
) -> int:
    """Unlabelled note lines below the content; stops at the page bottom."""
    added = 0
    style = str(rng.choice(["currency", "percent", "units"]))
    for _ in range(count):
        if y + TOKEN_HEIGHT > CANVAS_HEIGHT - PAGE_MARGIN:
            break
        item = str(rng.choice(list(spec.vocabulary)))
        words = ["note", *_words(item)]
        builder.add(words, left, y)
        builder.add(_format_value(rng, style), left + builder.width(words) + 48.0, y)
        y += TABLE_PITCH
        added += 1
    return added


def _page2_rows_cap(layout: str, n_columns: int, spec: CorpusSpec) -> int:
    if layout == "table":
        return spec.rows[1]
    return min(spec.rows[1], _fact_capacity(layout) // n_columns)


def _pair_rng(seed: int, pair_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, pair_index])


def _draw_layout(rng: np.random.Generator, spec: CorpusSpec) -> str:
    mix = spec.normalized_mix()
    return str(rng.choice(LAYOUTS, p=[mix[name] for name in LAYOUTS]))


def page_ids(pair_index: int) -> tuple[str, str]:
    return f"pair_{pair_index:04d}_a", f"pair_{pair_index:04d}_b"


def generate_pair(
    spec: CorpusSpec,
    pair_index: int,
    layout_config: LayoutConfig | None = None,
) -> tuple[list[Token], list[Token], LabeledPair]:
    """Generate one page pair and its labels.

    Args:
        spec: Corpus parameters
        pair_index: Index of the pair; with spec.seed it fixes every draw
        layout_config: Segmentation used to derive span ids

    Returns:
        tuple: Tokens of page 1, tokens of page 2 and the labelled pair
        (span ids, anchors listed row-major over the page-1 table)

    Raises:
        ValidationError: If the drawn layout cannot fit the page
    """
    rng = _pair_rng(spec.seed, pair_index)
    layout = _draw_layout(rng, spec)

    n_columns = int(rng.integers(spec.columns[0], spec.columns[1] + 1))
    rows_hi = _page2_rows_cap(layout, n_columns, spec)
    n_rows = int(rng.integers(spec.rows[0], rows_hi + 1))
    items, headers, grid = _draw_facts(rng, spec, n_rows, n_columns)

    id1, id2 = page_ids(pair_index)
    page1 = PageBuilder(id1)
    titles = [str(t) for t in rng.choice(TITLES, size=2, replace=False)]
    handles1, bottom1 = _render_table(
        page1,
        titles[0],
        items,
        headers,
        grid,
        list(range(n_rows)),
        list(range(n_columns)),
        left=PAGE_MARGIN,
        pitch=TABLE_PITCH,
        gutter=48.0,
    )

    page2 = PageBuilder(id2)
    if layout == "table":
        handles2, bottom2 = _render_table(
            page2,
            titles[1],
            items,
            headers,
            grid,
            [int(i) for i in rng.permutation(n_rows)],
            list(range(n_columns)),
            left=PAGE_MARGIN + 10.0,
            pitch=TABLE_PITCH + 2.0,
            gutter=52.0,
        )
    else:
        order = rng.permutation(n_rows * n_columns)
        facts = [grid[int(k) // n_columns][int(k) % n_columns] for k in order]
        if layout == "list":
            handles2, bottom2 = _render_list(page2, titles[1], facts, left=PAGE_MARGIN)
        else:
            handles2, bottom2 = generate_paragraph_page(page2, facts, rng)

    noise1 = int(rng.binomial(n_rows, spec.noise)) if spec.noise > 0 else 0
    noise2 = int(rng.binomial(n_rows, spec.noise)) if spec.noise > 0 else 0
    _add_distractors(page1, rng, spec, noise1, bottom1 + TABLE_PITCH, PAGE_MARGIN)
    _add_distractors(page2, rng, spec, noise2, bottom2 + TABLE_PITCH, PAGE_MARGIN)

    ids1 = page1.span_ids(layout_config)
    ids2 = page2.span_ids(layout_config)
    pairs = tuple(
        (ids1[handles1[(i, c)]], ids2[handles2[(i, c)]])
        for i in range(n_rows)
        for c in range(n_columns)
    )
    labels = LabeledPair(
        graph1_id=id1,
        graph2_id=id2,
        pairs=pairs,
        meta={
            "columns": n_columns,
            "rows": n_rows,
            "layout": "table",
            "pair_layout": layout,
        },
    )
    return page1.tokens(), page2.tokens(), labels


def label_record(labels: LabeledPair, graph1: str, graph2: str) -> dict[str, Any]:
    """Label JSON document for a generated pair."""
    return {
        "graph1": graph1,
        "graph2": graph2,
        "pairs": [[a, p] for a, p in labels.pairs],
        "meta": dict(labels.meta),
    }


def layout_mix_check(
    spec: CorpusSpec,
    layouts: list[str],
) -> tuple[float, float] | None:
    """Chi-square goodness of fit of drawn layouts against the weights.

    Returns:
        tuple[float, float] | None: (statistic, p-value); None with fewer
        than two weighted layouts
    """
    mix = spec.normalized_mix()
    active = [name for name in LAYOUTS if mix[name] > 0]
    if len(active) < 2:
        return None
    observed = np.array([layouts.count(name) for name in active], dtype=np.float64)
    expected = np.array([mix[name] for name in active]) * len(layouts)
    result = chisquare(observed, expected)
    statistic, p_value = float(result.statistic), float(result.pvalue)
    logger.info(
        "layout mix chi-square %.3f (p=%.4f) over %d pairs",
        statistic,
        p_value,
        len(layouts),
    )
    if p_value < CHI_SQUARE_ALPHA:
        logger.warning(
            "layout mix deviates from the configured weights (p=%.2e)",
            p_value,
        )
    return statistic, p_value


def generate_corpus(
    spec: CorpusSpec,
    out_dir: str | Path,
    layout_config: LayoutConfig | None = None,
) -> Path:
    """Write spec.pages pairs, their labels and a manifest.

    The directory is built next to ``out_dir`` and swapped in on success.

    Returns:
        Path: The manifest path
    """
    out = Path(out_dir)
    entries = []
    layouts = []
    total_pairs = 0
    total_spans = 0
    with atomic_directory(out) as staging:
        for index in range(spec.pages):
            tokens1, tokens2, labels = generate_pair(spec, index, layout_config)
            name = f"pair_{index:04d}"
            tokens1_name = f"{name}_a.jsonl"
            tokens2_name = f"{name}_b.jsonl"
            labels_name = f"{name}.json"
            write_tokens(staging / tokens1_name, tokens1)
            write_tokens(staging / tokens2_name, tokens2)
            record = label_record(labels, tokens1_name, tokens2_name)
            write_json(staging / labels_name, record)

            layout = str(labels.meta["pair_layout"])
            layouts.append(layout)
            total_pairs += len(labels.pairs)
            for tokens in (tokens1, tokens2):
                total_spans += len(segment_page(tokens, layout_config))
            entries.append(
                {
                    "tokens1": tokens1_name,
                    "tokens2": tokens2_name,
                    "labels": labels_name,
                    "seed": [spec.seed, index],
                    "layout": layout,
                },
            )

        layout_mix_check(spec, layouts)
        manifest = {"pairs": entries, "spec_echo": spec.to_dict()}
        write_json(staging / MANIFEST_NAME, manifest)

    logger.info(
        "generated %d pairs: %d labelled pairs, %.1f spans per page",
        spec.pages,
        total_pairs,
        total_spans / (2 * spec.pages),
    )
    return out / MANIFEST_NAME


def split_manifest(manifest_path: str | Path, holdout: int) -> tuple[Path, Path]:
    """Split a manifest into train/test manifests by pair index.

    The last ``holdout`` pairs form the test set. Both manifests are
    written next to the original so relative paths stay valid.

    Returns:
        tuple[Path, Path]: (train manifest, test manifest)
    """
    manifest = read_json(manifest_path)
    entries = manifest.get("pairs", [])
    if not 0 < holdout < len(entries):
        raise ValidationError(
            f"holdout must be in [1, {len(entries) - 1}], got {holdout}",
        )

    root = Path(manifest_path).parent
    cut = len(entries) - holdout
    train_path = write_json(
        root / "train.json",
        {"pairs": entries[:cut], "spec_echo": manifest.get("spec_echo")},
    )
    test_path = write_json(
        root / "test.json",
        {"pairs": entries[cut:], "spec_echo": manifest.get("spec_echo")},
    )
    return train_path, test_path
