#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Span text normalization and trainable span features.

Numbers are masked by magnitude plus a kind keyword (currency, percent,
quantity) and dates by their components, so that the model never sees
digits. Span features are the mean of the embedding-table rows of the
masked tokens; unknown tokens are routed to hash buckets.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from spanflow.config import Config
from spanflow.errors import ValidationError
from spanflow.layout import Span
from spanflow.storage import read_json, write_json

logger = logging.getLogger(__name__)

NUM_TENS = "<num_tens>"
NUM_HUNDREDS = "<num_hundreds>"
NUM_THOUSANDS = "<num_thousands>"
NUM_MILLIONS = "<num_millions>"
CURRENCY = "<currency>"
PERCENT = "<percent>"
QUANTITY = "<quantity>"
DAY = "<day>"
MONTH = "<month>"
YEAR = "<year>"
QUARTER = "<quarter>"

MASK_TOKENS: tuple[str, ...] = (
    NUM_TENS,
    NUM_HUNDREDS,
    NUM_THOUSANDS,
    NUM_MILLIONS,
    CURRENCY,
    PERCENT,
    QUANTITY,
    DAY,
    MONTH,
    YEAR,
    QUARTER,
)

_CURRENCY_SYMBOLS = "$€£¥"
_EDGE_PUNCT = ".,;:!?\"'()[]{}"

_NUMBER_RE = re.compile(
    rf"^[(\-+]?(?P<cur1>[{_CURRENCY_SYMBOLS}])?[(\-+]?"
    rf"(?P<num>\d[\d,.\s']*)"
    rf"(?P<cur2>[{_CURRENCY_SYMBOLS}])?\)?(?P<pct>%)?$",
)
_ISO_DATE_RE = re.compile(
    r"^(19|20)\d{2}[-/](0?[1-9]|1[0-2])[-/](0?[1-9]|[12]\d|3[01])$",
)
_YEAR_RE = re.compile(r"^(fy)?(19|20)\d{2}$")
_QUARTER_RE = re.compile(r"^(q[1-4]|[1-4]q)$")
_DAY_RE = re.compile(r"^(0?[1-9]|[12]\d|3[01])(st|nd|rd|th)?$")
_DIGITS_RE = re.compile(r"\d")
_LEADING_GROUP_RE = re.compile(
    rf"^[(\-+]?[{_CURRENCY_SYMBOLS}]?\d{{1,3}}(?: \d{{3}})*$",
)
_THOUSANDS_GROUP_RE = re.compile(r"^\d{3}(?:\.\d+)?\)?$")

_MONTHS = frozenset(
    [
        "january",
        "february",
        "march",
        "april",
        "may",
        "june",
        "july",
        "august",
        "september",
        "october",
        "november",
        "december",
        "jan",
        "feb",
        "mar",
        "apr",
        "jun",
        "jul",
        "aug",
        "sep",
        "sept",
        "oct",
        "nov",
        "dec",
    ],
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def stable_hash(token: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 bytes of ``token``."""
    value = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        value ^= byte
        value = (value * _FNV_PRIME) & _MASK64
    return value


def magnitude_token(value: float) -> str:
    """Magnitude class of a numeric value."""
    magnitude = abs(value)
    if magnitude < 100:
        return NUM_TENS
    if magnitude < 1000:
        return NUM_HUNDREDS
    if magnitude < 1_000_000:
        return NUM_THOUSANDS
    return NUM_MILLIONS


def _magnitude_from_digits(digits: str) -> str:
    count = len(_DIGITS_RE.findall(digits))
    if count <= 2:
        return NUM_TENS
    if count == 3:
        return NUM_HUNDREDS
    if count <= 6:
        return NUM_THOUSANDS
    return NUM_MILLIONS


def _mask_number(word: str) -> list[str] | None:
    match = _NUMBER_RE.match(word)
    if match is None:
        return None

    digits = match.group("num")
    cleaned = re.sub(r"[,\s']", "", digits).rstrip(".")
    try:
        magnitude = magnitude_token(float(cleaned))
    except ValueError:
        magnitude = _magnitude_from_digits(digits)

    if match.group("cur1") or match.group("cur2"):
        kind = CURRENCY
    elif match.group("pct"):
        kind = PERCENT
    else:
        kind = QUANTITY
    return [magnitude, kind]


def _strip_edges(word: str) -> str:
    stripped = word.strip(_EDGE_PUNCT)
    return stripped or word


def _mask_word(word: str, prev: str | None, nxt: str | None) -> list[str]:
    if word in MASK_TOKENS:
        return [word]

    lowered = word.lower()
    bare = _strip_edges(lowered)

    if word in _CURRENCY_SYMBOLS:
        return [CURRENCY]
    if word == "%":
        return [PERCENT]
    if _ISO_DATE_RE.match(bare):
        return [YEAR, MONTH, DAY]
    if _QUARTER_RE.match(bare):
        return [QUARTER]
    if _YEAR_RE.match(bare):
        return [YEAR]
    if bare in _MONTHS:
        return [MONTH]
    # a day number needs a month on one side: "June 30, 2020" / "30 June"
    if _DAY_RE.match(bare) and (prev in _MONTHS or nxt in _MONTHS):
        return [DAY]

    number = _mask_number(word.rstrip(".,;:"))
    if number is not None:
        return number

    # Digits never survive masking
    surface = _DIGITS_RE.sub("", bare)
    return [surface] if surface else [QUANTITY]


def _is_number(word: str) -> bool:
    return _NUMBER_RE.match(word.rstrip(".,;:")) is not None


def _merge_numbers(words: list[str]) -> list[str]:
    """Rejoin numbers that whitespace split apart.

    Space-grouped thousands (``"4 500 000"``) become one word, and a lone
    currency symbol or percent sign is attached to the number it stands
    next to (``"$ 120"``, ``"12.5 %"``, ``"40 €"``).
    """
    grouped: list[str] = []
    for word in words:
        if (
            grouped
            and _THOUSANDS_GROUP_RE.match(word)
            and _LEADING_GROUP_RE.match(grouped[-1])
        ):
            grouped[-1] = f"{grouped[-1]} {word}"
        else:
            grouped.append(word)

    merged: list[str] = []
    for word in grouped:
        trailing = word == "%" or word in _CURRENCY_SYMBOLS
        if merged and trailing and _is_number(merged[-1]):
            merged[-1] += word
        elif merged and merged[-1] in _CURRENCY_SYMBOLS and _is_number(word):
            merged[-1] += word
        else:
            merged.append(word)
    return merged


def mask_token(raw: str) -> list[str]:
    """Normalize one token string into masked surfaces.

    Multi-word strings such as ``"Q3 2020"`` or ``"June 30, 2020"`` are
    split on whitespace and masked word by word, with month context used to
    recognise day numbers. Numbers split by whitespace are rejoined first,
    so ``"4 500 000"`` and ``"$ 120"`` mask as single figures.

    Args:
        raw: Token text

    Returns:
        list[str]: Lowercased words and mask tokens, no digit characters
    """
    words = _merge_numbers(raw.split())
    bares = [_strip_edges(w.lower()) for w in words]
    masked: list[str] = []
    for i, word in enumerate(words):
        prev = bares[i - 1] if i > 0 else None
        nxt = bares[i + 1] if i + 1 < len(words) else None
        masked.extend(_mask_word(word, prev, nxt))
    return masked


def mask_span(span: Span) -> list[str]:
    """Masked surfaces of a span's text, tokens read in order as one string."""
    return mask_token(" ".join(token.text for token in span.tokens))


@dataclass
class Vocab:
    """Token index with hash buckets for out-of-vocabulary words.

    Attributes:
        tokens: Known tokens; index in this list is the row id
        buckets: Number of hash-bucket rows after the known tokens
        d: Embedding dimension
    """

    tokens: list[str]
    buckets: int = Config.HASH_BUCKETS
    d: int = Config.EMBED_DIM
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.buckets < 1:
            raise ValidationError(f"buckets must be >= 1, got {self.buckets}")
        if self.d < 1:
            raise ValidationError(f"d must be >= 1, got {self.d}")
        missing = [t for t in MASK_TOKENS if t not in self.tokens]
        if missing:
            raise ValidationError(f"vocabulary is missing mask tokens {missing}")
        self.index = {token: i for i, token in enumerate(self.tokens)}

    @property
    def rows(self) -> int:
        return len(self.tokens) + self.buckets

    def lookup(self, token: str) -> int:
        """Row id of a masked token (hash bucket when unknown)."""
        found = self.index.get(token)
        if found is not None:
            return found
        return len(self.tokens) + stable_hash(token) % self.buckets

    def to_dict(self) -> dict[str, Any]:
        return {"tokens": list(self.tokens), "buckets": self.buckets, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Vocab":
        try:
            return cls(
                tokens=list(data["tokens"]),
                buckets=int(data["buckets"]),
                d=int(data["d"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"invalid vocabulary document: {exc}") from exc

    def save(self, path: str | Path) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_dict(read_json(path))


def build_vocab(
    corpus: list[Span],
    min_count: int = Config.MIN_COUNT,
    buckets: int = Config.HASH_BUCKETS,
    d: int = Config.EMBED_DIM,
) -> Vocab:
    """Build a vocabulary from masked span text.

    Args:
        corpus: Spans to count over (non-empty)
        min_count: Words seen fewer times are left to hash buckets
        buckets: Hash bucket count
        d: Embedding dimension

    Returns:
        Vocab: Tokens ordered by (count desc, token asc); mask tokens always in
    """
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")

    counts: Counter[str] = Counter()
    for span in corpus:
        counts.update(mask_span(span))

    kept = {token for token, count in counts.items() if count >= min_count}
    kept.update(MASK_TOKENS)
    ordered = sorted(kept, key=lambda t: (-counts.get(t, 0), t))
    logger.info(
        "vocabulary: %d tokens (%d seen), %d buckets",
        len(ordered),
        len(counts),
        buckets,
    )
    return Vocab(tokens=ordered, buckets=buckets, d=d)


def init_embedding_table(vocab: Vocab, seed: int) -> np.ndarray:
    """Seeded (rows, d) float64 embedding table."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=(vocab.rows, vocab.d))


def span_token_ids(span: Span, vocab: Vocab) -> np.ndarray:
    """Table row ids of a span's masked tokens.

    Raises:
        ValidationError: If the span has no tokens
    """
    surfaces = mask_span(span)
    if not surfaces:
        raise ValidationError(f"span {span.span_id} has no tokens")
    return np.array([vocab.lookup(s) for s in surfaces], dtype=np.int64)


def embed_span(span: Span, vocab: Vocab, table: np.ndarray) -> np.ndarray:
    """Mean embedding row of a span's masked tokens.

    Args:
        span: Span with at least one token
        vocab: Vocabulary matching the table
        table: (rows, d) embedding table

    Returns:
        np.ndarray: (d,) feature vector
    """
    if table.shape[0] != vocab.rows:
        raise ValidationError(
            f"table has {table.shape[0]} rows, vocabulary needs {vocab.rows}",
        )
    return table[span_token_ids(span, vocab)].mean(axis=0)


def featurize_spans(
    spans: tuple[Span, ...] | list[Span],
    vocab: Vocab,
    table: np.ndarray,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Feature matrix for a list of spans.

    Returns:
        tuple[np.ndarray, list[np.ndarray]]: (N, d) features and the row ids
        used per span (needed to route gradients back to the table)
    """
    ids = [span_token_ids(span, vocab) for span in spans]
    feats = np.stack([table[row_ids].mean(axis=0) for row_ids in ids])
    return feats, ids


def table_gradient(
    ids: list[np.ndarray],
    feat_grad: np.ndarray,
    rows: int,
) -> np.ndarray:
    """Scatter span-feature gradients back onto embedding-table rows.

    Args:
        ids: Row ids per span, as returned by :func:`featurize_spans`
        feat_grad: (N, d) gradient with respect to span features
        rows: Table row count

    Returns:
        np.ndarray: (rows, d) gradient, zero on unused rows
    """
    grad = np.zeros((rows, feat_grad.shape[1]), dtype=feat_grad.dtype)
    for row_ids, g in zip(ids, feat_grad, strict=True):
        np.add.at(grad, row_ids, g / len(row_ids))
    return grad
