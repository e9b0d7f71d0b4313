#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Record and option validation utilities."""

import math
from typing import Any

_TOKEN_COORDS = ("x0", "y0", "x1", "y1")

ATTENTION_MODES = ("softmax", "literal_eq2")
NEIGHBORHOOD_RULES = ("and", "or")


def _is_finite_number(value: Any) -> bool:
    # bool is an int subclass; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, int | float):
        return False
    return math.isfinite(value)


def is_valid_token_record(record: Any) -> bool:
    """Validate one Token JSONL record.

    Args:
        record: Parsed JSON value

    Returns:
        bool: True if the record is a well-formed token, False otherwise
    """
    # Guard: must be an object
    if not isinstance(record, dict):
        return False

    page_id = record.get("page_id")
    if not isinstance(page_id, str) or not page_id:
        return False

    text = record.get("text")
    if not isinstance(text, str) or not text.strip():
        return False

    if not all(_is_finite_number(record.get(key)) for key in _TOKEN_COORDS):
        return False

    # Boxes must have positive extent on both axes
    return record["x0"] < record["x1"] and record["y0"] < record["y1"]


def is_valid_label_record(record: Any) -> bool:
    """Validate a label file body.

    Args:
        record: Parsed JSON value

    Returns:
        bool: True if graph paths and pairs are well-formed
    """
    if not isinstance(record, dict):
        return False

    for key in ("graph1", "graph2"):
        value = record.get(key)
        if not isinstance(value, str) or not value:
            return False

    pairs = record.get("pairs")
    if not isinstance(pairs, list):
        return False

    anchors: set[int] = set()
    for pair in pairs:
        if not isinstance(pair, list) or len(pair) != 2:
            return False
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in pair):
            return False
        if pair[0] < 0 or pair[1] < 0:
            return False
        # Anchors are unique within a pair set
        if pair[0] in anchors:
            return False
        anchors.add(pair[0])

    meta = record.get("meta", {})
    return isinstance(meta, dict)


def is_valid_attention_mode(mode: str | None) -> bool:
    """Check an attention normalization name."""
    return mode in ATTENTION_MODES


def is_valid_neighborhood_rule(rule: str | None) -> bool:
    """Check a neighborhood rule name."""
    return rule in NEIGHBORHOOD_RULES


def parse_k_list(raw: str | list[int] | tuple[int, ...]) -> tuple[int, ...] | None:
    """Parse a top-k list such as ``"1,3,5,10"``.

    Args:
        raw: Comma separated string or sequence of ints

    Returns:
        tuple[int, ...] | None: Sorted unique positive values, None if invalid
    """
    if isinstance(raw, str):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        try:
            values = [int(p) for p in parts]
        except ValueError:
            return None
    else:
        values = list(raw)

    if not values:
        return None
    if any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in values):
        return None
    return tuple(sorted(set(values)))


def is_valid_k_list(raw: str | list[int] | tuple[int, ...]) -> bool:
    """Check a top-k list."""
    return parse_k_list(raw) is not None
