#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Tests for SVG rollout and graph overlays."""

import xml.etree.ElementTree as ET
from collections.abc import Callable

import numpy as np
import pytest

from spanflow.errors import ValidationError
from spanflow.overlay import (
    QUERY_STROKE,
    SVG_NS,
    ramp_color,
    render_graph_svg,
    render_rollout_svg,
)
from spanflow.pagegraph import PageGraph
from tests.conftest import grid_spans

RECT = f"{{{SVG_NS}}}rect"
LINE = f"{{{SVG_NS}}}line"
TITLE = f"{{{SVG_NS}}}title"


@pytest.mark.parametrize(
    ("weight", "vmax", "expected"),
    [
        pytest.param(0.0, 1.0, "#ffffff", id="UT-OVL-001"),
        pytest.param(1.0, 1.0, "#08306b", id="UT-OVL-002"),
        pytest.param(5.0, 1.0, "#08306b", id="UT-OVL-003"),
        pytest.param(0.3, 0.0, "#ffffff", id="UT-OVL-004"),
        pytest.param(-0.2, 1.0, "#ffffff", id="UT-OVL-005"),
    ],
)
def test_ramp_color(weight: float, vmax: float, expected: str) -> None:
    """The ramp runs white to dark blue and clips at vmax."""
    assert ramp_color(weight, vmax) == expected


def test_ramp_color_is_monotone() -> None:
    """Heavier weights never get lighter colours (UT-OVL-006)."""
    reds = [int(ramp_color(w, 1.0)[1:3], 16) for w in np.linspace(0, 1, 11)]

    assert reds == sorted(reds, reverse=True)


def test_rollout_svg_structure() -> None:
    """One titled rect per span; the query is outlined (UT-OVL-007)."""
    spans = grid_spans(2, 2, words=["net", "sales", "$", "12%"])
    weights = np.array([0.1, 0.6, 0.0, 0.3])

    root = ET.fromstring(render_rollout_svg(spans, weights, query_index=1))
    rects = root.findall(RECT)

    assert root.tag == f"{{{SVG_NS}}}svg"
    assert len(rects) == 4
    assert [r.get("data-span-id") for r in rects] == ["0", "1", "2", "3"]
    assert [r.findtext(TITLE) for r in rects] == ["net", "sales", "$", "12%"]
    query = rects[1]
    assert (query.get("class"), query.get("stroke")) == ("query", QUERY_STROKE)
    assert query.get("stroke-width") == "3"
    assert query.get("fill") == "#08306b"
    assert rects[2].get("fill") == "#ffffff"
    assert rects[0].get("class") is None
    assert float(rects[3].get("data-weight", "nan")) == pytest.approx(0.3)
    assert (rects[3].get("x"), rects[3].get("width")) == ("60", "40")


@pytest.mark.parametrize(
    ("weights", "query", "message"),
    [
        pytest.param(np.ones(3), 0, "weights", id="UT-OVL-008"),
        pytest.param(np.ones(4), 4, "out of range", id="UT-OVL-009"),
    ],
)
def test_rollout_svg_validation(weights: np.ndarray, query: int, message: str) -> None:
    """Weight counts and the query index are checked."""
    with pytest.raises(ValidationError, match=message):
        render_rollout_svg(grid_spans(2, 2), weights, query)


def test_graph_svg_draws_every_edge(grid_graph: Callable[..., PageGraph]) -> None:
    """Debug view has a box per span and a line per directed edge (UT-OVL-010)."""
    g = grid_graph(2, 3)

    root = ET.fromstring(render_graph_svg(g))

    assert len(root.findall(RECT)) == 6
    assert len(root.findall(LINE)) == int((g.neighbors >= 0).sum()) == 14
