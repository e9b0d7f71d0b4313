#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""SVG overlays of spans: rollout heat maps and graph debug views."""

import xml.etree.ElementTree as ET

import numpy as np

from spanflow.errors import ValidationError
from spanflow.layout import Span
from spanflow.pagegraph import NO_NEIGHBOR, PageGraph

SVG_NS = "http://www.w3.org/2000/svg"
RAMP_STEPS = 256
MARGIN = 10.0

# White to dark blue, linear in each channel
_RAMP_LOW = np.array([255, 255, 255])
_RAMP_HIGH = np.array([8, 48, 107])
QUERY_STROKE = "#d62728"


def ramp_color(weight: float, vmax: float) -> str:
    """Hex colour of ``weight`` on the 256-step ramp scaled to ``vmax``."""
    if vmax <= 0 or weight <= 0:
        step = 0
    else:
        step = int(round(min(weight / vmax, 1.0) * (RAMP_STEPS - 1)))
    rgb = _RAMP_LOW + (_RAMP_HIGH - _RAMP_LOW) * step / (RAMP_STEPS - 1)
    r, g, b = (int(round(c)) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _canvas(spans: list[Span] | tuple[Span, ...]) -> ET.Element:
    if not spans:
        raise ValidationError("nothing to draw")
    width = max(s.bbox[2] for s in spans) + MARGIN
    height = max(s.bbox[3] for s in spans) + MARGIN
    return ET.Element(
        "svg",
        {
            "xmlns": SVG_NS,
            "width": f"{width:g}",
            "height": f"{height:g}",
            "viewBox": f"0 0 {width:g} {height:g}",
        },
    )


def _rect(parent: ET.Element, span: Span, fill: str, **extra: str) -> ET.Element:
    x0, y0, x1, y1 = span.bbox
    rect = ET.SubElement(
        parent,
        "rect",
        {
            "x": f"{x0:g}",
            "y": f"{y0:g}",
            "width": f"{x1 - x0:g}",
            "height": f"{y1 - y0:g}",
            "fill": fill,
            "data-span-id": str(span.span_id),
            **extra,
        },
    )
    ET.SubElement(rect, "title").text = span.text
    return rect


def render_rollout_svg(
    spans: list[Span],
    weights: np.ndarray,
    query_index: int,
) -> str:
    """Colour each span by its rollout weight and outline the query span.

    Args:
        spans: Spans of one page, in vertex order
        weights: Rollout row restricted to this page
        query_index: Vertex index of the query span

    Returns:
        str: SVG document
    """
    if len(spans) != len(weights):
        raise ValidationError(f"{len(spans)} spans but {len(weights)} weights")
    if not 0 <= query_index < len(spans):
        raise ValidationError(f"query index {query_index} out of range")

    svg = _canvas(spans)
    vmax = float(np.max(weights))
    for i, (span, weight) in enumerate(zip(spans, weights, strict=True)):
        extra = {
            "data-weight": f"{float(weight):.6g}",
            "stroke": "#999999",
            "stroke-width": "0.5",
        }
        if i == query_index:
            extra.update(
                {"stroke": QUERY_STROKE, "stroke-width": "3", "class": "query"},
            )
        _rect(svg, span, ramp_color(float(weight), vmax), **extra)
    return ET.tostring(svg, encoding="unicode")


def render_graph_svg(graph: PageGraph) -> str:
    """Debug view: span boxes plus one line per directional edge."""
    svg = _canvas(graph.vertices)
    for span in graph.vertices:
        _rect(svg, span, "none", stroke="#333333", **{"stroke-width": "1"})

    centers = [
        ((s.bbox[0] + s.bbox[2]) / 2, (s.bbox[1] + s.bbox[3]) / 2)
        for s in graph.vertices
    ]
    for i, row in enumerate(graph.neighbors):
        for j in row:
            if j == NO_NEIGHBOR:
                continue
            (x1, y1), (x2, y2) = centers[i], centers[int(j)]
            ET.SubElement(
                svg,
                "line",
                {
                    "x1": f"{x1:g}",
                    "y1": f"{y1:g}",
                    "x2": f"{x2:g}",
                    "y2": f"{y2:g}",
                    "stroke": "#1f77b4",
                    "stroke-width": "1",
                },
            )
    return ET.tostring(svg, encoding="unicode")
