#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Reading-pattern graph over the spans of a page.

Every span gets at most one neighbour per direction (up, down, left,
right): the closest span beyond it that overlaps it on the perpendicular
axis. Hop matrices count signed vertical/horizontal steps along those
edges, and the neighbourhood of order x is a ball in hop space.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Literal

import numpy as np

from spanflow.errors import ValidationError
from spanflow.layout import Span, Token, span_to_record

logger = logging.getLogger(__name__)

UNREACHABLE = int(np.iinfo(np.int32).max)
NO_NEIGHBOR = -1

NeighborhoodRule = Literal["and", "or"]


class Direction(IntEnum):
    """Edge directions, in breadth-first expansion order."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def displacement(self) -> tuple[int, int]:
        """(vertical, horizontal) hop contributed by one edge."""
        return _DISPLACEMENTS[self]


_DISPLACEMENTS = {
    Direction.UP: (-1, 0),
    Direction.DOWN: (1, 0),
    Direction.LEFT: (0, -1),
    Direction.RIGHT: (0, 1),
}


@dataclass(frozen=True, eq=False)
class PageGraph:
    """Directed span graph.

    Attributes:
        vertices: Spans; the position in this tuple is the vertex id
        neighbors: (N, 4) directional neighbour ids, -1 where absent
        adjacency: (N, N) boolean neighbourhood at ``order``
        order: Neighbourhood order x of ``adjacency``
        rule: Hop-space rule used for orders above 1
        p_vert: (N, N) signed vertical hops, UNREACHABLE where undefined
        p_hor: (N, N) signed horizontal hops, UNREACHABLE where undefined
        blocks: Vertex counts of the bound sub-graphs, in order
    """

    vertices: tuple[Span, ...]
    neighbors: np.ndarray
    adjacency: np.ndarray
    order: int = 1
    rule: NeighborhoodRule = "and"
    p_vert: np.ndarray | None = None
    p_hor: np.ndarray | None = None
    blocks: tuple[int, ...] = field(default=())

    @property
    def size(self) -> int:
        return len(self.vertices)

    def order1_adjacency(self) -> np.ndarray:
        """Five-vertex neighbourhood: self plus directional neighbours."""
        adjacency = np.eye(self.size, dtype=bool)
        rows, cols = np.nonzero(self.neighbors >= 0)
        adjacency[rows, self.neighbors[rows, cols]] = True
        return adjacency

    def require_hops(self) -> tuple[np.ndarray, np.ndarray]:
        if self.p_vert is None or self.p_hor is None:
            raise ValidationError("hop matrices have not been computed")
        return self.p_vert, self.p_hor


def _bbox_arrays(spans: list[Span]) -> tuple[np.ndarray, ...]:
    boxes = np.array([s.bbox for s in spans], dtype=np.float64)
    return boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]


def _overlap(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Pairwise interval overlap length, positive where intervals intersect."""
    return np.minimum(hi[:, None], hi[None, :]) - np.maximum(lo[:, None], lo[None, :])


def _closest(candidates: np.ndarray, gaps: np.ndarray) -> np.ndarray:
    masked = np.where(candidates, gaps, np.inf)
    # argmin keeps the first minimum, i.e. the smaller vertex id on ties
    best = np.argmin(masked, axis=1)
    has_any = candidates.any(axis=1)
    return np.where(has_any, best, NO_NEIGHBOR)


def build_edges(spans: list[Span]) -> PageGraph:
    """Build the order-1 graph of a page.

    Args:
        spans: At least one span, unique span_ids

    Returns:
        PageGraph: Directional neighbours and the five-vertex adjacency

    Raises:
        ValidationError: On empty input or duplicate span_ids
    """
    if not spans:
        raise ValidationError("cannot build a graph without spans")
    ids = [s.span_id for s in spans]
    if len(set(ids)) != len(ids):
        raise ValidationError("span_ids must be unique")

    ordered = sorted(spans, key=lambda s: s.span_id)
    x0, y0, x1, y1 = _bbox_arrays(ordered)
    n = len(ordered)
    not_self = ~np.eye(n, dtype=bool)

    h_overlap = _overlap(x0, x1) > 0
    v_overlap = _overlap(y0, y1) > 0

    # [i, j]: gap from span i to span j in each direction
    down_gap = y0[None, :] - y1[:, None]
    up_gap = y0[:, None] - y1[None, :]
    right_gap = x0[None, :] - x1[:, None]
    left_gap = x0[:, None] - x1[None, :]

    neighbors = np.full((n, 4), NO_NEIGHBOR, dtype=np.int64)
    neighbors[:, Direction.UP] = _closest(h_overlap & not_self & (up_gap >= 0), up_gap)
    neighbors[:, Direction.DOWN] = _closest(
        h_overlap & not_self & (down_gap >= 0),
        down_gap,
    )
    neighbors[:, Direction.LEFT] = _closest(
        v_overlap & not_self & (left_gap >= 0),
        left_gap,
    )
    neighbors[:, Direction.RIGHT] = _closest(
        v_overlap & not_self & (right_gap >= 0),
        right_gap,
    )

    graph = PageGraph(
        vertices=tuple(ordered),
        neighbors=neighbors,
        adjacency=np.eye(n, dtype=bool),
        blocks=(n,),
    )
    return replace(graph, adjacency=graph.order1_adjacency())


def hop_matrices(g: PageGraph) -> tuple[np.ndarray, np.ndarray]:
    """Signed hop counts between every vertex pair.

    Breadth-first search from each vertex over directional edges,
    expanding up, down, left, right in that order. Each entry is the net
    displacement of the first shortest path found.

    Args:
        g: Graph with directional neighbours

    Returns:
        tuple[np.ndarray, np.ndarray]: (P_vert, P_hor), UNREACHABLE where
        no path exists
    """
    n = g.size
    p_vert = np.full((n, n), UNREACHABLE, dtype=np.int64)
    p_hor = np.full((n, n), UNREACHABLE, dtype=np.int64)
    steps = [(int(d), *d.displacement) for d in Direction]

    for source in range(n):
        p_vert[source, source] = 0
        p_hor[source, source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for direction, dv, dh in steps:
                v = int(g.neighbors[u, direction])
                if v == NO_NEIGHBOR or p_vert[source, v] != UNREACHABLE:
                    continue
                p_vert[source, v] = p_vert[source, u] + dv
                p_hor[source, v] = p_hor[source, u] + dh
                queue.append(v)

    return p_vert, p_hor


def hop_radius(g: PageGraph) -> np.ndarray:
    """Euclidean radius sqrt(P_vert^2 + P_hor^2), inf for unreachable pairs."""
    p_vert, p_hor = g.require_hops()
    reachable = p_vert != UNREACHABLE
    radius = np.full(p_vert.shape, np.inf)
    radius[reachable] = np.hypot(p_vert[reachable], p_hor[reachable])
    return radius


def expand_neighborhood(
    g: PageGraph,
    x: int,
    rule: NeighborhoodRule = "and",
) -> np.ndarray:
    """Adjacency of order x in hop space.

    With the default rule, order 1 is the five-vertex neighbourhood and
    higher orders admit every reachable vertex with |P_vert| <= x and
    |P_hor| <= x. The "or" rule admits reachable vertices with either
    bound satisfied, at every order.

    Args:
        g: Graph with hop matrices
        x: Neighbourhood order, >= 1
        rule: "and" (default) or "or"

    Returns:
        np.ndarray: (N, N) boolean adjacency

    Raises:
        ValidationError: If x < 1 or the rule is unknown
    """
    if x < 1:
        raise ValidationError(f"neighbourhood order must be >= 1, got {x}")
    p_vert, p_hor = g.require_hops()
    reachable = p_vert != UNREACHABLE
    near_vert = np.abs(p_vert) <= x
    near_hor = np.abs(p_hor) <= x

    if rule == "and":
        if x == 1:
            return g.order1_adjacency()
        return reachable & near_vert & near_hor
    if rule == "or":
        return reachable & (near_vert | near_hor)
    raise ValidationError(f"unknown neighbourhood rule {rule!r}")


def with_order(g: PageGraph, x: int, rule: NeighborhoodRule = "and") -> PageGraph:
    """Return a copy of ``g`` whose adjacency is the order-x neighbourhood."""
    if g.p_vert is None:
        p_vert, p_hor = hop_matrices(g)
        g = replace(g, p_vert=p_vert, p_hor=p_hor)
    return replace(g, adjacency=expand_neighborhood(g, x, rule), order=x, rule=rule)


def build_graph(
    spans: list[Span],
    order: int = 1,
    rule: NeighborhoodRule = "and",
) -> PageGraph:
    """Edges, hop matrices and the order-x adjacency in one call."""
    graph = with_order(build_edges(spans), order, rule)
    logger.debug(
        "graph: %d vertices, %d directional edges, order %d",
        graph.size,
        int((graph.neighbors >= 0).sum()),
        order,
    )
    return graph


def _block_diag(a: np.ndarray, b: np.ndarray, fill: Any) -> np.ndarray:
    n1, n2 = a.shape[0], b.shape[0]
    out = np.full((n1 + n2, n1 + n2), fill, dtype=a.dtype)
    out[:n1, :n1] = a
    out[n1:, n1:] = b
    return out


def bind_pair(g1: PageGraph, g2: PageGraph) -> PageGraph:
    """Bind two graphs into one input graph with no edges between them.

    Args:
        g1: First graph (vertex ids kept)
        g2: Second graph (vertex ids offset by |V1|)

    Returns:
        PageGraph: Block-diagonal graph

    Raises:
        ValidationError: If the graphs were built at different orders/rules
    """
    if g1.order != g2.order or g1.rule != g2.rule:
        raise ValidationError(
            f"cannot bind graphs of order {g1.order}/{g1.rule} "
            f"and {g2.order}/{g2.rule}",
        )
    p1v, p1h = g1.require_hops()
    p2v, p2h = g2.require_hops()

    offset = g1.size
    shifted = np.where(g2.neighbors >= 0, g2.neighbors + offset, NO_NEIGHBOR)
    return PageGraph(
        vertices=g1.vertices + g2.vertices,
        neighbors=np.vstack([g1.neighbors, shifted]),
        adjacency=_block_diag(g1.adjacency, g2.adjacency, False),
        order=g1.order,
        rule=g1.rule,
        p_vert=_block_diag(p1v, p2v, UNREACHABLE),
        p_hor=_block_diag(p1h, p2h, UNREACHABLE),
        blocks=(g1.blocks or (g1.size,)) + (g2.blocks or (g2.size,)),
    )


def export_graph(g: PageGraph) -> dict[str, Any]:
    """Serialize a graph to its JSON export form.

    Hop matrices are stored as sparse ``[i, j, v]`` triplets; absent
    entries are unreachable.
    """
    p_vert, p_hor = g.require_hops()
    rows, cols = np.nonzero(p_vert != UNREACHABLE)
    cells = list(zip(rows, cols, strict=True))
    edges = [
        [int(i), int(g.neighbors[i, d])]
        for i in range(g.size)
        for d in Direction
        if g.neighbors[i, d] != NO_NEIGHBOR
    ]
    return {
        "vertices": [span_to_record(s) for s in g.vertices],
        "edges": edges,
        "direction_edges": g.neighbors.tolist(),
        "order": g.order,
        "rule": g.rule,
        "blocks": list(g.blocks),
        "unreachable": UNREACHABLE,
        "p_vert": [[int(i), int(j), int(p_vert[i, j])] for i, j in cells],
        "p_hor": [[int(i), int(j), int(p_hor[i, j])] for i, j in cells],
    }


def load_graph(data: dict[str, Any]) -> PageGraph:
    """Rebuild a graph from :func:`export_graph` output.

    Spans come back as single-token spans carrying their joined text.
    """
    vertices = tuple(
        Span(
            tokens=(
                Token(
                    text=v["text"],
                    bbox=(v["x0"], v["y0"], v["x1"], v["y1"]),
                    page_id=v["page_id"],
                ),
            ),
            span_id=int(v["span_id"]),
        )
        for v in data["vertices"]
    )
    n = len(vertices)
    p_vert = np.full((n, n), UNREACHABLE, dtype=np.int64)
    p_hor = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for i, j, v in data["p_vert"]:
        p_vert[i, j] = v
    for i, j, v in data["p_hor"]:
        p_hor[i, j] = v

    graph = PageGraph(
        vertices=vertices,
        neighbors=np.array(data["direction_edges"], dtype=np.int64).reshape(n, 4),
        adjacency=np.eye(n, dtype=bool),
        p_vert=p_vert,
        p_hor=p_hor,
        blocks=tuple(data.get("blocks", [n])),
    )
    return with_order(graph, int(data.get("order", 1)), data.get("rule", "and"))
