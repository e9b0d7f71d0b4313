#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Retrieval scoring, compositionality testing and report emission."""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from spanflow.checkpoint import Checkpoint
from spanflow.config import Config
from spanflow.errors import StorageError, ValidationError
from spanflow.featurize import featurize_spans
from spanflow.gnn import ForwardResult, forward, rollout
from spanflow.layout import Span
from spanflow.overlay import render_rollout_svg
from spanflow.storage import atomic_write_text, write_json
from spanflow.train import Batch
from spanflow.validators import parse_k_list

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
TABLE_LAYOUT = "table"


def distance_vector(anchor: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``anchor`` to every row of ``targets``.

    Raises:
        ValidationError: On an empty target set or a dimension mismatch
    """
    targets = np.atleast_2d(targets)
    if targets.shape[0] == 0 or targets.size == 0:
        raise ValidationError("target set is empty")
    if targets.shape[1] != anchor.shape[-1]:
        raise ValidationError(
            f"dimension mismatch: {anchor.shape[-1]} vs {targets.shape[1]}",
        )
    return np.linalg.norm(targets - anchor, axis=1)


def pair_rank(distances: np.ndarray, target: int) -> int:
    """0-based rank of ``target``; equal distances rank lower indices first."""
    d_target = distances[target]
    closer = np.count_nonzero(distances < d_target)
    tied_before = np.count_nonzero(distances[:target] == d_target)
    return int(closer + tied_before)


def pair_ranks(
    anchors: np.ndarray,
    targets: np.ndarray,
    pairs: tuple[tuple[int, int], ...] | list[tuple[int, int]],
) -> list[int]:
    """Rank of each labelled positive among all target vertices."""
    return [pair_rank(distance_vector(anchors[a], targets), p) for a, p in pairs]


def top_k_rates(ranks: list[int], ks: tuple[int, ...]) -> dict[int, float]:
    """Fraction of ranks below each k."""
    if not ranks:
        raise ValidationError("no labelled vertices to score")
    array = np.asarray(ranks)
    return {k: float(np.mean(array < k)) for k in ks}


def pairing_score(
    corpus: list[tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]],
    k: int = 1,
) -> float:
    """Share of labelled anchors whose pair is among the k nearest targets.

    Args:
        corpus: (anchor embeddings, target embeddings, pairs) per document pair
        k: Cut-off; k=1 is the plain argmin score

    Returns:
        float: Rate in [0, 1]
    """
    ranks = [
        r
        for anchors, targets, pairs in corpus
        for r in pair_ranks(anchors, targets, pairs)
    ]
    return top_k_rates(ranks, (k,))[k]


def _as_grid(table: Any) -> np.ndarray:
    try:
        grid = np.asarray(table, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"incomplete table grid: {exc}") from exc
    if grid.ndim != 3:
        raise ValidationError(
            f"table grid must be rows x columns x d, got shape {grid.shape}",
        )
    rows, columns, _ = grid.shape
    if rows < 1 or columns < 2:
        raise ValidationError(
            f"table grid needs >= 1 row and >= 2 columns, got {rows}x{columns}",
        )
    if not np.all(np.isfinite(grid)):
        raise ValidationError("incomplete table grid: non-finite cells")
    return grid


def compositionality_counts(
    table: Any,
    *,
    exclude_inputs: bool = False,
) -> tuple[int, int]:
    """Successes and applications of the column-offset analogy test.

    For every column pair k < l and rows i, j the vector
    v[i, l] - v[i, k] + v[j, k] is matched to its nearest cell of the same
    table (lowest flat index on ties); success means it lands on v[j, l].
    With ``exclude_inputs`` the three input cells are skipped as
    candidates unless one of them is the target.

    Returns:
        tuple[int, int]: (successes, applications)
    """
    grid = _as_grid(table)
    rows, columns, d = grid.shape
    cells = grid.reshape(rows * columns, d)

    successes = 0
    applications = 0
    row_i, row_j = np.meshgrid(np.arange(rows), np.arange(rows), indexing="ij")
    for k, l in combinations(range(columns), 2):
        offset = grid[:, l] - grid[:, k]
        queries = offset[:, None, :] + grid[:, k][None, :, :]
        distances = cdist(queries.reshape(rows * rows, d), cells)
        distances = distances.reshape(rows, rows, -1)
        target = row_j * columns + l
        if exclude_inputs:
            candidates = (
                row_i * columns + l,
                row_i * columns + k,
                row_j * columns + k,
            )
            for inputs in candidates:
                skip = inputs != target
                ii, jj = np.nonzero(skip)
                distances[ii, jj, inputs[skip]] = np.inf
        nearest = np.argmin(distances, axis=2)
        successes += int(np.count_nonzero(nearest == target))
        applications += rows * rows

    return successes, applications


def compositionality_rate(table: Any, *, exclude_inputs: bool = False) -> float:
    """Nearest-neighbour success rate of the column-offset analogy test.

    Args:
        table: rows x columns x d grid of cell embeddings (columns >= 2)
        exclude_inputs: Drop the input cells from the candidate pool

    Returns:
        float: successes / applications

    Raises:
        ValidationError: If the grid is incomplete
    """
    successes, applications = compositionality_counts(
        table,
        exclude_inputs=exclude_inputs,
    )
    return successes / applications


def table_grids(embeddings: np.ndarray, batch: Batch) -> np.ndarray | None:
    """rows x columns x d grid of the page-1 value cells of a table batch.

    Anchors are listed row-major in the label file; batches whose metadata
    does not describe a full table yield None.
    """
    meta = batch.labels.meta
    rows, columns = meta.get("rows"), meta.get("columns")
    if not isinstance(rows, int) or not isinstance(columns, int) or columns < 2:
        return None
    anchors = [a for a, _ in batch.labels.pairs]
    if len(anchors) != rows * columns:
        return None
    return embeddings[anchors].reshape(rows, columns, -1)


def _string_keys(rates: dict[int, float]) -> dict[str, float]:
    return {str(k): v for k, v in sorted(rates.items())}


@dataclass
class EvalReport:
    """Evaluation summary over a set of held-out pairs."""

    top_k_accuracy: dict[int, float]
    per_table_accuracy: dict[int, float]
    compositionality_rate: float | None
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "top_k_accuracy": _string_keys(self.top_k_accuracy),
            "per_table_accuracy": _string_keys(self.per_table_accuracy),
            "compositionality_rate": self.compositionality_rate,
            "counts": dict(self.counts),
        }


@dataclass
class BatchEmbedding:
    """Forward output of one evaluated batch."""

    batch: Batch
    result: ForwardResult

    @property
    def embeddings(self) -> np.ndarray:
        return self.result.embeddings


def embed_batch(batch: Batch, checkpoint: Checkpoint) -> BatchEmbedding:
    """Run the checkpointed encoder over a bound page pair."""
    bound = batch.bound(checkpoint.model_config)
    feats, _ = featurize_spans(bound.vertices, checkpoint.vocab, checkpoint.table)
    result = forward(bound, feats, checkpoint.params, checkpoint.model_config)
    return BatchEmbedding(batch, result)


def evaluate_corpus(
    batches: list[Batch],
    checkpoint: Checkpoint,
    ks: tuple[int, ...] | str = Config.EVAL_K,
) -> tuple[EvalReport, list[BatchEmbedding]]:
    """Score a checkpoint on held-out batches.

    Returns:
        tuple[EvalReport, list[BatchEmbedding]]: The report and the
        per-batch forward results (for CSV and overlay output)
    """
    parsed = parse_k_list(ks) if isinstance(ks, str) else tuple(sorted(set(ks)))
    if not parsed:
        raise ValidationError(f"invalid k list {ks!r}")

    embedded = [embed_batch(batch, checkpoint) for batch in batches]

    ranks: list[int] = []
    by_columns: dict[int, list[int]] = {}
    successes = applications = tables = 0
    for item in embedded:
        batch = item.batch
        batch_ranks = pair_ranks(
            item.embeddings[: batch.n1],
            item.embeddings[batch.n1 :],
            batch.labels.pairs,
        )
        ranks.extend(batch_ranks)

        meta = batch.labels.meta
        if meta.get("layout") == TABLE_LAYOUT and isinstance(meta.get("columns"), int):
            by_columns.setdefault(meta["columns"], []).extend(batch_ranks)

        grid = table_grids(item.embeddings, batch)
        if grid is not None:
            s, a = compositionality_counts(grid)
            successes += s
            applications += a
            tables += 1

    report = EvalReport(
        top_k_accuracy=top_k_rates(ranks, parsed),
        per_table_accuracy={
            c: top_k_rates(r, (1,))[1] for c, r in by_columns.items() if r
        },
        compositionality_rate=successes / applications if applications else None,
        counts={
            "batches": len(batches),
            "labeled_vertices": len(ranks),
            "tables": tables,
            "applications": applications,
        },
    )
    logger.info(
        "evaluation: top-k %s over %d labelled vertices",
        report.top_k_accuracy,
        len(ranks),
    )
    return report, embedded


def embeddings_frame(embedded: list[BatchEmbedding]) -> pd.DataFrame:
    """One row per vertex: batch, span_id, page_id and the d coordinates."""
    frames = []
    for item in embedded:
        spans = item.batch.spans()
        d = item.embeddings.shape[1]
        frame = pd.DataFrame(item.embeddings, columns=[f"e{i}" for i in range(d)])
        frame.insert(0, "page_id", [s.page_id for s in spans])
        frame.insert(0, "span_id", [s.span_id for s in spans])
        frame.insert(0, "batch_id", item.batch.batch_id)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


@dataclass
class RolloutOverlay:
    """Rollout weights of one query span over the spans of its page."""

    name: str
    spans: list[Span]
    weights: np.ndarray
    query_index: int


def query_overlays(
    item: BatchEmbedding,
    queries: list[int] | None = None,
) -> list[RolloutOverlay]:
    """Page-1 rollout overlays for the given query vertices (default: anchors)."""
    batch = item.batch
    if queries is None:
        queries = [a for a, _ in batch.labels.pairs]
    attribution = rollout(item.result.attention)
    spans = list(batch.graph1.vertices)
    return [
        RolloutOverlay(
            name=f"{batch.batch_id}_q{q}",
            spans=spans,
            weights=attribution[q, : batch.n1],
            query_index=q,
        )
        for q in queries
    ]


def emit_report(
    out_dir: str | Path,
    report: EvalReport,
    embeddings: pd.DataFrame | None = None,
    overlays: list[RolloutOverlay] | None = None,
) -> list[Path]:
    """Write report.json, embeddings.csv and one SVG per overlay.

    Raises:
        StorageError: If any file cannot be written (path included)
    """
    out = Path(out_dir)
    if not out.is_dir():
        raise StorageError(out, "output directory does not exist")

    written = [write_json(out / "report.json", report.to_dict())]
    if embeddings is not None:
        csv = embeddings.to_csv(index=False)
        written.append(atomic_write_text(out / "embeddings.csv", csv))
    for overlay in overlays or []:
        svg = render_rollout_svg(overlay.spans, overlay.weights, overlay.query_index)
        written.append(atomic_write_text(out / f"rollout_{overlay.name}.svg", svg))
    logger.info("wrote %d report files to %s", len(written), out)
    return written
