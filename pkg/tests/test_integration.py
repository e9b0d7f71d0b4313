#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Integration tests."""

import logging
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from spanflow.checkpoint import Checkpoint
from spanflow.cli import run
from spanflow.evaluate import compositionality_rate, evaluate_corpus, pairing_score
from spanflow.featurize import build_vocab, featurize_spans, init_embedding_table
from spanflow.gnn import ModelConfig, forward, init_params, rollout
from spanflow.layout import segment_page
from spanflow.pagegraph import NO_NEIGHBOR, Direction, build_graph
from spanflow.synthdoc import CorpusSpec, generate_corpus, generate_pair, split_manifest
from spanflow.train import (
    TrainConfig,
    corpus_vocab,
    fit,
    load_batches,
    new_state,
)
from tests.conftest import make_span


@pytest.fixture(autouse=True)
def restore_root_logger() -> Generator[None, None, None]:
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def _pipeline(root: Path) -> None:
    """synth -> train -> eval through the command line."""
    corpus = root / "corpus"
    model = root / "model.json"
    tiny = ["--embed-dim", "8", "--heads", "2", "--layers", "1", "--order", "2"]
    assert run(["synth", "--output", str(corpus), "--pages", "5", "--seed", "3"]) == 0
    manifest = str(corpus / "manifest.json")
    assert (
        run(
            [
                "train",
                "--input",
                manifest,
                "--output",
                str(model),
                "--epochs",
                "2",
                "--folds",
                "2",
                *tiny,
            ],
        )
        == 0
    )
    assert (
        run(
            [
                "eval",
                "--input",
                manifest,
                "--checkpoint",
                str(model),
                "--output",
                str(root / "report"),
            ],
        )
        == 0
    )


@pytest.mark.integration
@pytest.mark.timeout(300)
def test_pipeline_is_byte_identical_across_runs(tmp_path: Path) -> None:
    """Labels, loss traces, checkpoints and reports repeat exactly (IT-E2E-001)."""
    first, second = tmp_path / "one", tmp_path / "two"
    first.mkdir()
    second.mkdir()

    _pipeline(first)
    _pipeline(second)

    compared = [
        *sorted(p.relative_to(first) for p in (first / "corpus").glob("pair_*")),
        Path("model.json"),
        Path("model.log.jsonl"),
        Path("report/report.json"),
        Path("report/embeddings.csv"),
    ]
    assert len(compared) == 5 * 3 + 4
    for relative in compared:
        assert (first / relative).read_bytes() == (second / relative).read_bytes()


@pytest.mark.integration
def test_pairing_score_matches_exhaustive_scan() -> None:
    """Vectorised scoring equals a plain double loop (IT-E2E-002)."""
    rng = np.random.default_rng(8)
    corpus = []
    for _ in range(4):
        anchors = rng.normal(size=(50, 6))
        targets = anchors[rng.permutation(50)] + rng.normal(scale=0.8, size=(50, 6))
        pairs = [(a, int(p)) for a, p in enumerate(rng.permutation(50))]
        corpus.append((anchors, targets, pairs))

    def oracle(k: int) -> float:
        hits = 0
        total = 0
        for anchors, targets, pairs in corpus:
            for a, p in pairs:
                d_pos = sum((anchors[a][c] - targets[p][c]) ** 2 for c in range(6))
                closer = 0
                for j in range(len(targets)):
                    d_j = sum((anchors[a][c] - targets[j][c]) ** 2 for c in range(6))
                    if d_j < d_pos or (d_j == d_pos and j < p):
                        closer += 1
                hits += closer < k
                total += 1
        return hits / total

    for k in (1, 3, 10):
        assert pairing_score(corpus, k) == pytest.approx(oracle(k))


@pytest.mark.integration
def test_hop_matrices_match_shortest_paths() -> None:
    """Hops on jittered grids equal grid offsets and BFS lengths (IT-E2E-003)."""
    rng = np.random.default_rng(21)
    for _ in range(30):
        rows, columns = (int(v) for v in rng.integers(1, 7, size=2))
        spans = []
        for r in range(rows):
            for c in range(columns):
                dx, dy = rng.uniform(-5, 5, size=2)
                x0, y0 = c * 80.0 + dx, r * 30.0 + dy
                spans.append(make_span(r * columns + c, x0, y0, x0 + 50, y0 + 12))

        g = build_graph(spans)

        cells = np.arange(rows * columns)
        row_of, col_of = np.divmod(cells, columns)
        np.testing.assert_array_equal(g.p_vert, row_of[None, :] - row_of[:, None])
        np.testing.assert_array_equal(g.p_hor, col_of[None, :] - col_of[:, None])

        edges = np.zeros((g.size, g.size))
        for i, row in enumerate(g.neighbors):
            edges[i, row[row != NO_NEIGHBOR]] = 1
        lengths = shortest_path(csr_matrix(edges), unweighted=True)
        np.testing.assert_array_equal(np.abs(g.p_vert) + np.abs(g.p_hor), lengths)


@pytest.mark.integration
def test_paragraph_rollout_favours_vertical_neighbours() -> None:
    """Rollout rows are stochastic; lines above and below dominate (IT-E2E-004)."""
    spec = CorpusSpec(
        seed=6,
        pages=1,
        layout_mix={"paragraph": 1.0},
        rows=(4, 6),
        columns=(2, 3),
    )
    _, tokens2, labels = generate_pair(spec, 0)
    spans = segment_page(tokens2)
    graph = build_graph(spans, 1)
    model = ModelConfig(d=8, heads=2, layers=2, order=1)
    vocab = build_vocab(spans, min_count=1, buckets=16, d=model.d)
    feats, _ = featurize_spans(graph.vertices, vocab, init_embedding_table(vocab, 4))

    result = forward(graph, feats, init_params(model, seed=4), model)
    attribution = rollout(result.attention)

    np.testing.assert_allclose(attribution.sum(axis=1), 1.0, atol=1e-9)
    index = {s.span_id: i for i, s in enumerate(graph.vertices)}
    for _, positive in labels.pairs:
        q = index[positive]
        vertical = [
            int(v)
            for v in graph.neighbors[q, [Direction.UP, Direction.DOWN]]
            if v != NO_NEIGHBOR
        ]
        assert len(vertical) == 2
        others = np.ones(graph.size, dtype=bool)
        others[[q, *vertical]] = False
        assert attribution[q, vertical].mean() > attribution[q, others].mean()


# ---------------------------------------------------------------------------
# acceptance runs at desk scale


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory: pytest.TempPathFactory) -> tuple[Path, Path]:
    """40 table pairs, the last 10 held out."""
    root = tmp_path_factory.mktemp("desk")
    spec = CorpusSpec(
        seed=0,
        pages=40,
        layout_mix={"table": 1.0},
        rows=(4, 12),
        columns=(2, 4),
    )
    manifest = generate_corpus(spec, root / "corpus")
    return split_manifest(manifest, 10)


@pytest.fixture(scope="module")
def desk_results(desk_corpus: tuple[Path, Path]) -> dict[int, tuple]:
    """Models of order 1, 5 and 8 trained with identical seeds."""
    train_manifest, test_manifest = desk_corpus
    train_batches = load_batches(train_manifest)
    test_batches = load_batches(test_manifest)
    results = {}
    for order in (1, 5, 8):
        model = ModelConfig(d=64, heads=4, layers=2, order=order, position_keys=True)
        vocab = corpus_vocab(train_batches, model)
        state = new_state(
            model,
            TrainConfig(epochs=200, learning_rate=1e-3, margin=4.0, seed=0),
            vocab,
        )
        fit(train_batches, [], state)
        checkpoint = Checkpoint(model, vocab, state.params, state.table)
        report, _ = evaluate_corpus(test_batches, checkpoint, (1, 10))
        results[order] = (checkpoint, report)
    return results


@pytest.mark.slow
@pytest.mark.timeout(7200)
def test_desk_scale_retrieval(desk_results: dict[int, tuple]) -> None:
    """Order-8 model pairs held-out values (IT-E2E-005)."""
    _, report = desk_results[8]

    assert report.top_k_accuracy[1] >= 0.80
    assert report.top_k_accuracy[10] >= 0.95


@pytest.mark.slow
@pytest.mark.timeout(7200)
def test_higher_orders_retrieve_better(desk_results: dict[int, tuple]) -> None:
    """Top-1 grows with neighbourhood order (IT-E2E-006)."""
    top1 = {
        order: report.top_k_accuracy[1] for order, (_, report) in desk_results.items()
    }

    assert top1[8] >= top1[5] >= top1[1]
    assert top1[8] - top1[1] >= 0.05


@pytest.mark.slow
@pytest.mark.timeout(7200)
def test_trained_tables_compose(
    desk_results: dict[int, tuple],
    tmp_path: Path,
) -> None:
    """Held-out two-column tables pass the analogy test (IT-E2E-007)."""
    checkpoint, _ = desk_results[8]
    spec = CorpusSpec(
        seed=99,
        pages=3,
        layout_mix={"table": 1.0},
        rows=(10, 12),
        columns=(2, 2),
    )
    batches = load_batches(generate_corpus(spec, tmp_path / "tables"))

    report, _ = evaluate_corpus(batches, checkpoint, (1,))

    assert report.counts["tables"] == 3
    assert report.compositionality_rate is not None
    assert report.compositionality_rate >= 0.60


@pytest.mark.integration
def test_additive_fixture_composes_exactly() -> None:
    """Analytically additive cells score 1.0 (IT-E2E-008)."""
    rng = np.random.default_rng(2)
    grid = rng.normal(size=(20, 1, 16)) + rng.normal(size=(1, 2, 16))

    assert compositionality_rate(grid) == 1.0
