#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Pytest configuration and fixtures."""

from collections.abc import Callable, Generator
from pathlib import Path

import fakeredis
import numpy as np
import pytest
from rq import Queue

from spanflow.featurize import build_vocab
from spanflow.gnn import ModelConfig
from spanflow.layout import Span, Token
from spanflow.pagegraph import PageGraph, build_graph
from spanflow.synthdoc import CorpusSpec, generate_corpus
from spanflow.train import Batch, LabeledPair, TrainConfig


def make_span(
    span_id: int,
    x0: float,
    y0: float,
    x1: float,
    y1: float,
    text: str = "cell",
    page_id: str = "p1",
) -> Span:
    """Single-token span with the given box."""
    token = Token(text=text, bbox=(x0, y0, x1, y1), page_id=page_id)
    return Span(tokens=(token,), span_id=span_id)


def grid_spans(
    rows: int,
    columns: int,
    page_id: str = "p1",
    words: list[str] | None = None,
) -> list[Span]:
    """rows x columns grid of 40x10 boxes, ids row-major."""
    spans = []
    for r in range(rows):
        for c in range(columns):
            index = r * columns + c
            text = words[index % len(words)] if words else f"w{r}x{c}"
            spans.append(
                make_span(
                    index,
                    c * 60.0,
                    r * 20.0,
                    c * 60.0 + 40.0,
                    r * 20.0 + 10.0,
                    text=text,
                    page_id=page_id,
                ),
            )
    return spans


@pytest.fixture
def fake_redis_conn() -> fakeredis.FakeRedis:
    """Create a fake Redis connection for testing.

    Returns:
        fakeredis.FakeRedis: Fake Redis instance (bytes mode for RQ)
    """
    return fakeredis.FakeRedis()


@pytest.fixture(autouse=True)
def isolate_redis() -> Generator[None, None, None]:
    """Inject fake Redis into spanflow.tasks singletons for every test.

    Jobs run synchronously (``is_async=False``) so fold jobs complete inside
    ``enqueue``. Prevents tests from connecting to a real Redis instance.
    """
    import spanflow.tasks as tasks_mod

    fake = fakeredis.FakeRedis()
    original_conn = tasks_mod._redis_conn
    original_queue = tasks_mod._queue
    tasks_mod._redis_conn = fake
    tasks_mod._queue = Queue("spanflow", connection=fake, is_async=False)
    yield
    tasks_mod._redis_conn = original_conn
    tasks_mod._queue = original_queue


@pytest.fixture
def small_model() -> ModelConfig:
    """Tiny encoder for fast tests."""
    return ModelConfig(d=8, heads=2, layers=2, order=1)


@pytest.fixture
def small_train() -> TrainConfig:
    """Short training schedule."""
    return TrainConfig(epochs=2, learning_rate=1e-2, folds=2, seed=3)


@pytest.fixture
def grid_graph() -> Callable[..., PageGraph]:
    """Factory for grid page graphs."""

    def build(
        rows: int,
        columns: int,
        order: int = 1,
        page_id: str = "p1",
    ) -> PageGraph:
        return build_graph(grid_spans(rows, columns, page_id), order)

    return build


@pytest.fixture
def toy_batches() -> list[Batch]:
    """Four 2x3 grid page pairs whose cells share words across pages."""
    words = ["revenue", "costs", "margin", "$", "12%", "profit"]
    batches = []
    for index in range(4):
        rotated = words[index:] + words[:index]
        g1 = build_graph(grid_spans(2, 3, f"b{index}_a", rotated))
        g2 = build_graph(grid_spans(3, 2, f"b{index}_b", rotated[::-1]))
        # word k sits at vertex k on page 1 and at vertex 5 - k on page 2
        pairs = tuple((k, 5 - k) for k in range(6))
        labels = LabeledPair(f"b{index}_a", f"b{index}_b", pairs)
        batches.append(Batch(f"batch_{index}", g1, g2, labels))
    return batches


@pytest.fixture
def toy_vocab(toy_batches: list[Batch], small_model: ModelConfig):
    """Vocabulary over the toy batches."""
    spans = [s for b in toy_batches for s in b.spans()]
    return build_vocab(spans, min_count=1, buckets=8, d=small_model.d)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for numeric fixtures."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus(tmp_path: Path) -> Path:
    """Six generated pairs on disk; returns the manifest path."""
    spec = CorpusSpec(seed=5, pages=6, rows=(4, 6), columns=(2, 3))
    return generate_corpus(spec, tmp_path / "corpus")
