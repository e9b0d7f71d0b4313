#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Tests for the contrastive objective, optimizer and cross-validation."""

import json
from pathlib import Path

import numpy as np
import pytest

from spanflow.errors import NonFiniteLossError, ValidationError
from spanflow.featurize import Vocab, featurize_spans
from spanflow.gnn import ModelConfig
from spanflow.train import (
    EMBEDDING_PARAM,
    AdamOptimizer,
    Batch,
    LabeledPair,
    TrainConfig,
    batch_loss,
    contrastive_loss,
    contrastive_loss_grad,
    corpus_vocab,
    cross_validate,
    fit,
    kfold_split,
    load_batch,
    load_batches,
    mine_negative,
    new_state,
    run_fold,
    train_epoch,
    validate,
)


@pytest.mark.parametrize(
    ("negative", "expected"),
    [
        pytest.param([0.5, 0.0], 5.5, id="UT-TRN-001"),
        pytest.param([2.0, 0.0], 5.0, id="UT-TRN-002"),
    ],
)
def test_contrastive_loss_values(negative: list[float], expected: float) -> None:
    """Positive distance plus the hinge on the negative distance."""
    anchor = np.zeros(2)
    positive = np.array([3.0, 4.0])

    assert contrastive_loss(anchor, positive, np.array(negative), 1.0) == expected


def test_contrastive_loss_grad_matches_finite_differences(
    rng: np.random.Generator,
) -> None:
    """Analytic subgradients agree with numeric ones off the kinks (UT-TRN-003)."""
    anchor, positive = rng.normal(size=(2, 5))
    negative = anchor + 0.1 * rng.normal(size=5)
    margin = 2.0

    loss, g_a, g_p, g_n = contrastive_loss_grad(anchor, positive, negative, margin)

    assert loss == pytest.approx(contrastive_loss(anchor, positive, negative, margin))
    eps = 1e-6
    for vector, analytic in ((anchor, g_a), (positive, g_p), (negative, g_n)):
        for i in range(5):
            vector[i] += eps
            up = contrastive_loss(anchor, positive, negative, margin)
            vector[i] -= 2 * eps
            down = contrastive_loss(anchor, positive, negative, margin)
            vector[i] += eps
            assert analytic[i] == pytest.approx((up - down) / (2 * eps), abs=1e-6)


def test_contrastive_loss_grad_zero_distances() -> None:
    """Coincident vectors give a zero subgradient (UT-TRN-004)."""
    v = np.ones(3)

    loss, g_a, g_p, g_n = contrastive_loss_grad(v, v.copy(), v.copy(), 1.0)

    assert loss == 1.0
    for grad in (g_a, g_p, g_n):
        np.testing.assert_array_equal(grad, 0.0)


def test_mine_negative_skips_positive_and_breaks_ties_low() -> None:
    """The closest non-positive candidate wins, lowest index on ties (UT-TRN-005)."""
    anchor = np.zeros(2)
    candidates = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])

    assert mine_negative(anchor, candidates, pos_index=0) == 1
    assert mine_negative(anchor, candidates, pos_index=3) == 0
    with pytest.raises(ValidationError, match="two candidates"):
        mine_negative(anchor, candidates[:1], 0)


def test_mine_negative_matches_exhaustive_scan(rng: np.random.Generator) -> None:
    """50 candidates: the pick equals a plain loop over distances (UT-TRN-032)."""
    for trial in range(20):
        anchor = rng.normal(size=6)
        candidates = rng.normal(size=(50, 6))
        if trial % 4 == 0:
            # duplicated rows force ties
            candidates[30] = candidates[10]
        pos_index = int(rng.integers(50))

        best, best_distance = -1, float("inf")
        for j in range(50):
            if j == pos_index:
                continue
            distance = sum((candidates[j][c] - anchor[c]) ** 2 for c in range(6))
            if distance < best_distance:
                best, best_distance = j, distance

        assert mine_negative(anchor, candidates, pos_index) == best


def test_adam_first_step_moves_by_learning_rate() -> None:
    """Bias correction makes the first update about lr * sign(g) (UT-TRN-006)."""
    params = {"b": np.array([1.0, -1.0]), "a": np.array([0.0])}
    grads = {"b": np.array([0.5, -2.0]), "a": np.array([3.0])}
    optimizer = AdamOptimizer(0.1, 0.9, 0.999, 1e-8)
    b_before = params["b"]

    optimizer.step(params, grads)

    assert params["b"] is b_before
    np.testing.assert_allclose(params["b"], [0.9, -0.9])
    np.testing.assert_allclose(params["a"], [-0.1])
    assert optimizer.step_count == 1


def test_adam_zero_learning_rate_is_a_no_op() -> None:
    """lr = 0 leaves parameters untouched (UT-TRN-007)."""
    params = {"w": np.array([1.0, 2.0])}

    AdamOptimizer(0.0, 0.9, 0.999, 1e-8).step(params, {"w": np.array([1.0, 1.0])})

    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_batch_loss_gradients_match_finite_differences(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
    rng: np.random.Generator,
) -> None:
    """End-to-end gradients reach the encoder and the table (UT-TRN-008)."""
    state = new_state(small_model, small_train, toy_vocab)
    batch = toy_batches[0]

    _, grads, _ = batch_loss(batch, state)
    assert grads is not None
    named = state.named_parameters()
    assert set(grads) == set(named)

    _, ids = featurize_spans(batch.bound(small_model).vertices, toy_vocab, state.table)
    used_rows = np.unique(np.concatenate(ids))
    checks = {
        EMBEDDING_PARAM: [(int(r), int(c)) for r in used_rows[:4] for c in (0, 5)],
        "layers.0.wq": [(0, 1, 2), (1, 7, 0)],
        "layers.1.w2": [(3, 4), (15, 0)],
        "layers.1.ln2_g": [(2,), (6,)],
    }
    eps = 1e-6
    for name, indices in checks.items():
        for index in indices:
            original = named[name][index]
            named[name][index] = original + eps
            up = batch_loss(batch, state, with_grad=False)[0]
            named[name][index] = original - eps
            down = batch_loss(batch, state, with_grad=False)[0]
            named[name][index] = original
            numeric = (up - down) / (2 * eps)
            assert grads[name][index] == pytest.approx(
                numeric,
                rel=1e-4,
                abs=1e-6,
            ), f"{name}{index}"


def test_batch_without_pairs_has_zero_loss(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """A batch with no labels contributes nothing (UT-TRN-009)."""
    source = toy_batches[0]
    empty = Batch("empty", source.graph1, source.graph2, LabeledPair("a", "b", ()))
    state = new_state(small_model, small_train, toy_vocab)

    loss, grads, embeddings = batch_loss(empty, state)

    assert (loss, grads) == (0.0, None)
    assert embeddings.shape == (12, 8)


def test_non_finite_loss_is_reported(
    monkeypatch: pytest.MonkeyPatch,
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """A NaN pair loss names the batch and pair (UT-TRN-010)."""
    state = new_state(small_model, small_train, toy_vocab)
    nan_grad = (float("nan"), np.zeros(8), np.zeros(8), np.zeros(8))
    monkeypatch.setattr(
        "spanflow.train.contrastive_loss_grad",
        lambda *args: nan_grad,
    )

    with pytest.raises(NonFiniteLossError) as exc_info:
        batch_loss(toy_batches[2], state)

    assert (exc_info.value.batch_id, exc_info.value.pair_index) == ("batch_2", 0)


def test_training_is_deterministic_and_learns(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
) -> None:
    """Same seed gives the same losses; loss at least halves (UT-TRN-011)."""
    config = TrainConfig(epochs=40, learning_rate=1e-2, folds=2, seed=3)
    first = fit(toy_batches, [], new_state(small_model, config, toy_vocab))
    second = fit(toy_batches, [], new_state(small_model, config, toy_vocab))

    losses = [row["train_loss"] for row in first]
    assert losses == [row["train_loss"] for row in second]
    assert losses[-1] <= 0.5 * losses[0]
    assert [row["epoch"] for row in first] == list(range(1, 41))
    assert first[0]["val_loss"] is None


def test_fit_reports_validation_and_callbacks(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """Each epoch row carries validation metrics (UT-TRN-012)."""
    seen: list[dict] = []
    state = new_state(small_model, small_train, toy_vocab)

    rows = fit(toy_batches[:3], toy_batches[3:], state, fold=1, on_epoch=seen.append)

    assert rows == seen
    assert len(rows) == small_train.epochs
    assert rows[-1]["fold"] == 1
    assert 0.0 <= rows[-1]["val_top1"] <= 1.0
    assert rows[-1]["val_loss"] >= 0.0


def test_validate_without_batches(
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """No validation batches means no metrics (UT-TRN-013)."""
    state = new_state(small_model, small_train, toy_vocab)

    assert validate([], state) == (None, None)
    with pytest.raises(ValidationError, match="no training batches"):
        train_epoch([], state)


def test_kfold_split_partitions_ids() -> None:
    """Every id is held out exactly once (UT-TRN-014)."""
    ids = [f"b{i}" for i in range(7)]

    folds = kfold_split(ids, 3, seed=4)

    held = [i for _, val in folds for i in val]
    assert sorted(held) == sorted(ids)
    assert [len(val) for _, val in folds] == [3, 2, 2]
    for train, val in folds:
        assert set(train) | set(val) == set(ids)
        assert not set(train) & set(val)
    assert folds == kfold_split(ids, 3, seed=4)


@pytest.mark.parametrize(
    "k",
    [
        pytest.param(1, id="UT-TRN-015"),
        pytest.param(5, id="UT-TRN-016"),
    ],
)
def test_kfold_split_bounds(k: int) -> None:
    """k must lie in [2, number of batches]."""
    with pytest.raises(ValidationError):
        kfold_split(["a", "b", "c", "d"], k, seed=0)


def test_cross_validate_in_process(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """Folds run in order and reduce to means (UT-TRN-017)."""
    result = cross_validate(toy_batches, small_model, small_train, toy_vocab)

    assert [f["fold"] for f in result.folds] == [0, 1]
    assert len(result.rows) == 2 * small_train.epochs
    assert result.mean_val_loss == pytest.approx(
        np.mean([f["val_loss"] for f in result.folds]),
    )


def test_cross_validate_with_runner_sorts_results(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """A custom runner receives the splits; results are reordered (UT-TRN-018)."""
    received = []

    def runner(splits):
        received.extend(splits)
        results = [
            run_fold(toy_batches, split, small_model, small_train, toy_vocab, fold)
            for fold, split in enumerate(splits)
        ]
        return list(reversed(results))

    result = cross_validate(toy_batches, small_model, small_train, toy_vocab, runner)
    in_process = cross_validate(toy_batches, small_model, small_train, toy_vocab)

    assert received == kfold_split([b.batch_id for b in toy_batches], 2, 3)
    assert [f["fold"] for f in result.folds] == [0, 1]
    assert result.mean_val_loss == in_process.mean_val_loss


def test_run_fold_rejects_unknown_batch(
    toy_batches: list[Batch],
    toy_vocab: Vocab,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """Splits naming missing batches fail (UT-TRN-019)."""
    with pytest.raises(ValidationError, match="unknown batch"):
        run_fold(toy_batches, (["nope"], []), small_model, small_train, toy_vocab, 0)


@pytest.mark.parametrize(
    ("pairs", "message"),
    [
        pytest.param(((0, 1), (0, 2)), "unique", id="UT-TRN-020"),
        pytest.param(((6, 0),), "out of bounds", id="UT-TRN-021"),
        pytest.param(((0, 6),), "out of bounds", id="UT-TRN-022"),
    ],
)
def test_batch_label_validation(
    toy_batches: list[Batch],
    pairs: tuple[tuple[int, int], ...],
    message: str,
) -> None:
    """Anchors are unique and pairs stay inside their pages."""
    source = toy_batches[0]

    with pytest.raises(ValidationError, match=message):
        Batch("bad", source.graph1, source.graph2, LabeledPair("a", "b", pairs))


@pytest.mark.parametrize(
    "kwargs",
    [
        pytest.param({"margin": 0.0}, id="UT-TRN-023"),
        pytest.param({"epochs": 0}, id="UT-TRN-024"),
        pytest.param({"folds": 1}, id="UT-TRN-025"),
        pytest.param({"learning_rate": -1.0}, id="UT-TRN-026"),
        pytest.param({"beta2": 1.0}, id="UT-TRN-027"),
        pytest.param({"epsilon": 0.0}, id="UT-TRN-028"),
    ],
)
def test_train_config_validation(kwargs: dict) -> None:
    """Invalid optimization settings are rejected."""
    with pytest.raises(ValidationError):
        TrainConfig(**kwargs)


def test_new_state_checks_dimensions(
    toy_vocab: Vocab,
    small_train: TrainConfig,
) -> None:
    """Vocabulary and model dimensions must agree (UT-TRN-029)."""
    with pytest.raises(ValidationError, match="dimension"):
        new_state(ModelConfig(d=4, heads=2, layers=1, order=1), small_train, toy_vocab)


def test_load_batches_from_manifest(
    small_corpus: Path,
    small_model: ModelConfig,
) -> None:
    """Manifest pairs load as batches named after their label files (UT-TRN-030)."""
    batches = load_batches(small_corpus)

    assert [b.batch_id for b in batches] == [f"pair_{i:04d}" for i in range(6)]
    for batch in batches:
        assert batch.labels.pairs
        assert batch.bound(small_model).blocks == (batch.n1, batch.graph2.size)
    vocab = corpus_vocab(batches, small_model, min_count=1, buckets=4)
    assert vocab.d == small_model.d


def test_load_batch_rejects_unknown_span(small_corpus: Path) -> None:
    """Labels must refer to spans that segmentation produced (UT-TRN-031)."""
    root = small_corpus.parent
    entry = json.loads(small_corpus.read_text())["pairs"][0]
    labels = json.loads((root / entry["labels"]).read_text())
    labels["pairs"] = [[9999, 0]]
    bad = root / "bad.json"
    bad.write_text(json.dumps(labels))

    with pytest.raises(ValidationError, match="unknown span"):
        load_batch(root / entry["tokens1"], root / entry["tokens2"], bad)
