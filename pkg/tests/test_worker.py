#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Tests for RQ worker job execution."""

import json
from pathlib import Path
from unittest.mock import MagicMock, patch

import pytest

from spanflow.config import Config
from spanflow.errors import ValidationError
from spanflow.featurize import Vocab
from spanflow.gnn import ModelConfig
from spanflow.layout import LayoutConfig
from spanflow.train import (
    TrainConfig,
    corpus_vocab,
    kfold_split,
    load_batches,
    run_fold,
)
from spanflow.worker import fold_payload, perform_fold_job


@pytest.fixture
def payload(
    small_corpus: Path,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> dict:
    """Fold 0 of a two-way split over the small corpus."""
    batches = load_batches(small_corpus)
    vocab = corpus_vocab(batches, small_model, min_count=1)
    splits = kfold_split([b.batch_id for b in batches], 2, small_train.seed)
    return fold_payload(
        str(small_corpus),
        LayoutConfig(),
        small_model,
        small_train,
        vocab,
        0,
        splits[0],
    )


def test_fold_payload_is_plain_json(payload: dict, small_model: ModelConfig) -> None:
    """Payloads survive a JSON round trip unchanged (UT-WKR-001)."""
    assert json.loads(json.dumps(payload)) == payload
    assert payload["layout"] == {
        "gap_factor": Config.GAP_FACTOR,
        "line_tol": Config.LINE_TOL,
    }
    assert payload["model"] == small_model.to_dict()
    assert payload["fold"] == 0
    assert len(payload["train_ids"]) == len(payload["val_ids"]) == 3
    assert Vocab.from_dict(payload["vocab"]).d == small_model.d


def test_perform_fold_job_matches_run_fold(
    payload: dict,
    small_corpus: Path,
    small_model: ModelConfig,
    small_train: TrainConfig,
) -> None:
    """The job result equals an in-process fold run (UT-WKR-002)."""
    batches = load_batches(small_corpus, LayoutConfig())
    vocab = Vocab.from_dict(payload["vocab"])
    split = (payload["train_ids"], payload["val_ids"])

    result = perform_fold_job(payload)
    expected = run_fold(batches, split, small_model, small_train, vocab, 0)

    assert result == expected
    assert [row["epoch"] for row in result["rows"]] == [1, 2]


def test_progress_meta(payload: dict) -> None:
    """Job meta tracks training status and epoch count (UT-WKR-003)."""
    job = MagicMock()
    job.meta = {}

    with patch("spanflow.worker.get_current_job", return_value=job):
        perform_fold_job(payload)

    assert job.meta == {"status": "complete", "fold": 0, "epochs": 2}
    assert job.save_meta.call_count == 2


def test_unknown_batch_id_fails(payload: dict) -> None:
    """Splits naming missing batches raise ValidationError (UT-WKR-004)."""
    payload["val_ids"] = ["pair_9999"]

    with pytest.raises(ValidationError, match="unknown batch"):
        perform_fold_job(payload)
