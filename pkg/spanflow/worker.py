#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""RQ worker job definitions."""

import logging
from typing import Any

from rq import get_current_job

from spanflow.featurize import Vocab
from spanflow.gnn import ModelConfig
from spanflow.layout import LayoutConfig
from spanflow.train import TrainConfig, load_batches, run_fold

logger = logging.getLogger(__name__)


def fold_payload(
    manifest: str,
    layout_config: LayoutConfig,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    fold: int,
    split: tuple[list[str], list[str]],
) -> dict[str, Any]:
    """JSON-serializable description of one fold job."""
    return {
        "manifest": manifest,
        "layout": {
            "gap_factor": layout_config.gap_factor,
            "line_tol": layout_config.line_tol,
        },
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "vocab": vocab.to_dict(),
        "fold": fold,
        "train_ids": list(split[0]),
        "val_ids": list(split[1]),
    }


def perform_fold_job(payload: dict[str, Any]) -> dict[str, Any]:
    """Train one cross-validation fold.

    This function is called by RQ workers; it reloads the corpus from the
    manifest so the payload stays small.

    Args:
        payload: Output of :func:`fold_payload`

    Returns:
        dict: Fold result {fold, rows, val_loss, val_top1}
    """
    job = get_current_job()
    fold = int(payload["fold"])

    if job:
        job.meta["status"] = "training"
        job.meta["fold"] = fold
        job.save_meta()

    batches = load_batches(payload["manifest"], LayoutConfig(**payload["layout"]))
    result = run_fold(
        batches,
        (payload["train_ids"], payload["val_ids"]),
        ModelConfig(**payload["model"]),
        TrainConfig(**payload["train"]),
        Vocab.from_dict(payload["vocab"]),
        fold,
    )

    if job:
        job.meta["status"] = "complete"
        job.meta["epochs"] = len(result["rows"])
        job.save_meta()

    logger.info("fold %d finished: val_top1 %s", fold, result["val_top1"])
    return result
