#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""RQ job management for cross-validation folds."""

import logging
import time
from typing import Any

import redis
from rq import Queue
from rq.job import Job

from spanflow import worker
from spanflow.config import Config
from spanflow.errors import JobFailedError
from spanflow.featurize import Vocab
from spanflow.gnn import ModelConfig
from spanflow.layout import LayoutConfig
from spanflow.train import FoldRunner, FoldSplit, TrainConfig

logger = logging.getLogger(__name__)

_redis_conn = None
_queue = None

_TERMINAL_OK = "finished"
_TERMINAL_FAILED = ("failed", "stopped", "canceled")


def _get_redis_connection() -> redis.Redis:  # type: ignore[type-arg]
    """Shared Redis connection for the fold queue, opened on first use."""
    global _redis_conn
    if _redis_conn is None:
        _redis_conn = redis.from_url(Config.REDIS_URL)
    return _redis_conn


def get_queue() -> Queue:
    """The ``spanflow`` queue that fold jobs are placed on."""
    global _queue
    if _queue is None:
        _queue = Queue("spanflow", connection=_get_redis_connection())
    return _queue


def enqueue_fold(payload: dict[str, Any]) -> str:
    """Enqueue a fold-training job.

    Args:
        payload: Fold description from :func:`spanflow.worker.fold_payload`

    Returns:
        str: RQ job id
    """
    queue = get_queue()
    job = queue.enqueue(
        worker.perform_fold_job,
        payload,
        job_timeout=Config.JOB_TIMEOUT_SECONDS,
        description=f"fold {payload['fold']}",
    )
    logger.info("enqueued fold %s as job %s", payload["fold"], job.id)
    return job.id


def _fetch(job_id: str) -> Job | None:
    try:
        return Job.fetch(job_id, connection=get_queue().connection)
    except Exception:
        return None


def get_job_status(job_id: str) -> dict[str, str] | None:
    """Current RQ status of a fold job.

    Args:
        job_id: RQ job id

    Returns:
        dict | None: {"status": ...} plus "error" for failed jobs; None if
        the job is unknown
    """
    job = _fetch(job_id)
    if job is None:
        return None

    raw = job.get_status()
    status = raw.value if hasattr(raw, "value") else str(raw)
    report = {"status": status}

    if status == "failed":
        try:
            latest = job.latest_result()
            if latest is not None and latest.exc_string:
                report["error"] = latest.exc_string
        except Exception:  # noqa: S110
            pass

    return report


def get_job_result(job_id: str) -> dict[str, Any] | None:
    """Get the fold result of a finished job, None otherwise."""
    job = _fetch(job_id)
    if job is None or job.get_status() != _TERMINAL_OK:
        return None
    try:
        return job.return_value()  # type: ignore[no-any-return]
    except Exception:
        return None


def cancel_job(job_id: str) -> bool:
    """Cancel a fold job that is still queued or training.

    Returns:
        bool: False when the job id is unknown
    """
    job = _fetch(job_id)
    if job is None:
        return False
    job.cancel()
    return True


def wait_for_jobs(
    job_ids: list[str],
    poll_interval: float = Config.POLL_INTERVAL_SECONDS,
) -> list[dict[str, Any]]:
    """Poll until every job has finished; results come back in input order.

    Raises:
        JobFailedError: On the first failed or vanished job; the remaining
        jobs are cancelled
    """
    pending = list(job_ids)
    while pending:
        still_pending = []
        for job_id in pending:
            status = get_job_status(job_id)
            if status is None or status["status"] in _TERMINAL_FAILED:
                for other in job_ids:
                    if other != job_id:
                        cancel_job(other)
                if status is None:
                    reason = "job not found"
                else:
                    reason = status.get("error", status["status"])
                raise JobFailedError(job_id, reason)
            if status["status"] != _TERMINAL_OK:
                still_pending.append(job_id)
        pending = still_pending
        if pending:
            logger.debug("%d fold jobs pending", len(pending))
            time.sleep(poll_interval)

    results = []
    for job_id in job_ids:
        result = get_job_result(job_id)
        if result is None:
            raise JobFailedError(job_id, "finished without a result")
        results.append(result)
    return results


def queue_fold_runner(
    manifest: str,
    layout_config: LayoutConfig,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
) -> FoldRunner:
    """Fold runner that dispatches every split to the RQ queue."""

    def run(splits: list[FoldSplit]) -> list[dict[str, Any]]:
        job_ids = [
            enqueue_fold(
                worker.fold_payload(
                    manifest,
                    layout_config,
                    model_config,
                    train_config,
                    vocab,
                    fold,
                    split,
                ),
            )
            for fold, split in enumerate(splits)
        ]
        return wait_for_jobs(job_ids)

    return run
