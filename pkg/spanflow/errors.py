#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Exception types raised by spanflow."""


class SpanflowError(Exception):
    """Base class for all spanflow errors."""


class ValidationError(SpanflowError, ValueError):
    """Input, configuration or precondition violation."""


class StorageError(SpanflowError, OSError):
    """I/O failure, always naming the path involved."""

    def __init__(self, path: object, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


class DegenerateAttentionError(SpanflowError, ArithmeticError):
    """Literal attention row whose normalizer is (numerically) zero."""

    def __init__(self, vertex: int, layer: int | None = None, head: int | None = None):
        where = f"vertex {vertex}"
        if layer is not None:
            where += f", layer {layer}"
        if head is not None:
            where += f", head {head}"
        super().__init__(f"degenerate attention row at {where}")
        self.vertex = vertex
        self.layer = layer
        self.head = head


class NonFiniteLossError(SpanflowError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, batch_id: str, pair_index: int) -> None:
        super().__init__(f"non-finite loss in batch {batch_id!r} at pair {pair_index}")
        self.batch_id = batch_id
        self.pair_index = pair_index


class MissingCacheError(SpanflowError, RuntimeError):
    """Backward pass requested without a forward cache."""


class JobFailedError(SpanflowError, RuntimeError):
    """A queued fold job failed or vanished."""

    def __init__(self, job_id: str, reason: str) -> None:
        super().__init__(f"job {job_id} failed: {reason}")
        self.job_id = job_id
        self.reason = reason
