#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Checkpoint envelope: config, vocabulary and encoded tensors."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from spanflow.errors import ValidationError
from spanflow.featurize import Vocab
from spanflow.gnn import EncoderStack, ModelConfig
from spanflow.storage import decode_tensor, encode_tensor, read_json, write_json

CHECKPOINT_VERSION = 1
EMBEDDING_KEY = "embedding"


@dataclass
class Checkpoint:
    """A trained model and everything needed to featurize new pages."""

    model_config: ModelConfig
    vocab: Vocab
    params: EncoderStack
    table: np.ndarray
    train_config: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    """Atomically write a checkpoint envelope.

    Args:
        path: Destination file
        checkpoint: Model to store

    Returns:
        Path: Written path
    """
    named = checkpoint.params.named_parameters()
    tensors = {name: encode_tensor(value) for name, value in named.items()}
    tensors[EMBEDDING_KEY] = encode_tensor(checkpoint.table)
    envelope = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "model": checkpoint.model_config.to_dict(),
            "train": checkpoint.train_config,
        },
        "vocab": checkpoint.vocab.to_dict(),
        "tensors": tensors,
    }
    return write_json(path, envelope)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint envelope.

    Raises:
        ValidationError: On unsupported versions or missing tensors
    """
    envelope = read_json(path)
    if envelope.get("version") != CHECKPOINT_VERSION:
        version = envelope.get("version")
        raise ValidationError(f"{path}: unsupported checkpoint version {version!r}")

    try:
        model_config = ModelConfig(**envelope["config"]["model"])
        tensors = {
            name: decode_tensor(entry) for name, entry in envelope["tensors"].items()
        }
        table = tensors.pop(EMBEDDING_KEY)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed checkpoint ({exc})") from exc

    vocab = Vocab.from_dict(envelope["vocab"])
    if table.shape != (vocab.rows, model_config.d):
        raise ValidationError(
            f"{path}: embedding table shape {table.shape} does not match vocabulary",
        )

    return Checkpoint(
        model_config=model_config,
        vocab=vocab,
        params=EncoderStack.from_named(tensors, model_config.layers),
        table=table,
        train_config=dict(envelope["config"].get("train", {})),
    )
