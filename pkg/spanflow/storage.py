#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Atomic file output, JSON/JSONL helpers and the tensor codec."""

import base64
import contextlib
import json
import os
import shutil
import tempfile
from collections.abc import Generator, Iterable
from pathlib import Path
from typing import Any

import numpy as np

from spanflow.errors import StorageError, ValidationError


def dumps_json(value: Any) -> str:
    """Serialize to byte-stable JSON (sorted keys, 2-space indent, newline)."""
    return json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write a file via temp file + rename so readers never see partial data.

    Args:
        path: Destination path
        data: File contents

    Returns:
        Path: The destination path

    Raises:
        StorageError: If the directory is missing or the write fails
    """
    target = Path(path)
    if not target.parent.exists():
        raise StorageError(target, "directory does not exist")

    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except OSError as exc:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp_name)
        raise StorageError(target, str(exc)) from exc
    return target


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Atomically write UTF-8 text."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, value: Any) -> Path:
    """Atomically write byte-stable JSON."""
    return atomic_write_text(path, dumps_json(value))


def read_json(path: str | Path) -> Any:
    """Read a JSON document.

    Raises:
        StorageError: If the file cannot be read
        ValidationError: If the file is not valid JSON
    """
    target = Path(path)
    try:
        raw = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(target, str(exc)) from exc
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{target}: invalid JSON ({exc})") from exc


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> Path:
    """Atomically write one compact JSON object per line."""
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in records]
    body = "\n".join(lines) + ("\n" if lines else "")
    return atomic_write_text(path, body)


def read_jsonl(path: str | Path) -> list[tuple[int, Any]]:
    """Read a JSONL file.

    Returns:
        list[tuple[int, Any]]: (1-based line number, parsed value) for every
        non-blank line

    Raises:
        StorageError: If the file cannot be read
        ValidationError: If a line is not valid JSON
    """
    target = Path(path)
    try:
        raw = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(target, str(exc)) from exc

    records = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{target}:{lineno}: invalid JSON ({exc})") from exc
    return records


@contextlib.contextmanager
def atomic_directory(path: str | Path) -> Generator[Path, None, None]:
    """Build a directory next to ``path`` and swap it in on success.

    The previous directory (if any) is replaced only after the body
    completed; on failure the staging directory is removed.

    Args:
        path: Final directory path

    Yields:
        Path: Staging directory to populate
    """
    target = Path(path)
    parent = target.parent
    if not parent.exists():
        raise StorageError(target, "parent directory does not exist")

    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    try:
        if target.exists():
            shutil.rmtree(target)
        os.replace(staging, target)
    except OSError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        raise StorageError(target, str(exc)) from exc


def encode_tensor(array: np.ndarray) -> dict[str, Any]:
    """Encode an array as ``{shape, dtype: "f32", data: base64 LE}``."""
    data = np.ascontiguousarray(array, dtype="<f4")
    return {
        "shape": list(data.shape),
        "dtype": "f32",
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_tensor(entry: dict[str, Any]) -> np.ndarray:
    """Decode a tensor produced by :func:`encode_tensor` into float64.

    Raises:
        ValidationError: On unknown dtype or size mismatch
    """
    if entry.get("dtype") != "f32":
        raise ValidationError(f"unsupported tensor dtype {entry.get('dtype')!r}")
    shape = tuple(int(s) for s in entry["shape"])
    raw = base64.b64decode(entry["data"])
    flat = np.frombuffer(raw, dtype="<f4")
    if flat.size != int(np.prod(shape, dtype=np.int64)):
        raise ValidationError(f"tensor data does not match shape {shape}")
    return flat.reshape(shape).astype(np.float64)
