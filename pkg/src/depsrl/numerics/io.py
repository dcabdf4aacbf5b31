"""Parameter checkpoint files.

A checkpoint is a directory holding ``tensors.bin`` (raw little-endian
float64 payloads, concatenated in manifest order) and ``manifest.json``
(tensor names, shapes and offsets plus the model hyperparameters).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from depsrl.errors import DataError

FORMAT = "depsrl-checkpoint/1"
_DTYPE = np.dtype("<f8")


def git_blob_hash(payload: bytes) -> str:
    """SHA-1 over ``blob <len>\\0<payload>``, as git hashes file contents."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(payload))
    h.update(payload)
    return h.hexdigest()


def save_tensors(directory, tensors: Mapping[str, np.ndarray], hyperparameters: Mapping[str, Any]) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=_DTYPE)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    hp = json.dumps(hyperparameters, sort_keys=True, ensure_ascii=False)
    content_hash = git_blob_hash(payload + hp.encode("utf-8"))
    manifest = {
        "format": FORMAT,
        "hyperparameters": hyperparameters,
        "tensors": index,
        "content_hash": content_hash,
    }
    (directory / "tensors.bin").write_bytes(payload)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return content_hash


def load_tensors(directory) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        payload = (directory / "tensors.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"not a checkpoint directory: {directory} ({exc.filename} missing)") from None
    if manifest.get("format") != FORMAT:
        raise DataError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")
    flat = np.frombuffer(payload, dtype=_DTYPE)
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + count > flat.size:
            raise DataError(f"{directory}: tensor {entry['name']!r} runs past end of payload")
        tensors[entry["name"]] = flat[start : start + count].reshape(entry["shape"]).astype(np.float64)
    hp = json.dumps(manifest["hyperparameters"], sort_keys=True, ensure_ascii=False)
    if git_blob_hash(payload + hp.encode("utf-8")) != manifest["content_hash"]:
        raise DataError(f"{directory}: content hash mismatch, checkpoint is corrupt")
    return tensors, manifest
