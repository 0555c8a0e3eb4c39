"""Byte-stable checkpoint files.

Layout::

    b"WGCKPT1\\n"
    uint64 little-endian header length
    header: UTF-8 JSON (sorted keys) with ``meta`` and a ``tensors`` list of
            {"name", "shape", "offset", "nbytes"}; dtype is always <f8
    tensor payloads, concatenated in header order

Writing the same tensors and meta twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WGCKPT1\n"


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dumps_checkpoint(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    entries, payload, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payload)


def loads_checkpoint(blob: bytes):
    if not blob.startswith(MAGIC):
        raise ValueError("not a checkpoint file")
    n = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])[0]
    start = len(MAGIC) + 8
    header = json.loads(blob[start:start + n])
    base = start + n
    tensors = {}
    for e in header["tensors"]:
        raw = blob[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return tensors, header["meta"]


def save_checkpoint(path, params: dict, state: dict, meta: dict) -> None:
    tensors = {f"param/{k}": v for k, v in params.items()}
    tensors.update({f"momentum/{k}": v for k, v in state.items()})
    Path(path).write_bytes(dumps_checkpoint(tensors, meta))


def load_checkpoint(path):
    """Returns ``(params, momentum_state, meta)``."""
    tensors, meta = loads_checkpoint(Path(path).read_bytes())
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    state = {k[9:]: v for k, v in tensors.items() if k.startswith("momentum/")}
    return params, state, meta
