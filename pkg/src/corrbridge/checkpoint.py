"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes        b"CBRG"
    version u32            currently 1
    meta    u64 length + UTF-8 JSON (configs, vocabs, statistics, counters)
    records repeated to end of file:
        name_len u64 | name UTF-8 | rank u64 | extents u64 * rank |
        data float32 * prod(extents)

The metadata lists every tensor name it expects, so truncation is detected
even at a record boundary. Save -> load -> save round-trips bit-identically.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CBRG"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Bad magic, version mismatch, truncation, or shape disagreement."""


def save_checkpoint(path, metadata, tensors):
    """Write metadata (JSON-serializable dict) and named float32 tensors."""
    meta = dict(metadata)
    meta["tensor_manifest"] = [
        {"name": name, "shape": list(np.asarray(arr).shape)}
        for name, arr in tensors.items()
    ]
    blob = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<Q", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated file while reading {what}")
    return buf


def load_checkpoint(path):
    """Read (metadata, tensors); raises CheckpointFormatError on any defect."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported format version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        try:
            metadata = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError(f"corrupt metadata block: {e}") from None
        tensors = {}
        while True:
            head = fh.read(8)
            if len(head) == 0:
                break
            if len(head) != 8:
                raise CheckpointFormatError("truncated file in record header")
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8, f"rank of {name}"))
            shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, f"extents of {name}"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"data of {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    manifest = metadata.get("tensor_manifest", [])
    expected = {entry["name"]: tuple(entry["shape"]) for entry in manifest}
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointFormatError(
            f"tensor records do not match manifest (missing={missing}, extra={extra})")
    for name, arr in tensors.items():
        if tuple(arr.shape) != expected[name]:
            raise CheckpointFormatError(
                f"tensor {name}: stored shape {arr.shape} != manifest {expected[name]}")
    return metadata, tensors
