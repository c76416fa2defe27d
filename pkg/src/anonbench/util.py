"""Small shared helpers: hashing, seed derivation, canonical JSON, array packing."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def derive_seed(*parts) -> int:
    """Derive a 64-bit seed from labeled parts, stable across platforms and runs."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def canonical_json(obj) -> str:
    """Key-sorted, whitespace-free JSON; the canonical text hashed into cache keys."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def pack_arrays(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    """Serialize named arrays plus a JSON meta block into one byte string.

    Zip-based containers embed timestamps, so their bytes change between
    otherwise identical runs. This layout is deterministic and therefore safe
    to content-address: an 8-byte header length, the canonical JSON header,
    then the raw C-order array payloads in name-sorted order.
    """
    header = {"meta": meta, "arrays": []}
    payload = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        header["arrays"].append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        )
        payload.append(arr.tobytes())
    head = canonical_json(header).encode("utf-8")
    return len(head).to_bytes(8, "big") + head + b"".join(payload)


def unpack_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of pack_arrays."""
    head_len = int.from_bytes(blob[:8], "big")
    header = json.loads(blob[8 : 8 + head_len].decode("utf-8"))
    arrays = {}
    offset = 8 + head_len
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        size = count * dtype.itemsize
        data = np.frombuffer(blob[offset : offset + size], dtype=dtype)
        arrays[entry["name"]] = data.reshape(shape).copy()
        offset += size
    return arrays, header["meta"]
