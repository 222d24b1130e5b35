"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic            8 bytes  b"OGADCKPT"
    format version   uint32
    config digest    64 bytes (sha256 hex, ascii)
    step             uint32
    tensor count     uint32
    per tensor:      name length uint32, name utf-8, rank uint32,
                     dims uint64 * rank, values float64 * prod(dims)
    json length      uint64, then a utf-8 json payload holding the
                     config echo, RNG stream states and the
                     pseudo-label store snapshot

Values round-trip bit-exactly; loading a container with a different
format version is rejected naming both versions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"OGADCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config_digest: str
    step: int
    arrays: dict[str, np.ndarray]
    extra: dict


def save_checkpoint(path, config_digest: str, step: int,
                    arrays: dict[str, np.ndarray], extra: dict):
    digest = config_digest.encode("ascii")
    if len(digest) != 64:
        raise ValueError("config digest must be a 64-character sha256 hex string")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += digest
    blob += struct.pack("<I", step)
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.astype("<f8").tobytes()
    payload = json.dumps(extra, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(payload))
    blob += payload
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise ValueError(f"{path} is not a checkpoint container (bad magic)")
    offset = 8
    (version,) = struct.unpack_from("<I", view, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version {version} is not supported by this build "
            f"(expected {FORMAT_VERSION})"
        )
    digest = bytes(view[offset:offset + 64]).decode("ascii")
    offset += 64
    step, count = struct.unpack_from("<II", view, offset)
    offset += 8
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", view, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}Q", view, offset)
        offset += 8 * rank
        n_values = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(view, dtype="<f8", count=n_values, offset=offset).copy()
        offset += 8 * n_values
        arrays[name] = arr.reshape(dims)
    (json_len,) = struct.unpack_from("<Q", view, offset)
    offset += 8
    extra = json.loads(bytes(view[offset:offset + json_len]).decode("utf-8"))
    return Checkpoint(version=version, config_digest=digest, step=step,
                      arrays=arrays, extra=extra)
