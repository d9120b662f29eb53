"""Single-file binary checkpoints: a JSON header plus named raw tensor sections.

Layout::

    b"AMMASI\\x00\\x01"           magic + format version
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON (sorted keys)
    tensor bytes                little-endian, C order, concatenated

The header holds caller metadata under ``"meta"`` and a ``"tensors"`` index
of ``[name, dtype, shape, offset]`` entries. Writing the same content twice
produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"AMMASI\x00\x01"
_DTYPES = {"f8": "<f8", "i8": "<i8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, meta: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    index, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        index.append([name, code, list(arr.shape), offset])
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple:
    """Returns ``(meta, tensors)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + n].decode())
    body = memoryview(raw)[pos + n:]
    tensors = {}
    for name, code, shape, off in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype=_DTYPES[code], count=count, offset=off)
        tensors[name] = arr.reshape(shape).astype(np.float64 if code == "f8" else np.int64)
    return header["meta"], tensors
