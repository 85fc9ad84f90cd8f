"""Single-file container: a JSON manifest followed by raw little-endian blobs.

Checkpoints, morphable-basis files and packed datasets all share this
layout so one reader/writer covers every binary artifact:

    AUSYNTH-BLOB 1\\n
    <8-byte little-endian manifest length>
    <manifest JSON (sorted keys)>
    <blob bytes, concatenated in manifest order>

Only float32 and int32 blobs are allowed; multi-byte values are always
little-endian regardless of host byte order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"AUSYNTH-BLOB 1\n"

_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


def write_blobfile(path, meta, blobs):
    """Write `meta` (JSON-serializable dict) and named arrays to `path`.

    `blobs` is a sequence of (name, array) pairs; float arrays are stored
    as float32, integer arrays as int32.
    """
    entries = []
    payload = []
    for name, arr in blobs:
        a = np.asarray(arr)
        code = "i4" if np.issubdtype(a.dtype, np.integer) else "f4"
        a = np.ascontiguousarray(a, dtype=_DTYPES[code])
        entries.append({"name": name, "dtype": code, "shape": list(a.shape)})
        payload.append(a.tobytes())
    manifest = json.dumps({"meta": meta, "blobs": entries},
                          sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in payload:
            fh.write(chunk)


def read_blobfile(path):
    """Read a blob file; returns (meta, dict of name -> array)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ParseError(f"{path}: not a blob file (bad magic)")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        try:
            manifest = json.loads(fh.read(mlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: corrupt manifest: {exc}") from exc
        arrays = {}
        for entry in manifest["blobs"]:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ParseError(f"{path}: truncated blob {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return manifest["meta"], arrays
