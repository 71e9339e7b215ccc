"""Byte-stable tensor archive: magic, version, JSON header, raw little-endian arrays.

Layout::

    b"LSDFCKPT" | uint32 version | uint64 header length | header JSON | data

The header lists every array as ``{name, dtype, shape, offset, nbytes}``
(offsets relative to the start of the data block) plus free-form metadata.
Writing the same content twice yields identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError, VersionMismatch

MAGIC = b"LSDFCKPT"
VERSION = 1


def write_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in arrays:
        arr = np.asarray(arrays[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        data = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"arrays": entries, "meta": meta}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"{path} is not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<IQ", raw, len(MAGIC))
    except struct.error:
        raise ParseError("truncated checkpoint header") from None
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    start = len(MAGIC) + 12
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("corrupt or truncated checkpoint header") from None
    data = raw[start + hlen:]
    arrays = {}
    for e in header["arrays"]:
        end = e["offset"] + e["nbytes"]
        if end > len(data):
            raise ParseError(f"truncated checkpoint: array {e['name']} incomplete")
        arrays[e["name"]] = np.frombuffer(data[e["offset"]:end], dtype=np.dtype(e["dtype"])) \
            .reshape(tuple(e["shape"])).copy()
    return arrays, header["meta"]
