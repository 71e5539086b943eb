"""Deterministic binary container for fitted parameters.

Layout (all little-endian)::

    magic    8 bytes   b"GBMILBIN"
    version  uint32
    hlen     uint64    length of the JSON header in bytes
    header   hlen bytes, UTF-8 JSON (sorted keys)
    payload  concatenated raw array buffers

The header holds ``kind``, a free-form ``meta`` dict of JSON scalars, and an
``arrays`` list of ``{name, dtype, shape, offset, nbytes}`` entries whose
offsets are relative to the start of the payload. The same inputs always give
the same bytes, which the determinism checks rely on.
"""

import json
import struct

import numpy as np

MAGIC = b"GBMILBIN"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def dumps(kind, arrays, meta=None):
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype == np.uint8:
            pass
        elif arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        else:
            raise TypeError(f"unsupported dtype for {name!r}: {arr.dtype}")
        buf = np.ascontiguousarray(arr).tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(buf),
        })
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps(
        {"kind": kind, "meta": meta or {}, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header, *chunks])


def loads(data, kind=None):
    """Inverse of :func:`dumps`; returns ``(arrays, meta)``."""
    if data[:8] != MAGIC:
        raise FormatError("not a gbmil binary file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    start = 8 + 12
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"expected {kind!r} payload, found {header['kind']!r}")
    base = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = base + e["offset"]
        arr = np.frombuffer(data[lo:lo + e["nbytes"]], dtype=e["dtype"])
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]


def blob(data):
    """Wrap raw bytes as a uint8 array for nesting inside a container."""
    return np.frombuffer(data, dtype=np.uint8)


def save(path, kind, arrays, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, arrays, meta))


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
