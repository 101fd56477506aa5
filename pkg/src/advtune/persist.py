"""Artifact persistence: parameter buffers, canonical JSON, file hashing.

Saved parameters are a little-endian format trivially readable from any
language: a 4-byte unsigned header length, a JSON header listing per-layer
tensor shapes, then the concatenated float64 values in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import InputError
from .nn import Params

_FORMAT = "advtune-params-v1"


def save_params(params: Params, path) -> None:
    header = {
        "format": _FORMAT,
        "layers": [
            None if entry is None else {"w": list(entry[0].shape), "b": list(entry[1].shape)}
            for entry in params.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.as_vector().astype("<f8").tobytes())


def load_params(path) -> Params:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise InputError(f"{path} is not a parameter file (no header length)")
    (hlen,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + hlen:
        raise InputError(f"{path} truncated inside the JSON header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path} has an unreadable header: {exc}") from exc
    if header.get("format") != _FORMAT:
        raise InputError(f"{path} format {header.get('format')!r} != {_FORMAT!r}")
    entries = []
    values = np.frombuffer(raw[4 + hlen :], dtype="<f8")
    pos = 0
    for layer in header["layers"]:
        if layer is None:
            entries.append(None)
            continue
        wshape, bshape = tuple(layer["w"]), tuple(layer["b"])
        wn, bn = int(np.prod(wshape)), int(np.prod(bshape))
        if pos + wn + bn > values.size:
            raise InputError(f"{path} truncated inside the value buffer")
        w = values[pos : pos + wn].reshape(wshape).astype(np.float64)
        pos += wn
        b = values[pos : pos + bn].reshape(bshape).astype(np.float64)
        pos += bn
        entries.append((w, b))
    if pos != values.size:
        raise InputError(f"{path} has {values.size - pos} trailing values beyond the header")
    return Params(tuple(entries))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(obj, path) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(rows, path) -> None:
    """One compact JSON object per line, key order as constructed."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(", ", ": ")))
            fh.write("\n")
