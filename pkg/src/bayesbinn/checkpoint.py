"""Binary checkpoints: magic + version + JSON header + float64 payload.

Layout (all framing integers little-endian u32):

    bytes 0..3    magic b"BBNN"
    bytes 4..7    format version (currently 1)
    bytes 8..11   header length H in bytes
    bytes 12..12+H  UTF-8 JSON header (canonical: sorted keys, no spaces)
    remainder     the arrays named by header["arrays"], in order, as
                  little-endian float64

The header records the format version, optimizer kind, weight count, layer
layout text, loss, seed, epoch, optimizer step count, and the array
directory. Loading and re-saving a checkpoint reproduces the file
byte-for-byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError

__all__ = ["MAGIC", "VERSION", "load_checkpoint", "save_checkpoint"]

MAGIC = b"BBNN"
VERSION = 1

_HEADER_KEYS = {
    "format_version", "optimizer", "weight_count", "layers", "loss",
    "seed", "epoch", "step_count", "arrays",
}


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    """Write a checkpoint; `arrays` maps name -> 1-D float64 array.

    header["arrays"] is (re)built from `arrays` in insertion order unless the
    header already carries a directory matching the array names.
    """
    header = dict(header)
    header["format_version"] = VERSION
    if "arrays" not in header or [a["name"] for a in header["arrays"]] != list(arrays):
        header["arrays"] = [
            {"name": k, "length": int(np.asarray(v).size)} for k, v in arrays.items()
        ]
    missing = _HEADER_KEYS - set(header)
    if missing:
        raise ValueError(f"checkpoint header missing keys: {sorted(missing)}")
    for entry in header["arrays"]:
        a = np.asarray(arrays[entry["name"]])
        if a.size != entry["length"]:
            raise ValueError(
                f"array {entry['name']!r} has {a.size} values, directory says "
                f"{entry['length']}"
            )
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(VERSION).astype("<u4").tobytes())
        f.write(np.uint32(len(blob)).astype("<u4").tobytes())
        f.write(blob)
        for entry in header["arrays"]:
            f.write(
                np.ascontiguousarray(arrays[entry["name"]], dtype="<f8").tobytes()
            )


def load_checkpoint(path):
    """Read a checkpoint; returns (header, arrays dict of float64 vectors)."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12:
        raise DataFormatError(f"{path}: truncated at offset {len(buf)}: no header frame")
    if buf[:4] != MAGIC:
        raise DataFormatError(
            f"{path}: bad magic {buf[:4]!r} at offset 0, expected {MAGIC!r}"
        )
    version = int(np.frombuffer(buf, "<u4", count=1, offset=4)[0])
    if version != VERSION:
        raise DataFormatError(
            f"{path}: unsupported format version {version} at offset 4"
        )
    hlen = int(np.frombuffer(buf, "<u4", count=1, offset=8)[0])
    if 12 + hlen > len(buf):
        raise DataFormatError(
            f"{path}: header length {hlen} at offset 8 overruns the file"
        )
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad JSON header at offset 12: {e}") from None
    missing = _HEADER_KEYS - set(header)
    if missing:
        raise DataFormatError(f"{path}: header missing keys {sorted(missing)}")
    off = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        nbytes = entry["length"] * 8
        if off + nbytes > len(buf):
            raise DataFormatError(
                f"{path}: array {entry['name']!r} at offset {off} overruns the file"
            )
        arrays[entry["name"]] = np.frombuffer(
            buf, "<f8", count=entry["length"], offset=off
        ).astype(np.float64)
        off += nbytes
    if off != len(buf):
        raise DataFormatError(
            f"{path}: {len(buf) - off} trailing bytes at offset {off}"
        )
    return header, arrays
