"""Versioned binary container for datasets and checkpoints.

Layout:

    bytes 0-3    magic b"TFLB"
    bytes 4-7    format version, little-endian u32
    bytes 8-11   header length H, little-endian u32
    bytes 12-..  header: UTF-8 JSON with sorted keys and no whitespace
    remainder    array payloads, concatenated in header order

The header holds {"kind", "meta", "arrays"}; each array entry records name,
dtype string, and shape, in the exact payload order. Arrays are written with
explicit little-endian dtypes. Identical inputs therefore produce identical
bytes (np.savez would not: zip members embed timestamps).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TFLB"
VERSION = 1

_ALLOWED_DTYPES = {"<f8", "<i8", "|u1"}


class ContainerError(ValueError):
    pass


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]):
    entries = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.kind == "f":
            arr, label = arr.astype("<f8"), "<f8"
        elif arr.dtype == np.uint8:
            arr, label = arr.astype("|u1"), "|u1"
        elif arr.dtype.kind in "iub":
            arr, label = arr.astype("<i8"), "<i8"
        else:
            raise ContainerError(f"unsupported dtype {arr.dtype} for array {name!r}")
        entries.append({"name": name, "dtype": label, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = _canonical_json({"kind": kind, "meta": meta, "arrays": entries})
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def read_container(path, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"no such file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path} is not a {MAGIC.decode()} container")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ContainerError(f"{path}: format version {version}, expected {VERSION}")
    if len(raw) < 12 + hlen:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header ({exc})") from None
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise ContainerError(
            f"{path}: container kind {header.get('kind')!r}, expected {expect_kind!r}")
    arrays = {}
    offset = 12 + hlen
    for entry in header["arrays"]:
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise ContainerError(f"{path}: unknown dtype {entry['dtype']!r}")
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if offset + nbytes > len(raw):
            raise ContainerError(f"{path}: truncated payload for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
            offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ContainerError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], arrays
