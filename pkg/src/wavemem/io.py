"""File formats: the ``TWM1`` tensor container, CSV grids and JSON summaries.

Container layout::

    b"TWM1" | u32 little-endian header length | JSON header | payload

The header is ``{"format_version": 1, "entries": [{"name", "shape", "dtype",
"byte_offset"}, ...]}`` with offsets counted from the start of the payload.
Every entry is stored as little-endian float64.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TWM1"
FORMAT_VERSION = 1
DTYPE = "f64-le"


class ContainerError(ValueError):
    pass


def encode_container(arrays: Mapping[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in arrays:
        a = np.array(arrays[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "dtype": DTYPE, "byte_offset": offset})
        raw = a.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "entries": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def decode_container(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise ContainerError("not a TWM1 container")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if 8 + hlen > len(blob):
        raise ContainerError("truncated header")
    try:
        header = json.loads(blob[8 : 8 + hlen])
    except json.JSONDecodeError as exc:
        raise ContainerError(f"bad header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ContainerError(f"unsupported format version {header.get('format_version')}")
    payload = memoryview(blob)[8 + hlen :]
    out: dict[str, np.ndarray] = {}
    spans = []
    for e in header["entries"]:
        if e["dtype"] != DTYPE:
            raise ContainerError(f"unsupported dtype {e['dtype']}")
        count = math.prod(e["shape"])
        start, stop = e["byte_offset"], e["byte_offset"] + 8 * count
        if start < 0 or stop > len(payload):
            raise ContainerError(f"entry {e['name']!r} out of bounds")
        spans.append((start, stop, e["name"]))
        out[e["name"]] = np.frombuffer(payload[start:stop], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    spans.sort()
    for (a0, a1, an), (b0, _, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ContainerError(f"entries {an!r} and {bn!r} overlap")
    return out


def save(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_container(arrays))


def load(path) -> dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes())


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_grid(path, grid, header=None) -> None:
    """2-D array to CSV with lossless float formatting."""
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in grid:
            w.writerow([fmt(x) for x in row])


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in r.items()})


def read_grid(path, header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    return np.array([[float(x) for x in r] for r in rows])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n")
