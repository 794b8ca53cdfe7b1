"""Parameter checkpoints: one binary file, JSON header followed by little-endian float64 data.

Layout::

    uint64 (little-endian)  header length in bytes
    header                  UTF-8 JSON: {"format", "version", "tensors": [...], "meta": {...}}
    payload                 concatenated '<f8' arrays, C order

Each tensor entry carries ``name``, ``shape`` and ``offset`` (bytes from the
start of the payload).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .model import HierarchicalModel

FORMAT = "hiercons-checkpoint"
VERSION = 1


def write_tensors(path, tensors: dict, meta: dict = None):
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"format": FORMAT, "version": VERSION, "tensors": entries, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def read_tensors(path) -> tuple:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: unreadable checkpoint header") from exc
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    payload = raw[8 + n:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise ValueError(f"{path}: tensor {entry['name']} runs past end of file")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})


def save_checkpoint(path, model: HierarchicalModel, extra: dict = None):
    meta = {"model": model.describe()}
    if extra:
        meta.update(extra)
    write_tensors(path, model.state(), meta)


def load_checkpoint(path) -> tuple:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors, meta = read_tensors(path)
    model = HierarchicalModel.from_description(meta["model"])
    model.load_state(tensors)
    return model, meta
