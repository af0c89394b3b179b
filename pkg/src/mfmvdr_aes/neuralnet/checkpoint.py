"""Checkpoint files: a JSON header followed by little-endian float32 payloads.

Layout::

    b"MFMVCKPT" | uint32 version | uint64 header length | header (UTF-8 JSON) | payloads

The header's ``tensors`` list gives name, shape and byte offset (relative to
the start of the payload section) of every stored array.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"MFMVCKPT"
VERSION = 1


def save_checkpoint(path, tensors: dict, header: dict | None = None) -> None:
    header = dict(header or {})
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header["tensors"] = entries
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    base = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=base + entry["offset"])
        tensors[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    return tensors, header
