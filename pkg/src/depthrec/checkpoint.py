"""Flat parameter file: a text header followed by little-endian float32 payloads.

Layout::

    depthrec-checkpoint 1
    meta <json>
    tensor <name> <offset> <count> <dim0>x<dim1>...
    ...
    end
    <payload bytes>

Offsets are in bytes from the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import torch

MAGIC = "depthrec-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def encode(tensors: Mapping[str, torch.Tensor], meta: Optional[dict] = None) -> bytes:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True)]
    chunks, offset = [], 0
    for name, t in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"tensor {name} {offset} {arr.size} {shape}")
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode() + b"".join(chunks)


def decode(data: bytes) -> tuple[dict[str, torch.Tensor], dict]:
    try:
        return _decode(data)
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from None


def _decode(data: bytes) -> tuple[dict[str, torch.Tensor], dict]:
    entries, meta, pos = [], {}, 0
    first = True
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError("truncated header")
        line = data[pos:nl].decode()
        pos = nl + 1
        if first:
            magic, _, version = line.partition(" ")
            if magic != MAGIC:
                raise CheckpointError("not a depthrec checkpoint")
            if int(version) != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            first = False
        elif line.startswith("meta "):
            meta = json.loads(line[5:])
        elif line.startswith("tensor "):
            _, name, off, count, shape = line.split(" ")
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            if int(np.prod(dims)) != int(count):
                raise CheckpointError(f"{name}: shape {shape} does not hold {count} values")
            entries.append((name, int(off), int(count), dims))
        elif line == "end":
            break
        else:
            raise CheckpointError(f"bad header line {line!r}")
    payload = data[pos:]
    out = {}
    for name, off, count, dims in entries:
        if off + 4 * count > len(payload):
            raise CheckpointError(f"payload for {name} is truncated")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(dims)
        out[name] = torch.from_numpy(arr.astype(np.float32))
    return out, meta


def save(path, model: torch.nn.Module, meta: Optional[dict] = None) -> None:
    atomic_write_bytes(path, encode(model.state_dict(), meta))


def load_tensors(path) -> tuple[dict[str, torch.Tensor], dict]:
    return decode(Path(path).read_bytes())


def load_into(path, model: torch.nn.Module) -> dict:
    tensors, meta = load_tensors(path)
    model.load_state_dict(tensors, strict=True)
    return meta


def checksum(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
