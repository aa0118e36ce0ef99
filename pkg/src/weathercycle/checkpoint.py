"""Versioned checkpoint container.

Layout::

    WEATHERCYCLE-CHECKPOINT <version>
    meta <single-line JSON>
    tensor <name> float32 <d0,d1,...|-> <offset> <nbytes>
    ...
    end
    <raw little-endian float32 buffers, offsets relative to the byte after "end\\n">

The header is plain text so any language can read it; tensors are written in
header order with no padding. A rank-0 tensor has shape ``-``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

MAGIC = "WEATHERCYCLE-CHECKPOINT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def write_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta, sort_keys=True, separators=(",", ":"))]
    blobs, offset = [], 0
    for name, t in tensors.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        raw = arr.tobytes()
        shape = ",".join(str(s) for s in arr.shape) or "-"
        lines.append(f"tensor {name} float32 {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    pos = 0

    def next_line() -> str:
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointTruncatedError(f"{path}: header ends unexpectedly")
        line = data[pos:end].decode()
        pos = end + 1
        return line

    first = next_line().split()
    if len(first) != 2 or first[0] != MAGIC:
        raise CheckpointError(f"{path}: not a weathercycle checkpoint")
    if first[1] != str(VERSION):
        raise CheckpointVersionError(f"{path}: format version {first[1]}, expected {VERSION}")
    meta_line = next_line()
    if not meta_line.startswith("meta "):
        raise CheckpointError(f"{path}: missing meta line")
    meta = json.loads(meta_line[5:])
    entries = []
    while True:
        line = next_line()
        if line == "end":
            break
        parts = line.split()
        if len(parts) != 6 or parts[0] != "tensor" or parts[2] != "float32":
            raise CheckpointError(f"{path}: bad tensor entry {line!r}")
        _, name, _, shape, offset, nbytes = parts
        try:
            dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            entries.append((name, dims, int(offset), int(nbytes)))
        except ValueError:
            raise CheckpointError(f"{path}: bad tensor entry {line!r}") from None
        if math.prod(dims) * 4 != entries[-1][3]:
            raise CheckpointError(f"{path}: tensor {name} byte count does not match its shape")
    tensors = {}
    for name, dims, offset, nbytes in entries:
        start, stop = pos + offset, pos + offset + nbytes
        if stop > len(data):
            raise CheckpointTruncatedError(f"{path}: tensor {name} extends past end of file")
        arr = np.frombuffer(data[start:stop], dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    return tensors, meta


def load_state_strict(module: torch.nn.Module, tensors: dict[str, torch.Tensor], prefix: str = "") -> None:
    """Copy ``prefix``-named tensors into ``module``; name/shape mismatches raise."""
    own = module.state_dict()
    for name, ref in own.items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointShapeError(f"parameter {name} missing from checkpoint")
        if tuple(tensors[key].shape) != tuple(ref.shape):
            raise CheckpointShapeError(
                f"parameter {name}: checkpoint shape {tuple(tensors[key].shape)} "
                f"!= model shape {tuple(ref.shape)}")
    extra = [k[len(prefix):] for k in tensors if k.startswith(prefix) and k[len(prefix):] not in own]
    if extra:
        raise CheckpointShapeError(f"checkpoint has unknown parameters: {extra[:3]}")
    with torch.no_grad():
        for name, ref in own.items():
            ref.copy_(tensors[prefix + name].to(ref.dtype))
