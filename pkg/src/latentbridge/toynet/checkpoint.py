"""Versioned flat-binary checkpoints for ToyNet.

Layout (all little-endian)::

    b"VBTK"                     magic
    u32 version                 currently 1
    u32 n_dims, u32 dims[n_dims]
    u32 act[n_dims - 2]         0=tanh 1=relu 2=linear, one per hidden layer
    f64 ...                     per layer: W (row-major, in x out) then b
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .net import ToyNet

MAGIC = b"VBTK"
VERSION = 1
_ACT_CODES = {"tanh": 0, "relu": 1, "linear": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def to_bytes(net: ToyNet) -> bytes:
    head = [MAGIC, struct.pack("<II", VERSION, len(net.dims))]
    head.append(struct.pack(f"<{len(net.dims)}I", *net.dims))
    acts = [_ACT_CODES[a] for a in net.activations]
    head.append(struct.pack(f"<{len(acts)}I", *acts))
    body = np.concatenate([p.ravel() for p in net.params]).astype("<f8").tobytes()
    return b"".join(head) + body


def from_bytes(data: bytes) -> ToyNet:
    if data[:4] != MAGIC:
        raise ValueError("not a VBTK checkpoint (bad magic)")
    version, n_dims = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    dims = list(struct.unpack_from(f"<{n_dims}I", data, off))
    off += 4 * n_dims
    n_act = n_dims - 2
    acts = [_ACT_NAMES[c] for c in struct.unpack_from(f"<{n_act}I", data, off)]
    off += 4 * n_act
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
    net = ToyNet(dims, acts)
    if flat.size != net.n_params:
        raise ValueError(f"checkpoint holds {flat.size} values, expected {net.n_params}")
    net.set_flat(flat)
    return net


def save(net: ToyNet, path) -> None:
    Path(path).write_bytes(to_bytes(net))


def load(path) -> ToyNet:
    return from_bytes(Path(path).read_bytes())
