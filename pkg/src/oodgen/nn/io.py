"""Flat binary weight format.

Layout, all little-endian::

    b"ODNN"                  magic
    uint32 version           currently 1
    uint32 n_layers
    per layer:
        uint32 rows          fan-in
        uint32 cols          fan-out
        uint32 activation    index into ACTIVATIONS
        float64[rows*cols]   weights, row-major
        float64[cols]        biases
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import ACTIVATIONS, Dense, DenseNet
from .tensor import Tensor

MAGIC = b"ODNN"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def dumps(net: DenseNet) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.layers))]
    for layer in net.layers:
        rows, cols = layer.weight.shape
        parts.append(struct.pack("<III", rows, cols, ACTIVATIONS.index(layer.activation)))
        parts.append(np.ascontiguousarray(layer.weight.data, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias.data, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> DenseNet:
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r} at offset 0")
    if len(blob) < 12:
        raise WeightFormatError("truncated header at offset 4")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    offset = 12
    layers = []
    for _ in range(n_layers):
        if offset + 12 > len(blob):
            raise WeightFormatError(f"truncated layer header at offset {offset}")
        rows, cols, tag = struct.unpack_from("<III", blob, offset)
        offset += 12
        if tag >= len(ACTIVATIONS):
            raise WeightFormatError(f"unknown activation tag {tag} at offset {offset - 4}")
        need = 8 * (rows * cols + cols)
        if offset + need > len(blob):
            raise WeightFormatError(f"truncated layer payload at offset {offset}")
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        offset += 8 * rows * cols
        b = np.frombuffer(blob, dtype="<f8", count=cols, offset=offset)
        offset += 8 * cols
        layers.append(
            Dense(
                Tensor(w.astype(np.float64), requires_grad=True),
                Tensor(b.astype(np.float64), requires_grad=True),
                ACTIVATIONS[tag],
            )
        )
    return DenseNet(layers)


def save(net: DenseNet, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path) -> DenseNet:
    return loads(Path(path).read_bytes())
