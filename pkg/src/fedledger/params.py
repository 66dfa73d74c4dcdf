"""Flat parameter vectors and their on-disk container.

All model parameters live in a single contiguous float64 array; per-layer
weight matrices and bias vectors are reshaped views into it.  The file
container is little-endian: magic, format version, layer count, one
(rows, cols) pair per layer, then the raw float64 values.  The bias length
of a layer is implied by its column count.
"""

import struct
from dataclasses import dataclass

import numpy as np

from fedledger.errors import DataError, ShapeError

PARAMS_MAGIC = b"FLAE"
DATASET_MAGIC = b"FLDS"
CONTAINER_VERSION = 1


def layer_param_count(rows, cols):
    return rows * cols + cols


@dataclass
class ParamVector:
    """Concatenated weights and biases of a layered dense model."""

    values: np.ndarray
    shapes: tuple  # ((rows, cols), ...) in layer order

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("parameter values must be one-dimensional")
        expected = sum(layer_param_count(r, c) for r, c in self.shapes)
        if expected != self.values.size:
            raise ShapeError(
                f"shapes require {expected} parameters, got {self.values.size}"
            )

    @property
    def n_layers(self):
        return len(self.shapes)

    def __len__(self):
        return self.values.size

    def layer(self, i):
        """Return (weight, bias) views into the flat array for layer i."""
        offset = 0
        for j, (rows, cols) in enumerate(self.shapes):
            count = layer_param_count(rows, cols)
            if j == i:
                w = self.values[offset : offset + rows * cols].reshape(rows, cols)
                b = self.values[offset + rows * cols : offset + count]
                return w, b
            offset += count
        raise IndexError(i)

    def layers(self):
        """Iterate (weight, bias) views over all layers."""
        offset = 0
        for rows, cols in self.shapes:
            count = layer_param_count(rows, cols)
            w = self.values[offset : offset + rows * cols].reshape(rows, cols)
            b = self.values[offset + rows * cols : offset + count]
            yield w, b
            offset += count

    def copy(self):
        return ParamVector(self.values.copy(), self.shapes)

    def with_values(self, values):
        return ParamVector(np.asarray(values, dtype=np.float64), self.shapes)


def zeros_like(pv):
    return ParamVector(np.zeros(len(pv)), pv.shapes)


def save_params(pv, path):
    """Write a ParamVector to its binary container, bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, pv.n_layers))
        for rows, cols in pv.shapes:
            fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(pv.values, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PARAMS_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {PARAMS_MAGIC!r}")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != CONTAINER_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        shapes = []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<II", fh.read(8))
            shapes.append((rows, cols))
        shapes = tuple(shapes)
        expected = sum(layer_param_count(r, c) for r, c in shapes)
        payload = fh.read(expected * 8)
        if len(payload) != expected * 8:
            raise DataError(f"{path}: truncated parameter payload")
        trailer = fh.read(1)
        if trailer:
            raise DataError(f"{path}: trailing bytes after parameter payload")
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ParamVector(values, shapes)
