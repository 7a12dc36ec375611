"""Binary model container.

Layout, all little-endian::

    magic         4s   b"LFNT"
    version       u16
    arch          u8   0 lattice, 1 plain
    fusion        u8   0 concat, 1 sum
    float bytes   u8   4 (float32) or 8 (float64)
    rows|layers   u32
    cols|prefix   u32
    filters       u32
    wide filters  u32  (plain only, else 0)
    kernel        u32
    in channels   u32
    out channels  u32
    bn epsilon    f64
    bn momentum   f64
    tensor count  u32
    then per tensor, in topological node order:
      ndim u8, dims u32 * ndim, data

Each node stores weight, bias and, if it has batch norm, gamma, beta,
running mean, running var.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import ModelFormatError, ModelTruncatedError, ModelVersionError
from .lattice import LatticeSpec, NetworkModel, PlainSpec, initialize_model
from .tensor_core import BN_EPSILON, BN_MOMENTUM

MAGIC = b"LFNT"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBIIIIIIIddI")
_FLOATS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _bn_constants(model):
    if model.bn:
        bn = next(iter(model.bn.values()))
        return bn.epsilon, bn.momentum
    return BN_EPSILON, BN_MOMENTUM


def dumps(model):
    spec = model.spec
    width = model.dtype.itemsize
    if width not in _FLOATS:
        raise ValueError(f"cannot store dtype {model.dtype}")
    if isinstance(spec, LatticeSpec):
        arch, a, b, wide = 0, spec.rows, spec.cols, 0
        fusion = 0 if spec.fusion == "concat" else 1
    else:
        arch, a, b, wide, fusion = 1, spec.layers, spec.wide_prefix, spec.wide_filters, 0
    tensors = model.state_tensors()
    eps, mom = _bn_constants(model)
    parts = [_HEADER.pack(MAGIC, VERSION, arch, fusion, width, a, b, spec.filters, wide,
                          spec.kernel_size, spec.in_channels, spec.out_channels, eps, mom, len(tensors))]
    for _, arr in tensors:
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, _FLOATS[width]).tobytes())
    return b"".join(parts)


def save_model(model, path):
    data = dumps(model)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ModelTruncatedError(f"file ends inside {what} (need {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def loads(data):
    if data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    r = _Reader(data)
    if len(data) >= 6:
        (version,) = struct.unpack_from("<H", data, 4)
        if version != VERSION:
            raise ModelVersionError(f"unsupported model format version {version} (this build reads {VERSION})")
    (_, _, arch, fusion, width, a, b, filters, wide, kernel, cin, cout, eps, mom,
     count) = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if width not in _FLOATS or arch not in (0, 1) or fusion not in (0, 1):
        raise ModelFormatError(f"invalid header fields (arch {arch}, fusion {fusion}, float width {width})")
    try:
        if arch == 0:
            spec = LatticeSpec(a, b, filters, kernel, cin, "concat" if fusion == 0 else "sum")
        else:
            spec = PlainSpec(a, b, filters, wide, kernel, cin)
    except ValueError as exc:
        raise ModelFormatError(f"invalid spec header: {exc}") from exc
    if spec.out_channels != cout:
        raise ModelFormatError(f"out channels {cout} inconsistent with in channels {cin}")

    model = initialize_model(spec, 0, "single" if width == 4 else "double")
    slots = model.state_tensors()
    if count != len(slots):
        raise ModelFormatError(f"header lists {count} tensors, spec implies {len(slots)}")
    dt = _FLOATS[width]
    for key, arr in slots:
        (ndim,) = struct.unpack("<B", r.take(1, f"{key} rank"))
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{key} shape"))
        if tuple(shape) != arr.shape:
            raise ModelFormatError(f"tensor {key} has shape {shape}, expected {arr.shape}")
        arr[...] = np.frombuffer(r.take(arr.size * width, f"{key} data"), dt).reshape(shape)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    for bn in model.bn.values():
        bn.epsilon, bn.momentum = eps, mom
    return model


def load_model(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def models_equal(a, b):
    """Bitwise equality of spec, dtype and every stored tensor."""
    if a.spec != b.spec or a.dtype != b.dtype:
        return False
    ta, tb = a.state_tensors(), b.state_tensors()
    return len(ta) == len(tb) and all(
        ka == kb and x.tobytes() == y.tobytes() for (ka, x), (kb, y) in zip(ta, tb))


__all__ = ["save_model", "load_model", "dumps", "loads", "models_equal", "NetworkModel"]
