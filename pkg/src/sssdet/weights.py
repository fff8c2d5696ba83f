"""Darknet-compatible binary weights files and parameter initialization.

Layout: ``int32 major, minor, revision`` and ``int64 seen`` (little endian),
then one block per conv layer in network order.  Batch-normalized layers
store ``beta, gamma, rolling_mean, rolling_var`` before the weights; every
other layer stores weights only (there are no biases).  All payload values
are little-endian float32.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, WeightsFormatError
from .netdef import HEADER_BYTES
from .tensor import DTYPE, BatchNormParams

MAJOR, MINOR, REVISION = 0, 2, 0
_HEADER = struct.Struct("<iiiq")
_F32 = np.dtype("<f4")


@dataclass
class ConvLayerParams:
    weights: np.ndarray
    bn: BatchNormParams | None = None

    def copy(self):
        bn = None
        if self.bn is not None:
            bn = BatchNormParams(self.bn.gamma.copy(), self.bn.beta.copy(),
                                 self.bn.rolling_mean.copy(), self.bn.rolling_var.copy(),
                                 self.bn.eps, self.bn.momentum)
        return ConvLayerParams(self.weights.copy(), bn)


def _check(defn, params):
    convs = defn.convs
    if len(params) != len(convs):
        raise ConfigError(f"{len(params)} parameter blocks for {len(convs)} conv layers")
    for i, (spec, p) in enumerate(zip(convs, params)):
        want = (spec.filters, spec.in_channels, spec.size, spec.size)
        if p.weights.shape != want:
            raise ConfigError(f"weights shape {p.weights.shape} != {want}", layer=i)
        if spec.batch_normalize != (p.bn is not None):
            raise ConfigError("batch-norm presence does not match config", layer=i)


def init_weights(defn, seed=0):
    """He-style uniform init; batch norm starts as the identity transform.

    Weights are drawn from U(-a, a) with ``a = sqrt(2 / (k*k*Cin))``.
    """
    rng = np.random.default_rng(seed)
    params = []
    for spec in defn.convs:
        scale = np.sqrt(2.0 / (spec.size * spec.size * spec.in_channels))
        w = rng.uniform(-scale, scale, size=(spec.filters, spec.in_channels, spec.size, spec.size))
        bn = BatchNormParams.identity(spec.filters, eps=defn.net.bn_epsilon) if spec.batch_normalize else None
        params.append(ConvLayerParams(w.astype(DTYPE), bn))
    return params


def expected_size(defn):
    return HEADER_BYTES + 4 * sum(spec.float_count for spec in defn.convs)


def to_bytes(defn, params, seen=0):
    _check(defn, params)
    chunks = [_HEADER.pack(MAJOR, MINOR, REVISION, seen)]
    for p in params:
        if p.bn is not None:
            for arr in (p.bn.beta, p.bn.gamma, p.bn.rolling_mean, p.bn.rolling_var):
                chunks.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
        chunks.append(np.ascontiguousarray(p.weights, dtype=_F32).tobytes())
    return b"".join(chunks)


def save_weights(defn, params, path, seen=0):
    """Write ``params`` to ``path``; returns the number of bytes written."""
    data = to_bytes(defn, params, seen)
    Path(path).write_bytes(data)
    return len(data)


def from_bytes(defn, data, source="<bytes>"):
    """Parse weights bytes; returns ``(params, seen)``."""
    expected = expected_size(defn)
    if len(data) < HEADER_BYTES:
        raise WeightsFormatError(
            f"{source}: unreadable header, file is {len(data)} bytes (need {HEADER_BYTES})")
    major, minor, revision, seen = _HEADER.unpack_from(data, 0)
    if (major, minor) != (MAJOR, MINOR):
        warnings.warn(f"{source}: unexpected weights version {major}.{minor}.{revision}; "
                      f"loading with the {MAJOR}.{MINOR} layout", stacklevel=2)
    if len(data) < expected:
        raise WeightsFormatError(
            f"{source}: truncated, expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise WeightsFormatError(
            f"{source}: {len(data) - expected} surplus bytes after offset {expected} "
            f"(expected {expected} bytes, got {len(data)})")

    offset = HEADER_BYTES

    def take(count):
        nonlocal offset
        arr = np.frombuffer(data, dtype=_F32, count=count, offset=offset).astype(DTYPE)
        offset += 4 * count
        return arr

    params = []
    for spec in defn.convs:
        bn = None
        if spec.batch_normalize:
            n = spec.filters
            beta, gamma, mean, var = take(n), take(n), take(n), take(n)
            bn = BatchNormParams(gamma, beta, mean, var, eps=defn.net.bn_epsilon)
        w = take(spec.weight_count).reshape(spec.filters, spec.in_channels, spec.size, spec.size)
        params.append(ConvLayerParams(w, bn))
    return params, seen


def load_weights(defn, path):
    path = Path(path)
    params, _ = from_bytes(defn, path.read_bytes(), source=str(path))
    return params
