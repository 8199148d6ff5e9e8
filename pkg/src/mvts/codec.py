"""Mapping between numerical series and one-hot binary images.

A value ``s`` is placed in one of ``h`` equal-width bins spanning
``[-ms, ms]``; values outside the range saturate to the outer bins. The
inverse map returns the bin midpoint ``(j - 0.5) * 2*ms/h - ms`` for the
1-based bin ``j``.

Arrays use the layout ``(channels, bins, time)``. Bin 1 is the most
negative value, bin ``h`` the most positive.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels

MAGIC = b"MVTS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHIII")
HEADER_SIZE = _HEADER.size


class CodecError(ValueError):
    """Invalid input to the codec (non-finite values, broken one-hot columns, bad files)."""


@dataclass(frozen=True)
class CodecParams:
    h: int
    ms: float

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 2:
            raise CodecError(f"h must be an integer >= 2, got {self.h!r}")
        if not (math.isfinite(self.ms) and self.ms > 0):
            raise CodecError(f"ms must be a positive finite number, got {self.ms!r}")
        object.__setattr__(self, "h", int(self.h))
        object.__setattr__(self, "ms", float(self.ms))

    @property
    def bin_width(self) -> float:
        return 2.0 * self.ms / self.h

    @property
    def max_interior_error(self) -> float:
        """Half a bin width, ``ms / h``."""
        return self.ms / self.h

    def midpoints(self) -> np.ndarray:
        """Decoded value of every bin, ordered from bin 1 to bin ``h``."""
        return kernels.midpoints(np.arange(self.h), self.h, self.ms)


@dataclass(frozen=True, eq=False)
class NumericSeries:
    values: np.ndarray
    channel_names: Optional[tuple] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2:
            raise CodecError(f"series must be 2-D (channels, steps), got shape {v.shape}")
        if not np.isfinite(v).all():
            i, k = np.argwhere(~np.isfinite(v))[0]
            raise CodecError(f"non-finite value at channel {i}, step {k}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.channel_names is not None:
            names = tuple(str(n) for n in self.channel_names)
            if len(names) != v.shape[0]:
                raise CodecError(f"{len(names)} channel names for {v.shape[0]} channels")
            object.__setattr__(self, "channel_names", names)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, NumericSeries):
            return NotImplemented
        return (self.channel_names == other.channel_names
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class BinaryVisionTensor:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 3:
            raise CodecError(f"tensor must be 3-D (c, h, t), got shape {b.shape}")
        if b.dtype != np.uint8:
            if not np.isin(b, (0, 1)).all():
                raise CodecError("tensor entries must be 0 or 1")
            b = b.astype(np.uint8)
        b = np.ascontiguousarray(b)
        idx = kernels.column_index(b)
        if (idx < 0).any():
            i, k = np.argwhere(idx < 0)[0]
            raise CodecError(f"column (channel {i}, step {k}) is not one-hot")
        b.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "_index", idx)

    @property
    def shape(self) -> tuple:
        return self.bits.shape

    @property
    def c(self) -> int:
        return self.bits.shape[0]

    @property
    def h(self) -> int:
        return self.bits.shape[1]

    @property
    def t(self) -> int:
        return self.bits.shape[2]

    def indices(self) -> np.ndarray:
        """Zero-based hot bin of each ``(channel, step)`` column."""
        return self._index

    @classmethod
    def from_indices(cls, idx, h: int) -> "BinaryVisionTensor":
        """Build from zero-based bin indices of shape ``(c, t)``."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 2:
            raise CodecError(f"indices must be 2-D (c, t), got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= h):
            raise CodecError(f"bin index out of range for h={h}")
        c, t = idx.shape
        bits = np.zeros((c, h, t), dtype=np.uint8)
        ii, kk = np.meshgrid(np.arange(c), np.arange(t), indexing="ij")
        bits[ii, idx, kk] = 1
        return cls(bits)

    def as_soft(self) -> "SoftVisionTensor":
        return SoftVisionTensor(self.bits.astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, BinaryVisionTensor):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class SoftVisionTensor:
    probs: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise CodecError(f"tensor must be 3-D (c, h, t), got shape {p.shape}")
        if (p < 0).any() or not np.isfinite(p).all():
            raise CodecError("probabilities must be finite and nonnegative")
        sums = p.sum(axis=1)
        if sums.size and np.abs(sums - 1.0).max() > 1e-9:
            raise CodecError("every column must sum to 1 within 1e-9")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def shape(self) -> tuple:
        return self.probs.shape

    @property
    def c(self) -> int:
        return self.probs.shape[0]

    @property
    def h(self) -> int:
        return self.probs.shape[1]

    @property
    def t(self) -> int:
        return self.probs.shape[2]


def bin_index(s: float, params: CodecParams) -> int:
    """1-based bin of a single value; boundary values go to the upper bin.

    >>> bin_index(0.0, CodecParams(h=10, ms=1.0))
    6
    """
    if not math.isfinite(s):
        raise CodecError(f"cannot bin non-finite value {s!r}")
    return int(kernels.bin_indices(np.array([s], dtype=np.float64), params.h, params.ms)[0]) + 1


def encode(series: NumericSeries, params: CodecParams) -> BinaryVisionTensor:
    if not isinstance(series, NumericSeries):
        series = NumericSeries(series)
    bits = kernels.encode(series.values, params.h, params.ms)
    return BinaryVisionTensor(bits)


def decode(tensor: BinaryVisionTensor, params: CodecParams,
           channel_names: Optional[Sequence[str]] = None) -> NumericSeries:
    if not isinstance(tensor, BinaryVisionTensor):
        tensor = BinaryVisionTensor(tensor)
    if tensor.h != params.h:
        raise CodecError(f"tensor has h={tensor.h} but params.h={params.h}")
    values = kernels.midpoints(tensor.indices(), params.h, params.ms)
    return NumericSeries(values, channel_names)


def decode_expected(soft: SoftVisionTensor, params: CodecParams) -> NumericSeries:
    """Probability-weighted midpoint of each soft column (experimental alternative to hardening)."""
    if soft.h != params.h:
        raise CodecError(f"tensor has h={soft.h} but params.h={params.h}")
    return NumericSeries(np.einsum("ijk,j->ik", soft.probs, params.midpoints()))


def harden(soft: SoftVisionTensor) -> BinaryVisionTensor:
    """One-hot at each column's argmax, ties to the lowest bin."""
    probs = soft.probs if isinstance(soft, SoftVisionTensor) else np.asarray(soft, dtype=np.float64)
    return BinaryVisionTensor.from_indices(kernels.argmax_columns(probs), probs.shape[1])


def serialize(tensor: BinaryVisionTensor) -> bytes:
    """MVTS byte stream: 20-byte little-endian header, then one byte per entry."""
    c, h, t = tensor.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, 0, c, h, t) + tensor.bits.tobytes(order="C")


def deserialize(data: bytes) -> BinaryVisionTensor:
    if len(data) < HEADER_SIZE:
        raise CodecError(f"truncated header: {len(data)} bytes")
    magic, version, flags, c, h, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodecError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CodecError(f"unsupported version {version}")
    if flags != 0:
        raise CodecError(f"unsupported flags {flags:#x}")
    n = c * h * t
    payload = data[HEADER_SIZE:]
    if len(payload) != n:
        raise CodecError(f"payload has {len(payload)} bytes, expected {n}")
    bits = np.frombuffer(payload, dtype=np.uint8).reshape(c, h, t)
    if (bits > 1).any():
        raise CodecError("payload bytes must be 0x00 or 0x01")
    return BinaryVisionTensor(bits.copy())


def render_bitmap(tensor: BinaryVisionTensor, channel: int = 0,
                  comment: Optional[str] = None) -> str:
    """Plain PBM (P1) of one channel, highest bin on the top row."""
    c, h, t = tensor.shape
    if not 0 <= channel < c:
        raise CodecError(f"channel {channel} out of range for {c} channels")
    if t == 0:
        raise CodecError("cannot render a tensor with zero time steps")
    buf = io.StringIO()
    buf.write("P1\n")
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"{t} {h}\n")
    img = tensor.bits[channel][::-1]
    for row in img:
        buf.write(" ".join("1" if x else "0" for x in row))
        buf.write("\n")
    return buf.getvalue()


def parse_bitmap(text: str) -> np.ndarray:
    """Read a P1 bitmap back into a ``(rows, cols)`` uint8 array, top row first."""
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise CodecError("not a plain PBM (P1) file")
    w, hh = int(tokens[1]), int(tokens[2])
    px = np.array([int(x) for x in tokens[3:]], dtype=np.uint8)
    if px.size != w * hh:
        raise CodecError(f"expected {w * hh} pixels, found {px.size}")
    return px.reshape(hh, w)
