"""Flat parameter vectors with named segments, plus checkpoint I/O.

A model's trainable parameters live in one flat float64 vector; named
segments (e.g. ``"A"`` with shape (D, D), ``"b"`` with shape (D,)) are views
into it. The checkpoint format is a small binary header followed by the raw
little-endian float64 payload:

    magic "OVISPARM" | u32 version | u32 n_segments
    per segment: u32 name_len | name (utf-8) | u64 offset | u64 ndim | u64*ndim shape
    payload: float64[total] little-endian
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

__all__ = ["ParameterVector", "load_params", "save_params"]

MAGIC = b"OVISPARM"
VERSION = 1


@dataclass
class ParameterVector:
    """Flat float64 vector partitioned into named, shaped segments."""

    values: np.ndarray
    segments: dict[str, tuple[int, tuple[int, ...]]]  # name -> (offset, shape)

    @classmethod
    def zeros(cls, layout: list[tuple[str, tuple[int, ...]]]) -> "ParameterVector":
        segments: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in layout:
            segments[name] = (offset, tuple(shape))
            offset += int(np.prod(shape, dtype=np.int64))
        return cls(np.zeros(offset), segments)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        offsets = sorted((off, int(np.prod(shape, dtype=np.int64)))
                         for off, shape in self.segments.values())
        pos = 0
        for off, n in offsets:
            if off != pos:
                raise ValueError("segment offsets must partition [0, len)")
            pos += n
        if pos != self.values.size:
            raise ValueError(
                f"segments cover {pos} entries but vector has {self.values.size}")

    @property
    def size(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        """Writable shaped view of one segment."""
        offset, shape = self.segments[name]
        n = int(np.prod(shape, dtype=np.int64))
        return self.values[offset:offset + n].reshape(shape)

    def segment_slice(self, name: str) -> slice:
        offset, shape = self.segments[name]
        return slice(offset, offset + int(np.prod(shape, dtype=np.int64)))

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), dict(self.segments))


def save_params(path, pv: ParameterVector) -> None:
    """Write a parameter vector checkpoint."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(pv.segments)))
    for name, (offset, shape) in pv.segments.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<QQ", offset, len(shape)))
        buf.write(struct.pack(f"<{len(shape)}Q", *shape))
    buf.write(np.ascontiguousarray(pv.values, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path) -> ParameterVector:
    """Read a checkpoint written by :func:`save_params`."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise ValueError(f"{path}: bad magic, not an OVISPARM checkpoint")
    version, n_segments = struct.unpack_from("<II", view, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    segments: dict[str, tuple[int, tuple[int, ...]]] = {}
    total = 0
    for _ in range(n_segments):
        (name_len,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        offset, ndim = struct.unpack_from("<QQ", view, pos)
        pos += 16
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        segments[name] = (offset, tuple(int(s) for s in shape))
        total += int(np.prod(shape, dtype=np.int64))
    values = np.frombuffer(view, dtype="<f8", count=total, offset=pos).astype(np.float64)
    return ParameterVector(values, segments)
