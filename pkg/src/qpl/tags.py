"""Time tags and the binary tag-file format.

File layout (little endian)::

    offset 0   4s   magic  b"QTAG"
    offset 4   u16  format version (1)
    offset 6   u32  tick resolution in femtoseconds (81000)
    offset 10  6x   reserved, zero
    offset 16  u64  records: low 56 bits tick index, high 8 bits channel id
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

TICK_FS = 81_000
TICK_SECONDS = TICK_FS * 1e-15
MAGIC = b"QTAG"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHI6x")
HEADER_SIZE = HEADER.size
RECORD_SIZE = 8
TICK_MASK = (1 << 56) - 1

# channel ids
STOKES_A = 0
STOKES_B = 1
ANTI_STOKES = 2
AUX = 3


class TagFileError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def to_ticks(seconds: float, rel_tol: float = 1e-6) -> int:
    """Convert a duration that must be an integer number of ticks."""
    n = seconds / TICK_SECONDS
    k = int(round(n))
    if abs(n - k) > rel_tol * max(1.0, abs(n)):
        raise ValueError(f"{seconds!r} s is not a multiple of the {TICK_SECONDS * 1e12:g} ps tick")
    return k


def quantize(times_s: np.ndarray) -> np.ndarray:
    """Round emission/detection times to the nearest tick."""
    return np.rint(np.asarray(times_s) / TICK_SECONDS).astype(np.int64)


@dataclass(frozen=True)
class TagStream:
    """Channel-labelled tags ordered by tick."""

    channel: np.ndarray
    tick: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channel, dtype=np.uint8)
        tk = np.ascontiguousarray(self.tick, dtype=np.int64)
        if ch.shape != tk.shape or ch.ndim != 1:
            raise ValueError("channel and tick must be 1-D arrays of equal length")
        if tk.size and (tk.min() < 0 or tk.max() > TICK_MASK):
            raise ValueError("tick index out of the 56-bit range")
        if tk.size > 1 and np.any(tk[1:] < tk[:-1]):
            raise ValueError("tags must be non-decreasing in tick")
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "tick", tk)

    def __len__(self) -> int:
        return self.tick.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.channel, other.channel) and np.array_equal(self.tick, other.tick)

    def ticks(self, channel: int) -> np.ndarray:
        return self.tick[self.channel == channel]

    @classmethod
    def merge(cls, per_channel: dict[int, np.ndarray], meta: dict | None = None) -> "TagStream":
        chans = [np.full(len(t), c, dtype=np.uint8) for c, t in sorted(per_channel.items())]
        ticks = [np.asarray(t, dtype=np.int64) for _, t in sorted(per_channel.items())]
        if not ticks:
            return cls(np.zeros(0, np.uint8), np.zeros(0, np.int64), meta or {})
        ch = np.concatenate(chans)
        tk = np.concatenate(ticks)
        order = np.lexsort((ch, tk))
        return cls(ch[order], tk[order], meta or {})


def encode(stream: TagStream) -> bytes:
    words = (stream.channel.astype(np.uint64) << np.uint64(56)) | stream.tick.astype(np.uint64)
    return HEADER.pack(MAGIC, FORMAT_VERSION, TICK_FS) + words.astype("<u8").tobytes()


def decode(data: bytes) -> TagStream:
    if len(data) < HEADER_SIZE:
        raise TagFileError("truncated header", len(data))
    magic, version, tick_fs = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TagFileError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise TagFileError(f"unsupported format version {version}", 4)
    if tick_fs != TICK_FS:
        raise TagFileError(f"unsupported tick resolution {tick_fs} fs", 6)
    if any(data[10:HEADER_SIZE]):
        raise TagFileError("reserved header bytes are not zero", 10)
    body = len(data) - HEADER_SIZE
    if body % RECORD_SIZE:
        last = HEADER_SIZE + (body // RECORD_SIZE) * RECORD_SIZE
        raise TagFileError("truncated record", last)
    words = np.frombuffer(data, dtype="<u8", offset=HEADER_SIZE)
    channel = (words >> np.uint64(56)).astype(np.uint8)
    tick = (words & np.uint64(TICK_MASK)).astype(np.int64)
    if tick.size > 1:
        bad = np.flatnonzero(tick[1:] < tick[:-1])
        if bad.size:
            raise TagFileError("records out of tick order", HEADER_SIZE + (int(bad[0]) + 1) * RECORD_SIZE)
    return TagStream(channel, tick)


def write_tags(path: str | os.PathLike, stream: TagStream) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(stream))


def read_tags(path: str | os.PathLike) -> TagStream:
    with open(path, "rb") as fh:
        return decode(fh.read())
