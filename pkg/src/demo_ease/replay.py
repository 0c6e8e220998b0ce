"""Experience memories: a FIFO ring for ordinary experience and an
append-only store for demonstrations, plus their binary file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import BadMagic, TruncatedFile, VersionMismatch

MAGIC = b"DEZB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")

DEFAULT_CAPACITY = 1_000_000


class EmptyBuffer(RuntimeError):
    pass


class DemoBufferFull(RuntimeError):
    pass


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    zeta: int
    partition: int
    is_demo: bool

    def __post_init__(self):
        if np.shape(self.s) != np.shape(self.s_next):
            raise ValueError("s and s_next must have the same dimension")
        if self.zeta not in (0, 1):
            raise ValueError("zeta must be 0 or 1")


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    zeta: np.ndarray


def record_dtype(obs_dim: int, act_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("s", "<f8", (obs_dim,)),
            ("a", "<f8", (act_dim,)),
            ("r", "<f8"),
            ("s_next", "<f8", (obs_dim,)),
            ("zeta", "u1"),
            ("partition", "u1"),
            ("is_demo", "u1"),
        ]
    )


class ReplayBuffer:
    """Fixed-capacity transition store.

    With ``evict=True`` (the ordinary buffer) the oldest entries are
    overwritten once full; with ``evict=False`` (the demonstration buffer)
    pushing past capacity raises ``DemoBufferFull``.
    """

    def __init__(self, obs_dim: int, act_dim: int = 4, capacity: int = DEFAULT_CAPACITY, evict: bool = True):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.capacity = capacity
        self.evict = evict
        self.write_cursor = 0
        self.size = 0
        self._data = np.zeros(min(capacity, 1024), dtype=record_dtype(obs_dim, act_dim))

    def __len__(self) -> int:
        return self.size

    def _grow(self):
        n = min(self.capacity, 2 * len(self._data))
        data = np.zeros(n, dtype=self._data.dtype)
        data[: len(self._data)] = self._data
        self._data = data

    def push(self, t: Transition) -> None:
        if self.size == self.capacity and not self.evict:
            raise DemoBufferFull(f"demonstration buffer is full ({self.capacity} transitions)")
        if self.write_cursor >= len(self._data):
            self._grow()
        rec = self._data[self.write_cursor]
        rec["s"] = t.s
        rec["a"] = t.a
        rec["r"] = t.r
        rec["s_next"] = t.s_next
        rec["zeta"] = t.zeta
        rec["partition"] = t.partition
        rec["is_demo"] = bool(t.is_demo)
        self.write_cursor = (self.write_cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample_arrays(self, n: int, rng: np.random.Generator) -> Batch:
        rec = self._data[self._indices(n, rng)]
        return Batch(rec["s"], rec["a"], rec["r"], rec["s_next"], rec["zeta"].astype(float))

    def sample_batch(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """``n`` transitions drawn uniformly with replacement."""
        return [self._to_transition(self._data[i]) for i in self._indices(n, rng)]

    @staticmethod
    def _to_transition(rec) -> Transition:
        return Transition(
            rec["s"].copy(),
            rec["a"].copy(),
            float(rec["r"]),
            rec["s_next"].copy(),
            int(rec["zeta"]),
            int(rec["partition"]),
            bool(rec["is_demo"]),
        )

    def records(self) -> np.ndarray:
        """Stored records from oldest to newest."""
        if self.size < self.capacity:
            return self._data[: self.size]
        return np.concatenate([self._data[self.write_cursor :], self._data[: self.write_cursor]])

    def __iter__(self):
        for rec in self.records():
            yield self._to_transition(rec)

    def __getitem__(self, i: int) -> Transition:
        return self._to_transition(self.records()[i])

    def extend_records(self, records: np.ndarray) -> None:
        for rec in records:
            self.push(self._to_transition(rec))

    def save(self, path) -> None:
        records = self.records()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, self.obs_dim, self.act_dim, len(records)))
            fh.write(records.tobytes())


def save(buffer: ReplayBuffer, path) -> None:
    buffer.save(path)


def load(path, capacity: Optional[int] = None, evict: bool = True) -> ReplayBuffer:
    """Read a buffer file. ``capacity`` defaults to the larger of the stored
    count and the ordinary default."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a replay buffer file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    _, version, obs_dim, act_dim, count = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatch(f"{path}: file version {version}, reader version {VERSION}")
    dtype = record_dtype(obs_dim, act_dim)
    need = _HEADER.size + count * dtype.itemsize
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes for {count} records, got {len(raw)}")
    records = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    if capacity is None:
        capacity = max(count, DEFAULT_CAPACITY) if evict else max(count, 1)
    buf = ReplayBuffer(obs_dim, act_dim, capacity, evict)
    buf._data = np.zeros(max(min(capacity, 1024), count), dtype=dtype)
    keep = records[-capacity:] if count > capacity else records
    buf._data[: len(keep)] = keep
    buf.size = len(keep)
    buf.write_cursor = buf.size % capacity
    return buf
