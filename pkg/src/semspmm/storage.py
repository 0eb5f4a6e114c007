"""Storage shim, reusable I/O buffers and allocation accounting.

Every byte the engine moves between memory and storage goes through a
:class:`Storage` object so that reads and writes can be counted, logged and
faulted in tests.  Two backends exist: :class:`FileStorage` for real files and
:class:`MemoryStorage`, an instrumented in-memory store.
"""

from __future__ import annotations

import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, FormatError


@dataclass
class IoCounters:
    bytes_read: dict = field(default_factory=lambda: defaultdict(int))
    bytes_written: dict = field(default_factory=lambda: defaultdict(int))
    read_ops: int = 0
    write_ops: int = 0
    write_log: list = field(default_factory=list)

    def total_read(self, path=None) -> int:
        if path is None:
            return sum(self.bytes_read.values())
        return self.bytes_read.get(_key(path), 0)

    def total_written(self, path=None) -> int:
        if path is None:
            return sum(self.bytes_written.values())
        return self.bytes_written.get(_key(path), 0)


def _key(path) -> str:
    return os.fspath(path)


class Storage:
    """Counting byte store addressed by path and offset.

    Subclasses implement the ``_read_into``, ``_write``, ``_size`` and
    ``_create`` primitives; counting and logging live here.
    """

    def __init__(self, log_writes: bool = False):
        self.counters = IoCounters()
        self.log_writes = log_writes
        self._lock = threading.Lock()

    # accounting -----------------------------------------------------------
    def _count_read(self, path, n):
        with self._lock:
            self.counters.bytes_read[_key(path)] += n
            self.counters.read_ops += 1

    def _count_write(self, path, offset, n):
        with self._lock:
            self.counters.bytes_written[_key(path)] += n
            self.counters.write_ops += 1
            if self.log_writes:
                self.counters.write_log.append((_key(path), offset, n))

    def reset_counters(self):
        with self._lock:
            self.counters = IoCounters()

    # public API -----------------------------------------------------------
    def create(self, path, nbytes: int = 0):
        self._create(path, nbytes)

    def size(self, path) -> int:
        return self._size(path)

    def exists(self, path) -> bool:
        raise NotImplementedError

    def remove(self, path) -> None:
        raise NotImplementedError

    def read(self, path, offset: int, length: int) -> bytes:
        buf = np.empty(length, dtype=np.uint8)
        self.read_into(path, offset, buf)
        return buf.tobytes()

    def read_into(self, path, offset: int, out: np.ndarray) -> None:
        """Fill the uint8 array ``out`` from ``path`` starting at ``offset``."""
        n = out.nbytes
        got = self._read_into(path, offset, out)
        if got != n:
            raise FormatError(f"short read on {path}: wanted {n} bytes at offset {offset}, got {got}")
        self._count_read(path, n)

    def write(self, path, offset: int, data) -> None:
        mv = memoryview(data).cast("B")
        self._write(path, offset, mv)
        self._count_write(path, offset, mv.nbytes)

    def read_strided(self, path, offset: int, count: int, stride: int, width: int) -> np.ndarray:
        """Read ``count`` blocks of ``width`` bytes spaced ``stride`` apart."""
        out = np.empty((count, width), dtype=np.uint8)
        if count:
            self._read_strided(path, offset, stride, out)
        self._count_read(path, count * width)
        return out

    def write_strided(self, path, offset: int, stride: int, block: np.ndarray) -> None:
        """Write the rows of the uint8 matrix ``block`` ``stride`` bytes apart."""
        block = np.ascontiguousarray(block, dtype=np.uint8)
        if stride == block.shape[1]:
            self.write(path, offset, block)
            return
        if block.shape[0]:
            self._write_strided(path, offset, stride, block)
        self._count_write(path, offset, block.nbytes)

    def iter_chunks(self, path, chunk_size: int = 1 << 20):
        """Yield the whole object sequentially in ``chunk_size`` pieces."""
        total = self.size(path)
        offset = 0
        while offset < total:
            n = min(chunk_size, total - offset)
            yield self.read(path, offset, n)
            offset += n

    # backend primitives ---------------------------------------------------
    def _create(self, path, nbytes):
        raise NotImplementedError

    def _size(self, path):
        raise NotImplementedError

    def _read_into(self, path, offset, out):
        raise NotImplementedError

    def _write(self, path, offset, mv):
        raise NotImplementedError

    def _read_strided(self, path, offset, stride, out):
        raise NotImplementedError

    def _write_strided(self, path, offset, stride, block):
        raise NotImplementedError


class FileStorage(Storage):
    def exists(self, path) -> bool:
        return os.path.exists(path)

    def remove(self, path) -> None:
        os.remove(path)

    def _create(self, path, nbytes):
        with open(path, "wb") as f:
            if nbytes:
                f.truncate(nbytes)

    def _size(self, path):
        return os.path.getsize(path)

    def _read_into(self, path, offset, out):
        with open(path, "rb") as f:
            f.seek(offset)
            return f.readinto(memoryview(out).cast("B"))

    def _write(self, path, offset, mv):
        mode = "r+b" if os.path.exists(path) else "wb"
        with open(path, mode) as f:
            f.seek(offset)
            f.write(mv)

    def _read_strided(self, path, offset, stride, out):
        count, width = out.shape
        end = offset + (count - 1) * stride + width
        if end > self._size(path):
            raise FormatError(f"short read on {path}: strided range ends at {end}")
        mm = np.memmap(path, dtype=np.uint8, mode="r", offset=offset, shape=((count - 1) * stride + width,))
        out[:] = np.lib.stride_tricks.as_strided(mm, shape=(count, width), strides=(stride, 1))
        del mm

    def _write_strided(self, path, offset, stride, block):
        count, width = block.shape
        end = offset + (count - 1) * stride + width
        if end > self._size(path):
            with open(path, "r+b") as f:
                f.truncate(end)
        mm = np.memmap(path, dtype=np.uint8, mode="r+", offset=offset, shape=((count - 1) * stride + width,))
        view = np.lib.stride_tricks.as_strided(mm, shape=(count, width), strides=(stride, 1))
        view[:] = block
        mm.flush()
        del view, mm


class MemoryStorage(Storage):
    """Instrumented in-memory store; paths are plain dictionary keys."""

    def __init__(self, log_writes: bool = False):
        super().__init__(log_writes)
        self._blobs: dict[str, bytearray] = {}

    def exists(self, path) -> bool:
        return _key(path) in self._blobs

    def remove(self, path) -> None:
        self._blobs.pop(_key(path), None)

    def put(self, path, data: bytes) -> None:
        """Install an object without counting it (test setup)."""
        self._blobs[_key(path)] = bytearray(data)

    def getvalue(self, path) -> bytes:
        """Return an object's bytes without counting them (test inspection)."""
        return bytes(self._blobs[_key(path)])

    def _blob(self, path) -> bytearray:
        try:
            return self._blobs[_key(path)]
        except KeyError:
            raise FileNotFoundError(path) from None

    def _create(self, path, nbytes):
        self._blobs[_key(path)] = bytearray(nbytes)

    def _size(self, path):
        return len(self._blob(path))

    def _read_into(self, path, offset, out):
        blob = self._blob(path)
        chunk = blob[offset:offset + out.nbytes]
        memoryview(out).cast("B")[:len(chunk)] = chunk
        return len(chunk)

    def _grow(self, path, end):
        blob = self._blobs.setdefault(_key(path), bytearray())
        if len(blob) < end:
            blob.extend(bytes(end - len(blob)))
        return blob

    def _write(self, path, offset, mv):
        blob = self._grow(path, offset + mv.nbytes)
        blob[offset:offset + mv.nbytes] = mv

    def _read_strided(self, path, offset, stride, out):
        count, width = out.shape
        blob = self._blob(path)
        end = offset + (count - 1) * stride + width
        if end > len(blob):
            raise FormatError(f"short read on {path}: strided range ends at {end}")
        arr = np.frombuffer(blob, dtype=np.uint8)
        out[:] = np.lib.stride_tricks.as_strided(arr[offset:], shape=(count, width), strides=(stride, 1))

    def _write_strided(self, path, offset, stride, block):
        count, width = block.shape
        blob = self._grow(path, offset + (count - 1) * stride + width)
        arr = np.frombuffer(blob, dtype=np.uint8)
        view = np.lib.stride_tricks.as_strided(arr[offset:], shape=(count, width), strides=(stride, 1))
        view[:] = block


class MemoryTracker:
    """Accounting allocator: tags every tracked buffer and records the peak.

    With ``limit`` set, an allocation that would push the live total above it
    raises :class:`BudgetError`.
    """

    def __init__(self, limit: int | None = None):
        self.limit = limit
        self.current = 0
        self.peak = 0
        self.by_tag: dict = defaultdict(int)
        self._lock = threading.Lock()

    def allocate(self, nbytes: int, tag: str = "") -> None:
        with self._lock:
            if self.limit is not None and self.current + nbytes > self.limit:
                raise BudgetError(
                    f"tracked allocations would reach {self.current + nbytes} bytes "
                    f"({tag or 'untagged'}), above the {self.limit}-byte plan")
            self.current += nbytes
            self.by_tag[tag] += nbytes
            self.peak = max(self.peak, self.current)

    def release(self, nbytes: int, tag: str = "") -> None:
        with self._lock:
            self.current -= nbytes
            self.by_tag[tag] -= nbytes


class BufferPool:
    """Reusable uint8 buffers for one worker.

    ``acquire`` prefers a free buffer and grows it in place of allocating a
    fresh one when it is too small.
    """

    def __init__(self, tracker: MemoryTracker | None = None, tag: str = "pool"):
        self.tracker = tracker
        self.tag = tag
        self._free: list[np.ndarray] = []
        self.allocations = 0
        self.resizes = 0
        self.reuses = 0
        self.high_water = 0
        self._capacity = 0

    def _track(self, delta):
        self._capacity += delta
        self.high_water = max(self.high_water, self._capacity)
        if self.tracker is not None:
            if delta > 0:
                self.tracker.allocate(delta, self.tag)
            elif delta < 0:
                self.tracker.release(-delta, self.tag)

    def acquire(self, nbytes: int) -> np.ndarray:
        """Return a buffer of capacity >= ``nbytes`` owned by the caller."""
        if self._free:
            # pick the largest free buffer so a resize is rarely needed
            self._free.sort(key=len)
            buf = self._free.pop()
            if len(buf) < nbytes:
                self._track(nbytes - len(buf))
                buf = np.empty(nbytes, dtype=np.uint8)
                self.resizes += 1
            else:
                self.reuses += 1
            return buf
        self._track(nbytes)
        self.allocations += 1
        return np.empty(nbytes, dtype=np.uint8)

    def release(self, buf: np.ndarray) -> None:
        self._free.append(buf)

    def close(self) -> None:
        self._free.clear()
        self._track(-self._capacity)
