"""Semi-external-memory SpMM: the sparse image streams from storage.

Each worker keeps one band read ahead of the band it is multiplying (double
buffering through a private reader thread and a :class:`BufferPool`).  Output
bands go to a :class:`WriteCoalescer`, which emits them in ascending row order
as merged batches of at least ``merge_bytes`` (except the last one).
Arithmetic is exactly that of :mod:`semspmm.kernel`, so results are
bit-identical to the in-memory path.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .defaults import DENSE_ELEM_BYTES, FIXED_OVERHEAD_BYTES, MERGE_BYTES, THREAD_BUFFER_BYTES
from .dense import (VerticalPartitionPlan, create_dense, load_vertical_partition, read_dense_header,
                    write_dense_block)
from .errors import BudgetError, FormatError, ShapeError
from .kernel import KernelConfig, TaskQueue, band_offsets, check_operands, mul_tile_rows, run_workers
from .scsr import TiledSparseMatrix
from .storage import BufferPool, MemoryTracker


# ---------------------------------------------------------------------------
# cost model

@dataclass(frozen=True)
class IoPlan:
    """Memory/I-O plan for one SEM job.

    ``mem_dense`` is the share of ``mem`` that holds dense columns; the rest
    may cache a prefix of the sparse image when ``cache_sparse`` is set.
    """

    n: int
    p: int
    sparse_bytes: int
    mem: int
    mem_dense: int | None = None
    c: int = DENSE_ELEM_BYTES
    eps: int = THREAD_BUFFER_BYTES
    threads: int = 1
    cache_sparse: bool = False

    @property
    def dense_budget(self) -> int:
        return self.mem if self.mem_dense is None else self.mem_dense

    @property
    def min_memory(self) -> int:
        return self.n * self.c + self.threads * self.eps

    @property
    def p_mem(self) -> int:
        return min(self.p, self.dense_budget // (self.n * self.c))

    @property
    def passes(self) -> int:
        return math.ceil(self.p / self.p_mem)

    def check(self) -> "IoPlan":
        if self.dense_budget > self.mem:
            raise BudgetError(f"dense share {self.dense_budget} exceeds the memory budget {self.mem}")
        if self.dense_budget < self.n * self.c:
            raise BudgetError(f"{self.dense_budget} bytes cannot hold one dense column of {self.n} rows")
        return self

    def vertical_plan(self) -> VerticalPartitionPlan:
        return VerticalPartitionPlan(self.p, self.check().p_mem)

    @classmethod
    def for_engine(cls, n: int, p: int, sparse_bytes: int, mem: int, threads: int = 1,
                   eps: int = THREAD_BUFFER_BYTES, overhead: int = FIXED_OVERHEAD_BYTES) -> "IoPlan":
        """Plan the engine actually runs: everything but buffers holds dense columns."""
        plan = cls(n, p, sparse_bytes, mem, mem - threads * eps - overhead, eps=eps, threads=threads)
        if mem < plan.min_memory:
            raise BudgetError(f"memory budget {mem} is below the minimum {plan.min_memory} (n*c + threads*eps)")
        return plan.check()


def predicted_io(plan: IoPlan) -> int:
    """Sparse bytes read from storage for the whole job.

    Passes are rounded up.  With ``cache_sparse`` the leftover ``mem -
    mem_dense`` holds a prefix of the image that is not re-read.
    """
    plan.check()
    if not plan.cache_sparse:
        return plan.passes * plan.sparse_bytes
    cached = plan.mem - plan.dense_budget
    return plan.passes * max(plan.sparse_bytes - cached, 0)


# ---------------------------------------------------------------------------
# transport

def read_tile_rows(spm: TiledSparseMatrix, first: int, last: int, pool: BufferPool | None = None):
    """Read tile rows ``[first, last)`` with one sequential request.

    Returns ``(band_bytes, row_offsets, buffer)``; hand ``buffer`` back to
    the pool once the band is consumed.
    """
    off, length = spm.band_range(first, last)
    buf = pool.acquire(length) if pool is not None else np.empty(length, np.uint8)
    band = buf[:length]
    spm.storage.read_into(spm.path, off, band)
    return band, band_offsets(spm.header, first, last), buf


class MemorySink:
    def __init__(self, out: np.ndarray, col0: int = 0):
        self.out = out
        self.col0 = col0

    def write_rows(self, row0: int, block: np.ndarray) -> None:
        self.out[row0:row0 + len(block), self.col0:self.col0 + block.shape[1]] = block


class StorageSink:
    """Writes row batches into columns ``col0..`` of an on-storage dense image."""

    def __init__(self, storage, path, n_cols: int, col0: int = 0):
        self.storage, self.path, self.n_cols, self.col0 = storage, path, n_cols, col0

    def write_rows(self, row0: int, block: np.ndarray) -> None:
        write_dense_block(self.storage, self.path, self.n_cols, row0, self.col0, block)


class WriteCoalescer:
    """Orders finished bands by row and merges adjacent ones into large writes."""

    def __init__(self, sink, n_rows: int, merge_bytes: int = MERGE_BYTES, tracker: MemoryTracker | None = None):
        self.sink = sink
        self.n_rows = n_rows
        self.merge_bytes = merge_bytes
        self.tracker = tracker
        self.next_row = 0
        self._pending: dict[int, np.ndarray] = {}
        self._merge: list[np.ndarray] = []
        self._merge_start = 0
        self._merge_size = 0
        self._lock = threading.Lock()
        self.writes: list[tuple[int, int, int]] = []

    def _hold(self, nbytes):
        if self.tracker is not None:
            self.tracker.allocate(nbytes, "write-merge")

    def _drop(self, nbytes):
        if self.tracker is not None:
            self.tracker.release(nbytes, "write-merge")

    def submit(self, row0: int, block: np.ndarray) -> None:
        """Queue rows ``row0 .. row0+len(block)``; the block is copied."""
        with self._lock:
            if row0 < self.next_row or row0 in self._pending:
                raise FormatError(f"rows starting at {row0} were already written")
            self._hold(block.nbytes)
            self._pending[row0] = block.copy()
            while self.next_row in self._pending:
                b = self._pending.pop(self.next_row)
                if not self._merge:
                    self._merge_start = self.next_row
                self._merge.append(b)
                self._merge_size += b.nbytes
                self.next_row += len(b)
                if self._merge_size >= self.merge_bytes:
                    self._flush()

    def _flush(self):
        if not self._merge:
            return
        block = self._merge[0] if len(self._merge) == 1 else np.concatenate(self._merge)
        self.sink.write_rows(self._merge_start, block)
        self.writes.append((self._merge_start, self._merge_start + len(block), block.nbytes))
        self._drop(self._merge_size)
        self._merge, self._merge_size = [], 0

    def finish(self) -> None:
        """Flush the final batch; all rows must have been submitted."""
        with self._lock:
            self._flush()
            if self._pending or self.next_row != self.n_rows:
                raise FormatError(f"written row ranges stop at {self.next_row} of {self.n_rows}")


# ---------------------------------------------------------------------------
# engine

@dataclass
class SemStats:
    bytes_read: int = 0
    bands: int = 0
    pool_allocations: int = 0
    pool_resizes: int = 0
    pool_reuses: int = 0
    writes: list | None = None


def spmm_sem(spm, storage, in_m, cfg: KernelConfig | None = None, *, out=None, out_path=None,
             out_cols: int | None = None, out_col0: int = 0, merge_bytes: int = MERGE_BYTES,
             tracker: MemoryTracker | None = None, queue: TaskQueue | None = None,
             stats: SemStats | None = None):
    """Multiply the on-storage image ``spm`` (a path or an opened matrix) by the resident ``in_m``.

    Output goes to memory (``out`` array, allocated when neither ``out`` nor
    ``out_path`` is given) or into an existing dense image at ``out_path``
    whose columns ``out_col0 .. out_col0 + p`` receive the result.
    """
    cfg = cfg or KernelConfig()
    if not isinstance(spm, TiledSparseMatrix):
        spm = TiledSparseMatrix.open(spm, storage)
    hdr = spm.header
    in_m = check_operands(hdr, in_m)
    p = in_m.shape[1]
    t = hdr.tile_size
    ntr = hdr.num_tile_rows
    num_trs = cfg.num_trs(p, t, ntr)
    queue = queue or TaskQueue(ntr, num_trs, cfg.threads)

    if out_path is not None:
        n_out, total_cols = read_dense_header(storage, out_path)
        if n_out != hdr.n_rows or out_col0 + p > total_cols:
            raise ShapeError(f"output image {n_out}x{total_cols} cannot take {hdr.n_rows}x{p} at column {out_col0}")
        sink = StorageSink(storage, out_path, total_cols, out_col0)
    else:
        if out is None:
            out = np.zeros((hdr.n_rows, p))
            if tracker is not None:
                tracker.allocate(out.nbytes, "output")
        sink = MemorySink(out, out_col0)
    coalescer = WriteCoalescer(sink, hdr.n_rows, merge_bytes, tracker)
    pools = []
    pools_lock = threading.Lock()
    read_bytes = [0, 0]

    def work(_w):
        pool = BufferPool(tracker, "sparse-band")
        with pools_lock:
            pools.append(pool)
        local = np.zeros((num_trs * t, p))
        if tracker is not None:
            tracker.allocate(local.nbytes, "out-buffer")
        reader = ThreadPoolExecutor(max_workers=1, thread_name_prefix="semspmm-read")
        try:
            task = queue.get()
            pending = reader.submit(read_tile_rows, spm, *task, pool) if task else None
            while pending is not None:
                band, offs, buf = pending.result()
                cur = task
                task = queue.get()
                pending = reader.submit(read_tile_rows, spm, *task, pool) if task else None
                first, last = cur
                rows0, rows1 = first * t, min(hdr.n_rows, last * t)
                res = local[:rows1 - rows0]
                res[:] = 0.0
                mul_tile_rows(band, offs, first, hdr, in_m, res, num_trs)
                with pools_lock:
                    read_bytes[0] += len(band)
                    read_bytes[1] += 1
                pool.release(buf)
                coalescer.submit(rows0, res)
        finally:
            reader.shutdown(wait=True)
            if tracker is not None:
                tracker.release(local.nbytes, "out-buffer")

    try:
        run_workers(cfg.threads, work)
        coalescer.finish()
    finally:
        for pool in pools:
            if stats is not None:
                stats.pool_allocations += pool.allocations
                stats.pool_resizes += pool.resizes
                stats.pool_reuses += pool.reuses
            pool.close()
    if stats is not None:
        stats.bytes_read += read_bytes[0]
        stats.bands += read_bytes[1]
        stats.writes = (stats.writes or []) + coalescer.writes
    return out_path if out_path is not None else out


def spmm_large_dense(spm, in_path, out_path, storage, plan: VerticalPartitionPlan | None = None,
                     cfg: KernelConfig | None = None, *, mem: int | None = None,
                     merge_bytes: int = MERGE_BYTES, tracker: MemoryTracker | None = None,
                     stats: SemStats | None = None):
    """Multiply by an on-storage dense matrix one vertical partition at a time.

    Pass ``k`` loads input columns ``plan.ranges[k]``, streams the whole
    sparse image once and writes the same output columns.  Without a plan,
    one is derived from the memory budget ``mem``.  ``spm`` is a path or an
    opened matrix.
    """
    cfg = cfg or KernelConfig()
    n_in, total = read_dense_header(storage, in_path)
    if not isinstance(spm, TiledSparseMatrix):
        spm = TiledSparseMatrix.open(spm, storage)
    if n_in != spm.header.n_cols:
        raise ShapeError(f"sparse matrix has {spm.header.n_cols} columns, dense input has {n_in} rows")
    if plan is None:
        if mem is None:
            plan = VerticalPartitionPlan(total, total)
        else:
            plan = IoPlan.for_engine(n_in, total, spm.nbytes, mem, cfg.threads).vertical_plan()
    if plan.total_cols != total:
        raise ShapeError(f"plan covers {plan.total_cols} columns, input has {total}")
    if mem is not None and n_in * plan.cols_per_pass * DENSE_ELEM_BYTES > mem:
        raise BudgetError(f"{plan.cols_per_pass} resident columns exceed the {mem}-byte budget")
    create_dense(storage, out_path, spm.header.n_rows, total)
    for a, b in plan.ranges:
        part = load_vertical_partition(storage, in_path, (a, b), tracker=tracker)
        try:
            spmm_sem(spm, storage, part.data, cfg, out_path=out_path, out_col0=a,
                     merge_bytes=merge_bytes, tracker=tracker, stats=stats)
        finally:
            if tracker is not None:
                tracker.release(part.data.nbytes, "dense-partition")
    return out_path
