"""In-memory SpMM over a resident tiled image.

Workers pull bands of contiguous tile rows from a shared :class:`TaskQueue`,
multiply each band into a private output buffer and copy the finished rows
into the result with one bulk write.  Inside a band, tiles are visited in
super-block order: for each group of ``s/t`` tile columns, every tile row of
the band, then the tile columns of the group left to right.  Tiles are
decoded on the fly; no triple list is materialised.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .defaults import CACHE_BYTES, DENSE_ELEM_BYTES
from .errors import FormatError, ShapeError
from .scsr import TiledSparseMatrix


@dataclass(frozen=True)
class KernelConfig:
    cache_bytes: int = CACHE_BYTES
    threads: int = 1
    elem_bytes: int = DENSE_ELEM_BYTES

    def __post_init__(self):
        if self.cache_bytes <= 0 or self.threads <= 0:
            raise ValueError("cache_bytes and threads must be positive")

    def num_trs(self, p: int, t: int, num_tile_rows: int | None = None) -> int:
        """Tile rows per large task: cache / (2 * p * c_d * t), at least 1."""
        n = max(1, self.cache_bytes // (2 * p * self.elem_bytes * t))
        if num_tile_rows is not None:
            n = min(n, max(1, num_tile_rows))
        return n

    def super_block_rows(self, p: int, t: int, num_tile_rows: int | None = None) -> int:
        return self.num_trs(p, t, num_tile_rows) * t


class TaskQueue:
    """Shared ascending cursor over tile-row ids.

    ``get`` hands out ``num_trs`` contiguous rows while more than
    ``threshold`` rows remain and single rows afterwards.
    """

    def __init__(self, num_tile_rows: int, num_trs: int, threshold: int, record: bool = False):
        self.total = num_tile_rows
        self.num_trs = num_trs
        self.threshold = threshold
        self._cursor = 0
        self._lock = threading.Lock()
        self.log = [] if record else None

    @property
    def remaining(self) -> int:
        return self.total - self._cursor

    def get(self):
        """Return ``(first, last)`` for the next task, or None when drained."""
        with self._lock:
            remaining = self.total - self._cursor
            if remaining <= 0:
                return None
            size = 1 if remaining <= self.threshold else min(self.num_trs, remaining)
            first = self._cursor
            self._cursor += size
            if self.log is not None:
                self.log.append((first, first + size, remaining))
            return first, first + size


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True, nogil=True)
def inner_product_accumulate(nz, in_row, out_row):
    """``out_row += nz * in_row``; branch-free over the row so it vectorises."""
    for q in range(out_row.shape[0]):
        out_row[q] += nz * in_row[q]


@njit(cache=True, nogil=True, inline="always")
def _u16(buf, pos):
    return np.int64(buf[pos]) | (np.int64(buf[pos + 1]) << 8)


@njit(cache=True, nogil=True, inline="always")
def _u32(buf, pos):
    return (np.int64(buf[pos]) | (np.int64(buf[pos + 1]) << 8)
            | (np.int64(buf[pos + 2]) << 16) | (np.int64(buf[pos + 3]) << 24))


@njit(cache=True, nogil=True)
def _mul_tile(buf, off, rec_len, value_width, row_base, row_limit, col_base, col_limit,
              in_m, out, scratch):
    nnz_scsr = _u32(buf, off + 8)
    num_coo = _u32(buf, off + 12)
    nvals = nnz_scsr + num_coo
    index_len = rec_len - 16 - value_width * nvals
    if index_len < 0 or index_len % 2 != 0:
        return 1
    n_entries = index_len // 2
    n_scsr = n_entries - 2 * num_coo
    if n_scsr < 0:
        return 1
    pos = off + 16
    vpos = pos + index_len
    if value_width:
        sb = scratch[:nvals].view(np.uint8)
        for b in range(nvals * 8):
            sb[b] = buf[vpos + b]
    v = 1.0
    k = 0
    row = -1
    for e in range(n_scsr):
        x = _u16(buf, pos + 2 * e)
        if x & 0x8000:
            row = x & 0x7FFF
            if row >= row_limit:
                return 2
        else:
            if row < 0 or x >= col_limit:
                return 2
            if value_width:
                v = scratch[k]
            inner_product_accumulate(v, in_m[col_base + x], out[row_base + row])
            k += 1
    pos += 2 * n_scsr
    for e in range(num_coo):
        r = _u16(buf, pos + 4 * e)
        c = _u16(buf, pos + 4 * e + 2)
        if r >= row_limit or c >= col_limit:
            return 2
        if value_width:
            v = scratch[k]
        inner_product_accumulate(v, in_m[col_base + c], out[row_base + r])
        k += 1
    return 0


@njit(cache=True, nogil=True)
def _mul_band(buf, row_offsets, first_tile_row, t, n_rows, n_cols, value_width,
              tiles_per_block, in_m, out, trace):
    nb = row_offsets.shape[0] - 1
    # record directory of every tile row in the band
    count = 0
    for i in range(nb):
        pos = row_offsets[i]
        while pos < row_offsets[i + 1]:
            if pos + 16 > row_offsets[i + 1]:
                return -1
            rec_len = _u32(buf, pos + 4)
            if rec_len < 16 or pos + rec_len > row_offsets[i + 1]:
                return -1
            pos += rec_len
            count += 1
    rec_off = np.empty(count, np.int64)
    rec_col = np.empty(count, np.int64)
    rec_len_a = np.empty(count, np.int64)
    start = np.empty(nb + 1, np.int64)
    count = 0
    max_vals = 0
    for i in range(nb):
        start[i] = count
        pos = row_offsets[i]
        prev = -1
        while pos < row_offsets[i + 1]:
            col = _u32(buf, pos)
            if col <= prev or col * t >= n_cols:
                return -2
            prev = col
            rec_off[count] = pos
            rec_col[count] = col
            rec_len_a[count] = _u32(buf, pos + 4)
            nv = _u32(buf, pos + 8) + _u32(buf, pos + 12)
            if nv > max_vals:
                max_vals = nv
            pos += rec_len_a[count]
            count += 1
    start[nb] = count
    scratch = np.empty(max_vals if value_width else 0, np.float64)
    cursor = start[:nb].copy()
    num_tile_cols = (n_cols + t - 1) // t
    ntrace = 0
    for k in range(0, num_tile_cols, tiles_per_block):
        for i in range(nb):
            tr = first_tile_row + i
            row_limit = min(t, n_rows - tr * t)
            for j in range(tiles_per_block):
                c = cursor[i]
                if c >= start[i + 1] or rec_col[c] != k + j:
                    continue
                col = k + j
                col_limit = min(t, n_cols - col * t)
                status = _mul_tile(buf, rec_off[c], rec_len_a[c], value_width, i * t, row_limit,
                                   col * t, col_limit, in_m, out, scratch)
                if status != 0:
                    return -3
                if ntrace < trace.shape[0]:
                    trace[ntrace, 0] = tr
                    trace[ntrace, 1] = col
                ntrace += 1
                cursor[i] = c + 1
    return ntrace


def mul_tile_rows(band, row_offsets, first_tile_row: int, header, in_m, out_buf,
                  tiles_per_block: int, trace=None) -> int:
    """Multiply a band of tile rows into ``out_buf`` (accumulating).

    ``band`` holds the records of consecutive tile rows; ``row_offsets`` has
    one entry per tile row plus the end offset, relative to ``band``.
    Returns the number of tiles visited.  When ``trace`` (an int64 array of
    shape (m, 2)) is given, the first m visited ``(tile_row, tile_col)``
    pairs are written into it.
    """
    if trace is None:
        trace = np.empty((0, 2), np.int64)
    row_offsets = np.asarray(row_offsets, np.int64)
    if len(row_offsets) and (row_offsets[0] < 0 or row_offsets[-1] > len(band)):
        raise FormatError(f"tile-row index points past the band at tile row {first_tile_row}")
    res = _mul_band(band, row_offsets, first_tile_row, header.tile_size,
                    header.n_rows, header.n_cols, header.value_kind.width, tiles_per_block,
                    in_m, out_buf, trace)
    if res < 0:
        what = {-1: "record length", -2: "tile column id", -3: "tile contents"}[res]
        raise FormatError(f"corrupt {what} in tile rows starting at {first_tile_row}")
    return res


# ---------------------------------------------------------------------------
# driver

def check_operands(header, in_m) -> np.ndarray:
    in_m = np.asarray(getattr(in_m, "data", in_m), dtype=np.float64)
    if in_m.ndim == 1:
        in_m = in_m.reshape(-1, 1)
    if in_m.shape[1] == 0:
        raise ShapeError("dense operand has no columns")
    if in_m.shape[0] != header.n_cols:
        raise ShapeError(f"sparse matrix has {header.n_cols} columns but the dense operand has {in_m.shape[0]} rows")
    return np.ascontiguousarray(in_m)


def band_offsets(header, first: int, last: int):
    idx = header.tile_row_index
    base = idx[first][0]
    return np.array([idx[i][0] - base for i in range(first, last)]
                    + [idx[last - 1][0] + idx[last - 1][1] - base], dtype=np.int64)


def run_workers(threads: int, work) -> None:
    """Run ``work(worker_id)`` on ``threads`` threads and re-raise the first error."""
    if threads == 1:
        work(0)
        return
    errors = []

    def target(w):
        try:
            work(w)
        except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
            errors.append(exc)

    pool = [threading.Thread(target=target, args=(w,), name=f"spmm-{w}") for w in range(threads)]
    for th in pool:
        th.start()
    for th in pool:
        th.join()
    if errors:
        raise errors[0]


def spmm(spm: TiledSparseMatrix, in_m, cfg: KernelConfig | None = None, *, out=None,
         queue: TaskQueue | None = None, on_write=None) -> np.ndarray:
    """Multiply a resident tiled image by a dense matrix: returns ``spm @ in_m``.

    ``on_write(first_row, last_row)`` is called once per bulk output write.
    """
    cfg = cfg or KernelConfig()
    if spm.data is None:
        raise ValueError("spmm needs a resident image; use sem.spmm_sem for on-storage images")
    hdr = spm.header
    in_m = check_operands(hdr, in_m)
    p = in_m.shape[1]
    t = hdr.tile_size
    if out is None:
        out = np.zeros((hdr.n_rows, p))
    elif out.shape != (hdr.n_rows, p):
        raise ShapeError(f"output has shape {out.shape}, expected {(hdr.n_rows, p)}")
    ntr = hdr.num_tile_rows
    num_trs = cfg.num_trs(p, t, ntr)
    queue = queue or TaskQueue(ntr, num_trs, cfg.threads)
    data = spm.data

    def work(_w):
        buf = np.zeros((num_trs * t, p))
        while (task := queue.get()) is not None:
            first, last = task
            off, length = spm.band_range(first, last)
            rows0, rows1 = first * t, min(hdr.n_rows, last * t)
            local = buf[:rows1 - rows0]
            local[:] = 0.0
            mul_tile_rows(data[off:off + length], band_offsets(hdr, first, last), first, hdr,
                          in_m, local, num_trs)
            out[rows0:rows1] = local
            if on_write is not None:
                on_write(rows0, rows1)

    run_workers(cfg.threads, work)
    return out
