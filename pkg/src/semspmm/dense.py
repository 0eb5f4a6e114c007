"""Row-major dense matrices, their on-storage image and small dense helpers.

Dense image layout: ``"DENSEF64" | version u32 | n_rows u64 | n_cols u64``
followed by the values, row-major, little-endian binary64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .defaults import DENSE_ELEM_BYTES, MiB, NMF_EPS
from .errors import BudgetError, FormatError, ShapeError

DENSE_MAGIC = b"DENSEF64"
_DHEADER = struct.Struct("<8sIQQ")
DENSE_HEADER_BYTES = _DHEADER.size


def default_row_interval(tile_size: int) -> int:
    """Smallest power of two that is >= 4 tiles."""
    need = 4 * tile_size
    return 1 << (need - 1).bit_length()


class DenseMatrix:
    """An n x p row-major block with its row-interval ownership map.

    ``col_offset`` records where this block sits when it is one vertical
    partition of a wider logical matrix.
    """

    def __init__(self, data, row_interval_size: int | None = None, tile_size: int = 1,
                 num_domains: int = 1, col_offset: int = 0):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data.reshape(-1, 1)
        if data.ndim != 2:
            raise ShapeError("dense matrix must be two-dimensional")
        self.data = data
        if row_interval_size is None:
            row_interval_size = default_row_interval(tile_size)
        if row_interval_size & (row_interval_size - 1) or row_interval_size % tile_size:
            raise ValueError(f"row interval {row_interval_size} must be a power of two and a multiple of {tile_size}")
        self.row_interval_size = row_interval_size
        self.num_domains = num_domains
        self.col_offset = col_offset

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def num_intervals(self) -> int:
        return -(-self.n_rows // self.row_interval_size)

    def interval(self, row: int) -> int:
        return row // self.row_interval_size

    def interval_rows(self, k: int):
        a = k * self.row_interval_size
        return a, min(a + self.row_interval_size, self.n_rows)

    def domain(self, k: int) -> int:
        """Owning placement domain of interval ``k`` (round-robin striping)."""
        return k % self.num_domains

    @property
    def interval_map(self):
        return [self.domain(k) for k in range(self.num_intervals)]


@dataclass(frozen=True)
class VerticalPartitionPlan:
    total_cols: int
    cols_per_pass: int

    def __post_init__(self):
        if self.total_cols <= 0 or self.cols_per_pass <= 0:
            raise ValueError("column counts must be positive")

    @property
    def num_passes(self) -> int:
        return -(-self.total_cols // self.cols_per_pass)

    @property
    def ranges(self):
        p = self.cols_per_pass
        return [(a, min(a + p, self.total_cols)) for a in range(0, self.total_cols, p)]

    @classmethod
    def for_budget(cls, n_rows: int, total_cols: int, mem_bytes: int, elem: int = DENSE_ELEM_BYTES):
        cols = mem_bytes // (n_rows * elem)
        if cols < 1:
            raise BudgetError(f"{mem_bytes} bytes cannot hold one column of {n_rows} rows")
        return cls(total_cols, min(cols, total_cols))


# ---------------------------------------------------------------------------
# on-storage images

def dense_header(n_rows: int, n_cols: int) -> bytes:
    return _DHEADER.pack(DENSE_MAGIC, 1, n_rows, n_cols)


def read_dense_header(storage, path):
    if storage.size(path) < DENSE_HEADER_BYTES:
        raise FormatError(f"{path}: too short for a dense header")
    magic, version, n, p = _DHEADER.unpack(storage.read(path, 0, DENSE_HEADER_BYTES))
    if magic != DENSE_MAGIC or version != 1:
        raise FormatError(f"{path}: not a dense image")
    if storage.size(path) != DENSE_HEADER_BYTES + n * p * 8:
        raise FormatError(f"{path}: truncated dense image ({storage.size(path)} bytes for {n}x{p})")
    return n, p


def create_dense(storage, path, n_rows: int, n_cols: int) -> None:
    """Create an image of the given shape; the value region is zero-filled."""
    storage.create(path, DENSE_HEADER_BYTES + n_rows * n_cols * 8)
    storage.write(path, 0, dense_header(n_rows, n_cols))


def write_dense(storage, path, a) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    storage.create(path)
    storage.write(path, 0, dense_header(*a.shape) + a.tobytes())


def write_dense_block(storage, path, n_cols: int, row0: int, col0: int, block) -> None:
    """Write ``block`` into rows ``row0..`` and columns ``col0..`` of an image."""
    block = np.ascontiguousarray(block, dtype="<f8")
    offset = DENSE_HEADER_BYTES + (row0 * n_cols + col0) * 8
    width = block.shape[1] * 8
    storage.write_strided(path, offset, n_cols * 8, block.view(np.uint8).reshape(-1, width))


def read_dense(storage, path) -> np.ndarray:
    n, p = read_dense_header(storage, path)
    return load_vertical_partition(storage, path, (0, p)).data


def load_vertical_partition(storage, path, col_range, *, tracker=None, budget: int | None = None,
                            block_rows: int | None = None, tile_size: int = 1) -> DenseMatrix:
    """Load columns ``[a, b)`` of an on-storage dense image into memory.

    Rows are read in sequential blocks; only the requested column bytes of
    each row are transferred.
    """
    n, p = read_dense_header(storage, path)
    a, b = col_range
    if not 0 <= a < b <= p:
        raise ShapeError(f"column range {col_range} outside [0, {p})")
    width = b - a
    need = n * width * 8
    if budget is not None and need > budget:
        raise BudgetError(f"vertical partition of {need} bytes exceeds the {budget}-byte budget")
    if tracker is not None:
        tracker.allocate(need, "dense-partition")
    out = np.empty((n, width), dtype=np.float64)
    if block_rows is None:
        block_rows = max(1, (8 * MiB) // max(1, width * 8))
    for r0 in range(0, n, block_rows):
        r1 = min(n, r0 + block_rows)
        offset = DENSE_HEADER_BYTES + (r0 * p + a) * 8
        if width == p:
            buf = np.empty((r1 - r0) * p * 8, dtype=np.uint8)
            storage.read_into(path, offset, buf)
        else:
            buf = storage.read_strided(path, offset, r1 - r0, p * 8, width * 8)
        out[r0:r1] = buf.view("<f8").reshape(r1 - r0, width)
    return DenseMatrix(out, tile_size=tile_size, col_offset=a)


# ---------------------------------------------------------------------------
# dense algebra

def _check2(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def transpose_multiply(a, b) -> np.ndarray:
    """Return ``a.T @ b``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"transpose_multiply: {a.shape} and {b.shape} do not share a row count")
    return a.T @ b


def multiply(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"multiply: {a.shape} x {b.shape}")
    return a @ b


def hadamard_scale(x, num, den, eps: float = NMF_EPS):
    """Elementwise ``x * num / (den + eps)``."""
    x, num, den = (np.asarray(v, dtype=np.float64) for v in (x, num, den))
    _check2(x, num, "hadamard_scale")
    _check2(x, den, "hadamard_scale")
    return x * (num / (den + eps))


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def mgs_qr(a, tol: float = 1e-10):
    """Modified Gram-Schmidt QR of a tall-skinny block, with one re-orthogonalisation.

    Columns whose remaining norm falls below ``tol`` times their original
    norm are dropped.  Returns ``(q, r, kept)`` where ``q`` has ``len(kept)``
    orthonormal columns and ``q @ r`` reproduces ``a``.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise ShapeError("mgs_qr expects a matrix")
    n, b = a.shape
    q = np.zeros((n, b))
    r = np.zeros((b, b))
    kept = []
    for j in range(b):
        v = a[:, j].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            for k in range(len(kept)):
                c = q[:, k] @ v
                r[k, j] += c
                v -= c * q[:, k]
        nv = np.linalg.norm(v)
        if norm0 == 0.0 or nv <= tol * norm0:
            continue
        q[:, len(kept)] = v / nv
        r[len(kept), j] = nv
        kept.append(j)
    m = len(kept)
    return q[:, :m], r[:m], kept
