"""A sparse image plus the engine that multiplies with it.

``mode="im"`` loads the image and runs the in-memory kernel; ``mode="sem"``
leaves it on storage and streams it for every product.  Both paths share one
arithmetic routine, so applications produce the same bits in either mode.
"""

from __future__ import annotations

import numpy as np

from ..defaults import MERGE_BYTES
from ..dense import VerticalPartitionPlan, create_dense, load_vertical_partition, read_dense_header, write_dense_block
from ..errors import DataError, ShapeError
from ..kernel import KernelConfig, spmm
from ..scsr import TiledSparseMatrix, decode_tile
from ..sem import SemStats, spmm_large_dense, spmm_sem

MODES = ("im", "sem")


class SparseOperator:
    def __init__(self, path, storage, mode: str = "im", cfg: KernelConfig | None = None, *,
                 tracker=None, merge_bytes: int = MERGE_BYTES):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.path, self.storage, self.mode = path, storage, mode
        self.cfg = cfg or KernelConfig()
        self.tracker = tracker
        self.merge_bytes = merge_bytes
        self.stats = SemStats()
        if mode == "im":
            self.matrix = TiledSparseMatrix.load(path, storage)
        else:
            self.matrix = TiledSparseMatrix.open(path, storage)

    @property
    def shape(self):
        return self.matrix.shape

    def _product(self, x):
        if self.mode == "im":
            return spmm(self.matrix, x, self.cfg)
        return spmm_sem(self.matrix, self.storage, x, self.cfg, merge_bytes=self.merge_bytes,
                        tracker=self.tracker, stats=self.stats)

    def matmul(self, x, cols_per_pass: int | None = None) -> np.ndarray:
        """Return ``A @ x``, multiplying ``cols_per_pass`` columns of ``x`` at a time."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.matmul(x.reshape(-1, 1), cols_per_pass)[:, 0]
        if x.shape[0] != self.shape[1]:
            raise ShapeError(f"operator is {self.shape}, operand has {x.shape[0]} rows")
        p = x.shape[1]
        if cols_per_pass is None or cols_per_pass >= p:
            return self._product(x)
        out = np.empty((self.shape[0], p))
        for a, b in VerticalPartitionPlan(p, cols_per_pass).ranges:
            out[:, a:b] = self._product(np.ascontiguousarray(x[:, a:b]))
        return out

    def matmul_stored(self, in_path, out_path, cols_per_pass: int | None = None):
        """Multiply an on-storage dense image into a new one at ``out_path``."""
        _, p = read_dense_header(self.storage, in_path)
        plan = VerticalPartitionPlan(p, min(p, cols_per_pass or p))
        if self.mode == "sem":
            return spmm_large_dense(self.matrix, in_path, out_path, self.storage, plan, self.cfg,
                                    merge_bytes=self.merge_bytes, tracker=self.tracker, stats=self.stats)
        create_dense(self.storage, out_path, self.shape[0], p)
        for a, b in plan.ranges:
            part = load_vertical_partition(self.storage, in_path, (a, b))
            write_dense_block(self.storage, out_path, p, 0, a, spmm(self.matrix, part.data, self.cfg))
        return out_path

    def coo(self):
        """Global ``(rows, cols, vals)``; reads the whole image in SEM mode."""
        m = self.matrix if self.mode == "im" else TiledSparseMatrix.load(self.path, self.storage)
        return m.to_coo()

    def scan_values(self):
        """Return ``(squared Frobenius norm, minimum value)`` with one pass over the tiles."""
        m, t = self.matrix, self.matrix.tile_size
        sq, lo = 0.0, np.inf
        for i, rec in m.tiles():
            _, _, v = decode_tile(rec, t, m.header.row_limit(i), m.header.col_limit(rec.tile_col_id),
                                  m.value_kind)
            sq += float(v @ v)
            lo = min(lo, float(v.min()))
        return sq, lo

    def column_counts(self) -> np.ndarray:
        _, cols, _ = self.coo()
        return np.bincount(cols, minlength=self.shape[1])

    def check_symmetric(self) -> None:
        if self.shape[0] != self.shape[1]:
            raise DataError(f"matrix is {self.shape}, not square")
        r, c, v = self.coo()
        order = np.lexsort((r, c))
        if not (np.array_equal(r, c[order]) and np.array_equal(c, r[order]) and np.array_equal(v, v[order])):
            raise DataError("matrix is not symmetric")
