"""PageRank as repeated SpMV over the transposed adjacency image."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..defaults import DAMPING, PAGERANK_ITERS
from ..errors import ShapeError
from .operator import SparseOperator
from .trace import Trace


@dataclass
class PageRankState:
    rank: np.ndarray
    out_degree: np.ndarray
    damping: float = DAMPING
    redistribute_dangling: bool = True
    iterations: int = 0
    trace: Trace = field(default_factory=Trace)

    @property
    def n(self) -> int:
        return len(self.rank)


def out_degrees(adj_t: SparseOperator) -> np.ndarray:
    """Out-degrees of the forward graph: column counts of its transpose."""
    return adj_t.column_counts()


def pagerank(adj_t: SparseOperator, out_degree, damping: float = DAMPING, iters: int = PAGERANK_ITERS,
             tol: float | None = None, redistribute_dangling: bool = True) -> PageRankState:
    """Iterate ``x <- (1-d)/N + d * A^T (x / L)``.

    Row ``u`` of ``adj_t`` lists the in-neighbours of ``u``.  With
    ``redistribute_dangling`` the rank held by vertices without out-edges is
    spread uniformly; otherwise those vertices contribute nothing.  Stops
    after ``iters`` iterations or once the L1 change drops below ``tol``.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    if out_degree is None:
        raise ValueError("out-degree vector is required")
    n, m = adj_t.shape
    L = np.asarray(out_degree, dtype=np.float64)
    if n != m or L.shape != (n,):
        raise ShapeError(f"need a square matrix and {n} out-degrees, got {adj_t.shape} and {L.shape}")
    dangling = L == 0
    inv_l = np.zeros(n)
    inv_l[~dangling] = 1.0 / L[~dangling]

    st = PageRankState(np.full(n, 1.0 / n), L, damping, redistribute_dangling)
    for it in range(1, iters + 1):
        x = st.rank
        y = adj_t.matmul(x * inv_l)
        base = (1.0 - damping) / n
        if redistribute_dangling:
            base += damping * x[dangling].sum() / n
        new = base + damping * y
        delta = float(np.abs(new - x).sum())
        st.rank, st.iterations = new, it
        st.trace.add(it, "l1_delta", delta)
        st.trace.add(it, "rank_sum", new.sum())
        if tol is not None and delta < tol:
            break
    return st
