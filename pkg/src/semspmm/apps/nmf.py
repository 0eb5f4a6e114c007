"""Nonnegative matrix factorisation ``A ~ W H`` by multiplicative updates.

Each iteration needs two SpMMs, ``A^T W`` (for ``W^T A``) and ``A H^T``.
The factors are multiplied ``mem_cols`` columns at a time, which models a
memory budget too small for the full width; each output column is produced
by exactly one pass, so the trajectory does not depend on ``mem_cols``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..defaults import NMF_EPS, NMF_RANK
from ..dense import hadamard_scale, transpose_multiply
from ..errors import DataError, ShapeError
from .operator import SparseOperator
from .trace import Trace


@dataclass
class NmfState:
    W: np.ndarray
    H: np.ndarray
    objective: list = field(default_factory=list)
    mem_cols: int | None = None
    trace: Trace = field(default_factory=Trace)

    @property
    def rank(self) -> int:
        return self.W.shape[1]


def init_factors(n: int, m: int, k: int, seed: int = 0):
    """Uniform(0, 1) factors from a seeded generator: ``W`` first, then ``H``."""
    rng = np.random.default_rng(seed)
    return rng.random((n, k)), rng.random((k, m))


def objective(a_sq: float, W, H, AHt) -> float:
    """``||A - W H||_F`` from ``||A||^2``, ``W`` and ``A H^T``; no dense n x m product."""
    sq = a_sq - 2.0 * float(np.sum(W * AHt)) + float(np.sum(transpose_multiply(W, W) * (H @ H.T)))
    return float(np.sqrt(max(sq, 0.0)))


def update_h(W, H, WtA, eps: float = NMF_EPS):
    return hadamard_scale(H, WtA, transpose_multiply(W, W) @ H, eps)


def update_w(W, H, AHt, eps: float = NMF_EPS):
    return hadamard_scale(W, AHt, W @ (H @ H.T), eps)


def nmf(A: SparseOperator, At: SparseOperator, k: int = NMF_RANK, iters: int = 50, *,
        mem_cols: int | None = None, seed: int = 0, eps: float = NMF_EPS, init=None) -> NmfState:
    """Run ``iters`` rounds of H then W updates; record the objective after each round."""
    if k <= 0:
        raise ValueError(f"rank must be positive, got {k}")
    n, m = A.shape
    if At.shape != (m, n):
        raise ShapeError(f"transpose image is {At.shape}, expected {(m, n)}")
    if mem_cols is not None and mem_cols < 1:
        raise ValueError(f"mem_cols must be positive, got {mem_cols}")
    a_sq, lo = A.scan_values()
    if lo < 0:
        raise DataError(f"matrix has a negative entry ({lo})")
    W, H = init_factors(n, m, k, seed) if init is None else (np.array(init[0], float), np.array(init[1], float))
    if W.shape != (n, k) or H.shape != (k, m):
        raise ShapeError(f"initial factors {W.shape}, {H.shape} do not match {n}x{m}, k={k}")
    st = NmfState(W, H, mem_cols=mem_cols)
    for it in range(1, iters + 1):
        WtA = At.matmul(st.W, mem_cols).T
        st.H = update_h(st.W, st.H, WtA, eps)
        AHt = A.matmul(np.ascontiguousarray(st.H.T), mem_cols)
        st.W = update_w(st.W, st.H, AHt, eps)
        f = objective(a_sq, st.W, st.H, AHt)
        st.objective.append(f)
        st.trace.add(it, "objective", f)
    return st
