"""Block subspace iteration with Rayleigh-Ritz for the largest-magnitude eigenpairs.

Every iteration costs one SpMM with ``b`` columns.  In ``storage``
residency the basis is written to the storage shim and multiplied through
the on-storage dense path; the arithmetic is the same as in ``memory``
residency, so both give identical Ritz values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..defaults import EIGEN_MAX_ITERS, EIGEN_TOL, STAGNATION_ITERS
from ..dense import mgs_qr, read_dense, transpose_multiply, write_dense
from ..errors import StagnationError
from .operator import SparseOperator
from .trace import Trace

RESIDENCY = ("memory", "storage")
MAX_BLOCK = 64


@dataclass
class EigenState:
    basis: np.ndarray
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    residency: str = "memory"
    iterations: int = 0
    converged: bool = False
    trace: Trace = field(default_factory=Trace)

    @property
    def vectors(self) -> np.ndarray:
        return self.basis[:, :len(self.values)]


def _orthonormal(y, rng):
    """Orthonormal basis of ``y``'s columns, refilled with random directions if rank is lost."""
    b = y.shape[1]
    q, _, kept = mgs_qr(y)
    while len(kept) < b:
        extra = rng.standard_normal((y.shape[0], b - q.shape[1]))
        q, _, kept = mgs_qr(np.hstack([q, extra]))
    return q


def subspace_iteration(op: SparseOperator, k: int, b: int | None = None, *, max_iters: int = EIGEN_MAX_ITERS,
                       tol: float = EIGEN_TOL, residency: str = "memory", mem_cols: int | None = None,
                       seed: int = 0, check_symmetric: bool = True, scratch: str = "eigen",
                       stagnation_iters: int = STAGNATION_ITERS) -> EigenState:
    """Top-``k`` eigenpairs (by magnitude) of a symmetric operator.

    Converged when every one of the ``k`` relative residuals
    ``|A x - theta x| / |theta|`` is below ``tol``.  Raises
    :class:`StagnationError` if the worst residual fails to improve for
    ``stagnation_iters`` iterations.
    """
    b = 2 * k if b is None else b
    n = op.shape[0]
    if k <= 0 or b < k:
        raise ValueError(f"need 0 < k <= b, got k={k}, b={b}")
    if b > min(MAX_BLOCK, n):
        raise ValueError(f"block size {b} exceeds min({MAX_BLOCK}, n={n})")
    if residency not in RESIDENCY:
        raise ValueError(f"residency must be one of {RESIDENCY}")
    if check_symmetric:
        op.check_symmetric()

    rng = np.random.default_rng(seed)
    q = _orthonormal(rng.standard_normal((n, b)), rng)
    st = EigenState(q, residency=residency)
    q_path, y_path = f"{scratch}.q", f"{scratch}.y"
    best, since_best = np.inf, 0
    for it in range(1, max_iters + 1):
        if residency == "storage":
            write_dense(op.storage, q_path, q)
            op.matmul_stored(q_path, y_path, mem_cols)
            y = read_dense(op.storage, y_path)
        else:
            y = op.matmul(q, mem_cols)
        h = transpose_multiply(q, y)
        h = 0.5 * (h + h.T)
        theta, s = np.linalg.eigh(h)
        order = np.argsort(-np.abs(theta), kind="stable")
        theta, s = theta[order], s[:, order]
        x, ax = q @ s, y @ s
        res = np.linalg.norm(ax[:, :k] - x[:, :k] * theta[:k], axis=0)
        scale = np.abs(theta[:k])
        res = np.where(scale > 0, res / np.where(scale > 0, scale, 1.0), res)
        worst = float(res.max())
        st.basis, st.values, st.residuals, st.iterations = x, theta[:k].copy(), res, it
        st.trace.add(it, "max_residual", worst)
        if worst < tol:
            st.converged = True
            break
        if worst < best:
            best, since_best = worst, 0
        else:
            since_best += 1
            if since_best >= stagnation_iters:
                raise StagnationError(f"no residual improvement in {stagnation_iters} iterations "
                                      f"(best {best:.3e}, tol {tol:.1e}) at iteration {it}")
        q = _orthonormal(ax, rng)
    if residency == "storage":
        for p in (q_path, y_path):
            op.storage.remove(p)
    return st
