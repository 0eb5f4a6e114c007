"""Seeded synthetic graphs: R-MAT and a stochastic block model.

Both return ``(u, v)`` int64 arrays sorted by ``(u, v)``, free of self
loops and duplicates.  Undirected graphs list each edge once with ``u < v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SCALE = 30
REDRAW_CAP = 10


@dataclass(frozen=True)
class RmatParams:
    scale: int
    edge_factor: int = 16
    a: float = 0.57
    b: float = 0.19
    c: float = 0.19
    d: float = 0.05
    seed: int = 0
    directed: bool = True

    def __post_init__(self):
        if not 0 <= self.scale <= MAX_SCALE:
            raise ValueError(f"scale must lie in [0, {MAX_SCALE}], got {self.scale}")
        if self.edge_factor <= 0:
            raise ValueError("edge_factor must be positive")
        probs = (self.a, self.b, self.c, self.d)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"quadrant probabilities {probs} must be nonnegative and sum to 1")

    @property
    def n(self) -> int:
        return 1 << self.scale

    @property
    def target_edges(self) -> int:
        return self.n * self.edge_factor


def rmat_quadrants(rng, shape, a=0.57, b=0.19, c=0.19) -> np.ndarray:
    """Draw quadrant ids 0..3 (top-left, top-right, bottom-left, bottom-right)."""
    x = rng.random(shape)
    return (x >= a).astype(np.int8) + (x >= a + b) + (x >= a + b + c)


def _rmat_draw(rng, count, p: RmatParams):
    q = rmat_quadrants(rng, (count, p.scale), p.a, p.b, p.c)
    weights = np.int64(1) << np.arange(p.scale - 1, -1, -1, dtype=np.int64)
    u = ((q >> 1) & 1).astype(np.int64) @ weights
    v = (q & 1).astype(np.int64) @ weights
    return u, v


def _canonical(u, v, n, directed):
    keep = u != v
    u, v = u[keep], v[keep]
    if not directed:
        u, v = np.minimum(u, v), np.maximum(u, v)
    key = np.unique(u * n + v)
    return key // n, key % n


def gen_rmat(params: RmatParams):
    """R-MAT edges; draws again until ``n * edge_factor`` distinct edges exist.

    Redrawing stops after ``REDRAW_CAP`` times the target number of draws,
    so saturated tiny graphs return fewer edges.
    """
    rng = np.random.default_rng(params.seed)
    n, target = params.n, params.target_edges
    keys = np.empty(0, np.int64)
    drawn = 0
    while len(keys) < target and drawn < REDRAW_CAP * target:
        batch = min(max(target - len(keys), 1024), REDRAW_CAP * target - drawn)
        u, v = _rmat_draw(rng, batch, params)
        drawn += batch
        u, v = _canonical(u, v, n, params.directed)
        keys = np.union1d(keys, u * n + v)
    if len(keys) > target:
        # keep a seeded subset so the count is exact
        keys = np.sort(rng.choice(keys, target, replace=False))
    return keys // n, keys % n


@dataclass(frozen=True)
class SbmParams:
    n: int
    num_clusters: int
    num_edges: int
    in_out_ratio: float = 1.0
    ordering: str = "clustered"
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_clusters <= self.n:
            raise ValueError("need 2 <= num_clusters <= n")
        if self.in_out_ratio <= 0:
            raise ValueError("in_out_ratio must be positive")
        if self.ordering not in ("clustered", "unclustered"):
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @property
    def cluster_size(self) -> int:
        return self.n // self.num_clusters

    @property
    def intra_probability(self) -> float:
        return self.in_out_ratio / (1.0 + self.in_out_ratio)


def sbm_clusters(p: SbmParams) -> np.ndarray:
    """Cluster of every vertex in clustered order; the remainder joins the last cluster."""
    return np.minimum(np.arange(p.n) // p.cluster_size, p.num_clusters - 1)


def sbm_permutation(p: SbmParams) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence(p.seed).spawn(2)[1]).permutation(p.n)


def gen_sbm(params: SbmParams, ordering: str | None = None):
    """Undirected SBM edges drawn one at a time.

    Each draw picks ``u`` uniformly, then with probability ``r / (1 + r)``
    a partner inside ``u``'s cluster and otherwise one outside it.  The
    unclustered ordering relabels the clustered graph with a seeded
    permutation.
    """
    ordering = ordering or params.ordering
    rng = np.random.default_rng(np.random.SeedSequence(params.seed).spawn(2)[0])
    n, k, s = params.n, params.num_clusters, params.cluster_size
    m = params.num_edges
    start = np.arange(k) * s
    size = np.full(k, s)
    size[-1] = n - start[-1]

    u = rng.integers(0, n, m)
    cu = np.minimum(u // s, k - 1)
    intra = rng.random(m) < params.intra_probability
    x = rng.random(m)
    v = np.empty(m, np.int64)
    v[intra] = start[cu[intra]] + (x[intra] * size[cu[intra]]).astype(np.int64)
    out = ~intra
    # index into the vertices outside u's cluster, then skip over the cluster
    r = (x[out] * (n - size[cu[out]])).astype(np.int64)
    v[out] = np.where(r < start[cu[out]], r, r + size[cu[out]])
    if ordering == "unclustered":
        perm = sbm_permutation(params)
        u, v = perm[u], perm[v]
    return _canonical(u, v, n, directed=False)
