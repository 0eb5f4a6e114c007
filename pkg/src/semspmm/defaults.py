"""Every tunable default in one place.

=====================  ==============  ==========================================
name                   value           meaning
=====================  ==============  ==========================================
TILE_SIZE              16384           rows = columns per sparse tile
MAX_TILE_SIZE          32768           15-bit tile-relative ids
CACHE_BYTES            512 KiB         per-worker cache budget for super blocks
MERGE_BYTES            8 MiB           minimum size of a non-final merged write
THREAD_BUFFER_BYTES    64 MiB          per-thread I/O buffer budget (epsilon)
FIXED_OVERHEAD_BYTES   32 MiB          slack allowed by the memory ceiling
DAMPING                0.85            PageRank damping factor
PAGERANK_ITERS         30              PageRank iterations
EIGEN_TOL              1e-6            relative residual for the eigensolver
STAGNATION_ITERS       50              eigensolver iterations without progress
NMF_EPS                1e-12           denominator guard in multiplicative updates
NMF_RANK               16              default factorization rank
CONVERT_MEM_EDGES      16 Mi edges     edges sorted in memory before spilling
=====================  ==============  ==========================================
"""

KiB = 1 << 10
MiB = 1 << 20

TILE_SIZE = 16384
MAX_TILE_SIZE = 32768
CACHE_BYTES = 512 * KiB
MERGE_BYTES = 8 * MiB
THREAD_BUFFER_BYTES = 64 * MiB
FIXED_OVERHEAD_BYTES = 32 * MiB
DENSE_ELEM_BYTES = 8

DAMPING = 0.85
PAGERANK_ITERS = 30
EIGEN_TOL = 1e-6
EIGEN_MAX_ITERS = 5000
STAGNATION_ITERS = 50
NMF_EPS = 1e-12
NMF_RANK = 16
CONVERT_MEM_EDGES = 16 * MiB
