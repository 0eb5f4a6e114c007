from .eigen import EigenState, subspace_iteration
from .nmf import NmfState, nmf
from .operator import SparseOperator
from .pagerank import PageRankState, out_degrees, pagerank
from .trace import Trace

__all__ = ["EigenState", "NmfState", "PageRankState", "SparseOperator", "Trace", "nmf", "out_degrees",
           "pagerank", "subspace_iteration"]
