"""Semi-external-memory sparse x dense matrix multiplication."""

__version__ = "0.1.0"

from .errors import BudgetError, DataError, FormatError, SemSpmmError, ShapeError, StagnationError
from .kernel import KernelConfig, spmm
from .scsr import TiledSparseMatrix, ValueKind
from .sem import IoPlan, predicted_io, spmm_large_dense, spmm_sem
from .storage import FileStorage, MemoryStorage, MemoryTracker

__all__ = ["BudgetError", "DataError", "FileStorage", "FormatError", "IoPlan", "KernelConfig", "MemoryStorage",
           "MemoryTracker", "SemSpmmError", "ShapeError", "StagnationError", "TiledSparseMatrix", "ValueKind",
           "predicted_io", "spmm", "spmm_large_dense", "spmm_sem"]
