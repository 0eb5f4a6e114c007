import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semspmm.dense import (DENSE_HEADER_BYTES, DenseMatrix, VerticalPartitionPlan, create_dense, default_row_interval,
                           frobenius_norm, hadamard_scale, load_vertical_partition, mgs_qr, multiply, read_dense,
                           read_dense_header, transpose_multiply, write_dense, write_dense_block)
from semspmm.errors import BudgetError, FormatError, ShapeError
from semspmm.storage import FileStorage, MemoryStorage, MemoryTracker


def test_row_interval_default():
    assert default_row_interval(16384) == 65536
    assert default_row_interval(3 * 8) == 128
    d = DenseMatrix(np.zeros((300, 2)), tile_size=16, num_domains=3)
    assert d.row_interval_size == 64 and d.num_intervals == 5
    assert d.interval(130) == 2 and d.interval_rows(4) == (256, 300)
    assert d.interval_map == [0, 1, 2, 0, 1]
    with pytest.raises(ValueError):
        DenseMatrix(np.zeros((4, 1)), row_interval_size=24, tile_size=8)


def test_plan_ranges():
    plan = VerticalPartitionPlan(32, 5)
    assert plan.num_passes == 7
    assert plan.ranges[0] == (0, 5) and plan.ranges[-1] == (30, 32)
    assert VerticalPartitionPlan.for_budget(1000, 32, 8000 * 4 + 7).cols_per_pass == 4
    with pytest.raises(BudgetError):
        VerticalPartitionPlan.for_budget(1000, 32, 7999)


@pytest.mark.parametrize("storage_cls", [MemoryStorage, FileStorage])
def test_image_roundtrip_and_partitions(storage_cls, tmp_path, rng):
    st = storage_cls()
    path = str(tmp_path / "d.dense")
    a = rng.standard_normal((37, 9))
    write_dense(st, path, a)
    assert st.size(path) == DENSE_HEADER_BYTES + a.nbytes
    assert read_dense_header(st, path) == (37, 9)
    assert np.array_equal(read_dense(st, path), a)
    st.reset_counters()
    part = load_vertical_partition(st, path, (2, 5), block_rows=8)
    assert np.array_equal(part.data, a[:, 2:5]) and part.col_offset == 2
    # only the requested columns are transferred
    assert st.counters.total_read(path) == DENSE_HEADER_BYTES + 37 * 3 * 8


def test_block_writes_into_columns(rng):
    st = MemoryStorage()
    create_dense(st, "o", 10, 6)
    a = rng.standard_normal((10, 6))
    write_dense_block(st, "o", 6, 0, 0, a[:4, :2])
    write_dense_block(st, "o", 6, 4, 0, a[4:, :2])
    write_dense_block(st, "o", 6, 0, 2, a[:, 2:])
    assert np.array_equal(read_dense(st, "o"), a)


def test_bad_images():
    st = MemoryStorage()
    st.put("x", b"nope")
    with pytest.raises(FormatError):
        read_dense_header(st, "x")
    write_dense(st, "y", np.ones((3, 3)))
    st.put("y", st.getvalue("y")[:-8])
    with pytest.raises(FormatError, match="truncated"):
        read_dense(st, "y")
    write_dense(st, "z", np.ones((3, 3)))
    with pytest.raises(ShapeError):
        load_vertical_partition(st, "z", (2, 5))


def test_partition_budget_tracking():
    st = MemoryStorage()
    write_dense(st, "d", np.ones((100, 4)))
    tr = MemoryTracker(limit=100 * 8 * 2)
    load_vertical_partition(st, "d", (0, 2), tracker=tr)
    assert tr.current == 1600
    with pytest.raises(BudgetError):
        load_vertical_partition(st, "d", (0, 3), budget=2000)


def test_small_algebra(rng):
    a, b = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    assert np.allclose(transpose_multiply(a, b), a.T @ b)
    c = rng.standard_normal((3, 2))
    assert np.allclose(multiply(a, c), a @ c)
    with pytest.raises(ShapeError):
        transpose_multiply(a, b[:5])
    x = np.ones((2, 2))
    assert np.array_equal(hadamard_scale(x, np.full((2, 2), 2.0), np.full((2, 2), 4.0), eps=0.0), np.full((2, 2), 0.5))
    assert hadamard_scale(x, np.zeros((2, 2)), np.zeros((2, 2))).max() == 0.0
    assert frobenius_norm([[3.0, 4.0]]) == 5.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**31))
def test_mgs_qr(n, b, seed):
    b = min(b, n)
    a = np.random.default_rng(seed).standard_normal((n, b))
    q, r, kept = mgs_qr(a)
    assert len(kept) == b
    assert np.allclose(q.T @ q, np.eye(b), atol=1e-10)
    assert np.allclose(q @ r, a, atol=1e-9)


def test_mgs_qr_drops_dependent_columns():
    a = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0], [1.0, 2.0, 0.0]])
    q, r, kept = mgs_qr(a)
    assert kept == [0, 2] and q.shape == (3, 2)
    assert np.allclose(q @ r, a)
