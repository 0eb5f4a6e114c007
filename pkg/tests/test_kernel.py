import struct

import numpy as np
import pytest
from conftest import make_image
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import csr_spmm

from semspmm.errors import FormatError, ShapeError
from semspmm.kernel import KernelConfig, TaskQueue, band_offsets, inner_product_accumulate, mul_tile_rows, spmm
from semspmm.scsr import TiledSparseMatrix, ValueKind, header_bytes


def _matrix(rows, cols, vals=None, *, shape, t, kind=ValueKind.BINARY):
    return TiledSparseMatrix.from_bytes(make_image(rows, cols, vals, shape=shape, tile_size=t, value_kind=kind))


def test_identity_passes_through(rng):
    n = 50
    m = _matrix(np.arange(n), np.arange(n), shape=(n, n), t=8)
    b = rng.standard_normal((n, 3))
    assert np.array_equal(spmm(m, b), b)


def test_hand_product():
    m = _matrix([0, 1, 2, 3], [1, 0, 3, 3], shape=(4, 4), t=2)
    assert spmm(m, np.array([1.0, 2.0, 3.0, 4.0])).ravel().tolist() == [2.0, 1.0, 4.0, 4.0]


def test_toy_vector(toy):
    x = np.arange(16, dtype=float)
    y = spmm(toy, x).ravel()
    expect = np.zeros(16)
    expect[0], expect[5] = 1 + 3, 2
    assert np.array_equal(y, expect)


def test_inner_product_accumulate():
    out = np.array([4.0])
    inner_product_accumulate(1.0, np.array([3.0]), out)
    assert out.tolist() == [7.0]
    out = np.zeros(8)
    inner_product_accumulate(2.0, np.ones(8), out)
    assert out.tolist() == [2.0] * 8


def test_inner_product_matches_scalar_loop(rng):
    for _ in range(200):
        p = int(rng.integers(1, 33))
        nz, a, b = rng.standard_normal(), rng.standard_normal(p), rng.standard_normal(p)
        ref = b.copy()
        for q in range(p):
            ref[q] = ref[q] + nz * a[q]
        inner_product_accumulate(nz, a, b)
        assert np.array_equal(b, ref)


@pytest.mark.parametrize("kind", list(ValueKind))
@pytest.mark.parametrize("threads", [1, 3])
def test_matches_csr_oracle(rng, kind, threads):
    n, m_cols, k = 300, 260, 4000
    r, c = rng.integers(0, n, k), rng.integers(0, m_cols, k)
    key = np.unique(r * m_cols + c)
    r, c = key // m_cols, key % m_cols
    v = rng.standard_normal(len(r)) if kind else np.ones(len(r))
    m = _matrix(r, c, v, shape=(n, m_cols), t=32, kind=kind)
    b = rng.standard_normal((m_cols, 5))
    got = spmm(m, b, KernelConfig(cache_bytes=4096, threads=threads))
    ref = csr_spmm(n, r, c, v, b)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)
    assert np.array_equal(got, spmm(m, b))


def test_empty_tile_row_leaves_zeros():
    m = _matrix([40], [1], shape=(48, 48), t=16)
    out = spmm(m, np.ones((48, 2)))
    assert out[:32].max() == 0 and out[40].tolist() == [1.0, 1.0]


def test_visit_order_within_super_blocks():
    # 2 tile rows x 5 tile columns, every tile populated; two tiles per block
    t, n = 4, 20
    r, c = np.meshgrid(np.arange(0, 8, t), np.arange(0, n, t), indexing="ij")
    m = _matrix(r.ravel(), c.ravel(), shape=(8, n), t=t)
    hdr = m.header
    off, length = m.band_range(0, 2)
    trace = np.full((16, 2), -1, np.int64)
    out = np.zeros((8, 1))
    visited = mul_tile_rows(m.data[off:off + length], band_offsets(hdr, 0, 2), 0, hdr, np.ones((n, 1)), out, 2,
                            trace)
    assert visited == 10
    assert [tuple(x) for x in trace[:10]] == [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (0, 3), (1, 2), (1, 3),
                                              (0, 4), (1, 4)]


def test_num_trs_rule():
    cfg = KernelConfig(cache_bytes=1 << 20)
    assert cfg.num_trs(p=1, t=16384) == 4
    assert cfg.num_trs(p=64, t=16384) == 1
    assert cfg.num_trs(p=1, t=1024, num_tile_rows=10) == 10
    with pytest.raises(ValueError):
        KernelConfig(threads=0)


def test_task_queue_switches_to_single_rows():
    q = TaskQueue(10, 4, threshold=3, record=True)
    tasks = []
    while (t := q.get()) is not None:
        tasks.append(t)
    assert tasks == [(0, 4), (4, 8), (8, 9), (9, 10)]
    assert q.remaining == 0 and q.get() is None


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(1, 9), st.integers(1, 8))
def test_task_queue_covers_once(total, size, threshold):
    q = TaskQueue(total, size, threshold)
    seen = []
    while (t := q.get()) is not None:
        seen.extend(range(*t))
    assert seen == list(range(total))


def test_shape_errors(toy):
    with pytest.raises(ShapeError):
        spmm(toy, np.ones((15, 1)))
    with pytest.raises(ShapeError):
        spmm(toy, np.ones((16, 0)))
    with pytest.raises(ShapeError):
        spmm(toy, np.ones((16, 2)), out=np.zeros((16, 3)))


def test_corrupt_column_id_raises(toy):
    blob = bytearray(toy.data)
    hb = header_bytes(1)
    blob[hb + 16 + 2:hb + 16 + 4] = struct.pack("<H", 31)
    with pytest.raises(FormatError):
        spmm(TiledSparseMatrix.from_bytes(bytes(blob)), np.ones((16, 1)))


def test_corrupt_tile_column_raises(toy):
    blob = bytearray(toy.data)
    blob[header_bytes(1):header_bytes(1) + 4] = struct.pack("<I", 5)
    with pytest.raises(FormatError):
        spmm(TiledSparseMatrix.from_bytes(bytes(blob)), np.ones((16, 1)))
