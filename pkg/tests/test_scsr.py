import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semspmm.convert import encode_matrix
from semspmm.errors import FormatError
from semspmm.scsr import (ROW_FLAG, MatrixHeader, TiledSparseMatrix, TileStats, ValueKind, dcsc_size, decode_tile,
                          encode_tile, header_bytes, iter_records, matrix_stats, parse_record, scsr_size)


def test_toy_layout(toy):
    # one tile: row 0 has two entries (SCSR), row 5 has one (COO)
    assert toy.nbytes == header_bytes(1) + 16 + 2 * 3 + 4
    (i, rec), = list(toy.tiles())
    assert (i, rec.tile_col_id, rec.nnz_scsr, rec.num_coo) == (0, 0, 2, 1)
    assert rec.index.tolist() == [ROW_FLAG | 0, 1, 3, 5, 2]
    r, c, v = decode_tile(rec, 16)
    assert list(zip(r, c)) == [(0, 1), (0, 3), (5, 2)]
    assert v.tolist() == [1.0, 1.0, 1.0]


def test_toy_stats(toy):
    st = matrix_stats(toy)
    assert (st.total.nnr, st.total.nnc, st.nnz) == (2, 3, 3)
    assert st.file_bytes == toy.nbytes == st.header_bytes + st.record_bytes


def test_header_roundtrip():
    hdr = MatrixHeader(100, 70, 32, ValueKind.FLOAT64, [(header_bytes(4), 0)] * 0)
    hdr.tile_row_index = [(header_bytes(4) + 10 * i, 10) for i in range(4)]
    blob = hdr.pack()
    assert len(blob) == hdr.nbytes == 44 + 16 * 4
    back = MatrixHeader.unpack(blob[:44], blob[44:])
    assert (back.n_rows, back.n_cols, back.tile_size, back.value_kind) == (100, 70, 32, ValueKind.FLOAT64)
    assert back.tile_row_index == hdr.tile_row_index


@pytest.mark.parametrize("t", [0, 3, 65536])
def test_bad_tile_size(t):
    with pytest.raises(ValueError):
        MatrixHeader(10, 10, t)


def test_weighted_tile_value_order():
    rec = encode_tile([0, 2, 2], [4, 0, 1], [9.0, 1.0, 2.0], tile_col_id=3, value_kind=ValueKind.FLOAT64)
    p = parse_record(rec, 0, ValueKind.FLOAT64)
    # SCSR values first (row 2), then the COO value (row 0)
    assert p.values.tolist() == [1.0, 2.0, 9.0]
    r, c, v = decode_tile(p, 16, value_kind=ValueKind.FLOAT64)
    assert list(zip(r, c, v)) == [(0, 4, 9.0), (2, 0, 1.0), (2, 1, 2.0)]
    assert p.record_len == len(rec) == 16 + 2 * (1 + 2 + 2) + 24


def test_encode_requires_sorted_unique():
    with pytest.raises(FormatError):
        encode_tile([1, 0], [0, 0])
    with pytest.raises(FormatError):
        encode_tile([0, 0], [1, 1])
    with pytest.raises(FormatError):
        encode_tile([40000], [0])
    assert encode_tile([], []) == b""


@st.composite
def tiles(draw):
    t = draw(st.sampled_from([1, 2, 16, 128, 32768]))
    n = draw(st.integers(0, min(t * t, 300)))
    ids = draw(st.lists(st.integers(0, t * t - 1), min_size=n, max_size=n, unique=True))
    ids = np.sort(np.array(ids, dtype=np.int64))
    vals = draw(st.lists(st.floats(-1e6, 1e6), min_size=len(ids), max_size=len(ids)))
    return t, ids // t, ids % t, np.array(vals)


@settings(max_examples=150, deadline=None)
@given(tiles(), st.sampled_from(list(ValueKind)))
def test_tile_roundtrip(tile, kind):
    t, rows, cols, vals = tile
    blob = encode_tile(rows, cols, vals, tile_col_id=7, value_kind=kind)
    if len(rows) == 0:
        assert blob == b""
        return
    rec = parse_record(blob, 0, kind)
    r, c, v = decode_tile(rec, t, value_kind=kind)
    assert np.array_equal(r, rows) and np.array_equal(c, cols)
    assert np.array_equal(v, vals if kind else np.ones(len(rows)))
    # index bytes follow the size law: 2 per distinct row, 2 per non-zero
    nnr = len(np.unique(rows))
    assert rec.index_bytes == 2 * nnr + 2 * len(rows)
    assert rec.record_len == 16 + rec.index_bytes + kind.width * len(rows)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 70), st.integers(1, 70), st.sampled_from([1, 4, 16]), st.integers(0, 2**31))
def test_matrix_roundtrip(n_rows, n_cols, t, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n_rows * n_cols // 2 + 1))
    r = rng.integers(0, n_rows, k)
    c = rng.integers(0, n_cols, k)
    m = TiledSparseMatrix.from_bytes(encode_matrix(r, c, shape=(n_rows, n_cols), tile_size=t))
    rr, cc, _ = m.to_coo()
    key = np.unique(r * n_cols + c)
    assert np.array_equal(rr * n_cols + cc, key)
    assert m.header.num_tile_rows == -(-n_rows // t)


def _corrupt(blob, at, data):
    b = bytearray(blob)
    b[at:at + len(data)] = data
    return bytes(b)


def test_detects_corruption(toy):
    blob = bytes(toy.data)
    hb = header_bytes(1)
    with pytest.raises(FormatError):
        TiledSparseMatrix.from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        TiledSparseMatrix.from_bytes(blob[:-2])
    with pytest.raises(FormatError):
        TiledSparseMatrix.from_bytes(blob[:30])
    # first index entry is no longer a row header
    bad = _corrupt(blob, hb + 16, struct.pack("<H", 1))
    rec = parse_record(np.frombuffer(bad, np.uint8)[hb:], 0)
    with pytest.raises(FormatError):
        decode_tile(rec, 16)
    # column id beyond the tile
    bad = _corrupt(blob, hb + 16 + 2, struct.pack("<H", 20))
    with pytest.raises(FormatError):
        decode_tile(parse_record(np.frombuffer(bad, np.uint8)[hb:], 0), 16)
    # record length runs past the tile row
    bad = _corrupt(blob, hb + 4, struct.pack("<I", 999))
    with pytest.raises(FormatError):
        list(iter_records(np.frombuffer(bad, np.uint8)[hb:]))


def test_single_entry_scsr_row_rejected():
    blob = encode_tile([0, 0], [1, 2])
    # drop one column and fake the counts: a header followed by a single column
    bad = struct.pack("<IIII", 0, 16 + 4, 1, 0) + struct.pack("<HH", ROW_FLAG, 1)
    assert len(blob) == 16 + 6
    with pytest.raises(FormatError):
        decode_tile(bad, 16)


def test_size_formulas():
    s = TileStats(nnr=3, nnc=4, nnz=10, c=8)
    assert scsr_size(s) == 2 * 3 + 10 * 10
    assert dcsc_size(s) == 8 * 4 + 10 * 10
    # equal row/column counts, one entry each: the 0.4 lower end
    assert scsr_size(TileStats(5, 5, 5, 0)) / dcsc_size(TileStats(5, 5, 5, 0)) == pytest.approx(0.4)


def test_tile_columns_ascending_in_file():
    rng = np.random.default_rng(1)
    r, c = rng.integers(0, 64, 500), rng.integers(0, 64, 500)
    m = TiledSparseMatrix.from_bytes(encode_matrix(r, c, shape=(64, 64), tile_size=8))
    last = {}
    for i, rec in m.tiles():
        assert rec.tile_col_id > last.get(i, -1)
        last[i] = rec.tile_col_id


def test_partial_edge_tiles():
    # 20 x 10 matrix with 16-wide tiles: the last tile row is 4 rows tall
    m = TiledSparseMatrix.from_bytes(encode_matrix([19, 3], [9, 0], shape=(20, 10), tile_size=16))
    assert m.header.row_limit(1) == 4 and m.header.col_limit(0) == 10
    rr, cc, _ = m.to_coo()
    assert list(zip(rr, cc)) == [(3, 0), (19, 9)]


def test_formula_arithmetic_binary():
    assert scsr_size(TileStats(nnr=3, nnc=0, nnz=10, c=0)) == 26
    assert dcsc_size(TileStats(nnr=0, nnc=3, nnz=10, c=0)) == 44


def test_single_coo_entry():
    rec = parse_record(encode_tile([7], [7]), 0)
    assert (rec.nnz_scsr, rec.num_coo) == (0, 1)
    r, c, v = decode_tile(rec, 16)
    assert list(zip(r, c, v)) == [(7, 7, 1.0)]


def test_empty_matrix():
    m = TiledSparseMatrix.from_bytes(encode_matrix([], [], shape=(16, 16), tile_size=16))
    assert m.header.num_tile_rows == 1 and list(m.tiles()) == []
    st = matrix_stats(m)
    assert (st.nnz, st.total.nnr, st.total.nnc, st.record_bytes) == (0, 0, 0, 0)


def test_rmat_roundtrip_and_size_ratio():
    from semspmm.generators import RmatParams, gen_rmat
    p = RmatParams(scale=12, edge_factor=3, seed=11)
    u, v = gen_rmat(p)
    raw_u, raw_v = np.r_[u, u[:50]], np.r_[v, v[:50]]
    m = TiledSparseMatrix.from_bytes(encode_matrix(raw_u, raw_v, shape=(p.n, p.n), tile_size=256))
    rr, cc, _ = m.to_coo()
    oracle = sorted(set(zip(raw_u.tolist(), raw_v.tolist())))
    assert list(zip(rr.tolist(), cc.tolist())) == oracle
    st = matrix_stats(m)
    assert sum(t.stats.nnz for t in st.tiles) == len(oracle) == 12288
    # with nnr = nnc the SCSR/DCSC ratio is in [0.4, 1)
    for t in st.tiles:
        s = TileStats(t.stats.nnr, t.stats.nnr, t.stats.nnz, 0)
        assert 0.4 <= scsr_size(s) / dcsc_size(s) < 1
