"""Tiled SCSR+COO sparse matrix image.

File layout (all integers little-endian)::

    header   magic "SCSRCOO\\0" | version u32 | n_rows u64 | n_cols u64
             | tile_size u32 | value_kind u32 | num_tile_rows u64
    index    num_tile_rows x (byte_offset u64, byte_length u64)
    records  tile rows back to back; inside a tile row, one record per
             non-empty tile in ascending tile-column order

A tile record is a 16-byte header ``(tile_col_id, record_len, nnz_scsr,
num_coo)`` (u32 each), the index region and the value region.  The index
region holds 16-bit entries: every row with two or more non-zeros is a row
header (MSB set, low 15 bits = tile-relative row) followed by its column ids
(MSB clear); rows with exactly one non-zero follow as ``(row, col)`` COO
pairs.  Values (binary64) come in the same order: SCSR entries, then COO.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .defaults import MAX_TILE_SIZE, TILE_SIZE
from .errors import FormatError

MAGIC = b"SCSRCOO\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIQQIIQ")
_RECORD = struct.Struct("<IIII")
RECORD_HEADER_BYTES = _RECORD.size
ROW_FLAG = 0x8000
ID_MASK = 0x7FFF


class ValueKind(IntEnum):
    BINARY = 0
    FLOAT64 = 1

    @property
    def width(self) -> int:
        return 0 if self is ValueKind.BINARY else 8


def check_tile_size(t: int) -> int:
    if t <= 0 or t & (t - 1) or t > MAX_TILE_SIZE:
        raise ValueError(f"tile size must be a power of two <= {MAX_TILE_SIZE}, got {t}")
    return t


@dataclass
class MatrixHeader:
    n_rows: int
    n_cols: int
    tile_size: int = TILE_SIZE
    value_kind: ValueKind = ValueKind.BINARY
    tile_row_index: list = field(default_factory=list)
    version: int = VERSION

    def __post_init__(self):
        check_tile_size(self.tile_size)
        self.value_kind = ValueKind(self.value_kind)

    @property
    def num_tile_rows(self) -> int:
        return -(-self.n_rows // self.tile_size)

    @property
    def num_tile_cols(self) -> int:
        return -(-self.n_cols // self.tile_size)

    @property
    def nbytes(self) -> int:
        return header_bytes(self.num_tile_rows)

    def pack(self) -> bytes:
        if len(self.tile_row_index) != self.num_tile_rows:
            raise FormatError("tile-row index length does not match the row count")
        head = _HEADER.pack(MAGIC, self.version, self.n_rows, self.n_cols,
                            self.tile_size, int(self.value_kind), self.num_tile_rows)
        index = np.asarray(self.tile_row_index, dtype="<u8").reshape(-1, 2)
        return head + index.tobytes()

    @classmethod
    def unpack(cls, prefix: bytes, index: bytes) -> "MatrixHeader":
        magic, version, n_rows, n_cols, t, kind, ntr = _HEADER.unpack(prefix[:_HEADER.size])
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        try:
            hdr = cls(n_rows, n_cols, t, ValueKind(kind), version=version)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
        if ntr != hdr.num_tile_rows:
            raise FormatError(f"num_tile_rows {ntr} != ceil({n_rows}/{t})")
        if len(index) != 16 * ntr:
            raise FormatError("truncated tile-row index")
        pairs = np.frombuffer(index, dtype="<u8").reshape(-1, 2).astype(np.int64)
        hdr.tile_row_index = [(int(a), int(b)) for a, b in pairs]
        hdr.validate_index()
        return hdr

    def validate_index(self, file_size: int | None = None):
        pos = self.nbytes
        for i, (off, length) in enumerate(self.tile_row_index):
            if off != pos:
                raise FormatError(f"tile row {i} starts at byte {off}, expected {pos}")
            pos += length
        if file_size is not None and pos != file_size:
            raise FormatError(f"index covers {pos} bytes but the file has {file_size}")

    def row_limit(self, tile_row: int) -> int:
        return min(self.tile_size, self.n_rows - tile_row * self.tile_size)

    def col_limit(self, tile_col: int) -> int:
        return min(self.tile_size, self.n_cols - tile_col * self.tile_size)


def header_bytes(num_tile_rows: int) -> int:
    return _HEADER.size + 16 * num_tile_rows


PREFIX_BYTES = _HEADER.size


# ---------------------------------------------------------------------------
# tile records

def encode_tile(rows, cols, vals=None, *, tile_col_id: int = 0,
                value_kind: ValueKind = ValueKind.BINARY) -> bytes:
    """Encode one tile from tile-relative ``(row, col)`` ids sorted by (row, col).

    ``vals`` is ignored for binary tiles.  Returns ``b""`` for an empty tile.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    nnz = len(rows)
    if nnz == 0:
        return b""
    if rows.max() > ID_MASK or cols.max() > ID_MASK or rows.min() < 0 or cols.min() < 0:
        raise FormatError("tile-relative id does not fit in 15 bits")
    key = rows * (ID_MASK + 1) + cols
    if np.any(np.diff(key) <= 0):
        raise FormatError("tile entries must be strictly ascending by (row, col)")

    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    counts = np.diff(np.r_[starts, nnz])
    in_scsr = np.repeat(counts >= 2, counts)

    scsr_cols = cols[in_scsr]
    scsr_starts = starts[counts >= 2]
    # position of each multi-entry row's first column inside scsr_cols
    first = np.searchsorted(np.flatnonzero(in_scsr), scsr_starts)
    row_heads = rows[scsr_starts] | ROW_FLAG
    scsr = np.insert(scsr_cols, first, row_heads)
    coo = np.column_stack([rows[~in_scsr], cols[~in_scsr]]).ravel()
    index = np.concatenate([scsr, coo]).astype("<u2")

    nnz_scsr = int(in_scsr.sum())
    num_coo = nnz - nnz_scsr
    value_kind = ValueKind(value_kind)
    if value_kind is ValueKind.FLOAT64:
        v = np.asarray(vals, dtype=np.float64)
        values = np.concatenate([v[in_scsr], v[~in_scsr]]).astype("<f8").tobytes()
    else:
        values = b""
    body = index.tobytes() + values
    head = _RECORD.pack(tile_col_id, RECORD_HEADER_BYTES + len(body), nnz_scsr, num_coo)
    return head + body


@dataclass
class TileRecord:
    tile_col_id: int
    record_len: int
    nnz_scsr: int
    num_coo: int
    index: np.ndarray
    values: np.ndarray | None

    @property
    def nnz(self) -> int:
        return self.nnz_scsr + self.num_coo

    @property
    def index_bytes(self) -> int:
        return 2 * len(self.index)

    @property
    def scsr_rows(self) -> int:
        return len(self.index) - self.nnz_scsr - 2 * self.num_coo


def parse_record(buf, offset: int = 0, value_kind: ValueKind = ValueKind.BINARY) -> TileRecord:
    mv = memoryview(buf)
    if offset + RECORD_HEADER_BYTES > len(mv):
        raise FormatError(f"truncated record header at byte {offset}")
    col_id, rec_len, nnz_scsr, num_coo = _RECORD.unpack_from(mv, offset)
    c = ValueKind(value_kind).width
    value_bytes = c * (nnz_scsr + num_coo)
    index_len = rec_len - RECORD_HEADER_BYTES - value_bytes
    if rec_len < RECORD_HEADER_BYTES or offset + rec_len > len(mv):
        raise FormatError(f"record at byte {offset} runs past the end of its tile row")
    if index_len < 0:
        raise FormatError(f"truncated value region in record at byte {offset}")
    if index_len % 2 or index_len < 2 * (nnz_scsr + 2 * num_coo):
        raise FormatError(f"index region of record at byte {offset} has inconsistent length")
    start = offset + RECORD_HEADER_BYTES
    index = np.frombuffer(mv, dtype="<u2", count=index_len // 2, offset=start)
    values = None
    if c:
        values = np.frombuffer(mv, dtype="<f8", count=nnz_scsr + num_coo, offset=start + index_len)
    return TileRecord(col_id, rec_len, nnz_scsr, num_coo, index, values)


def decode_tile(record, t: int, row_limit: int | None = None, col_limit: int | None = None,
                value_kind: ValueKind = ValueKind.BINARY):
    """Decode a tile record into ``(rows, cols, vals)`` sorted by (row, col).

    ``record`` is either a :class:`TileRecord` or raw record bytes.  Binary
    tiles decode to values of 1.0.
    """
    if not isinstance(record, TileRecord):
        record = parse_record(record, 0, value_kind)
    row_limit = t if row_limit is None else row_limit
    col_limit = t if col_limit is None else col_limit
    idx = record.index.astype(np.int64)
    n_scsr_entries = len(idx) - 2 * record.num_coo
    scsr = idx[:n_scsr_entries]
    coo = idx[n_scsr_entries:].reshape(-1, 2)

    is_head = (scsr & ROW_FLAG) != 0
    if len(scsr):
        if not is_head[0]:
            raise FormatError("SCSR region does not start with a row header")
        head_pos = np.flatnonzero(is_head)
        per_row = np.diff(np.r_[head_pos, len(scsr)]) - 1
        if np.any(per_row < 2):
            raise FormatError("SCSR row with fewer than two column entries")
    heads = scsr[is_head] & ID_MASK
    owner = np.cumsum(is_head) - 1
    s_cols = scsr[~is_head]
    s_rows = heads[owner[~is_head]]
    if len(s_cols) != record.nnz_scsr:
        raise FormatError(f"record declares {record.nnz_scsr} SCSR entries, found {len(s_cols)}")
    if np.any(np.diff(heads) <= 0):
        raise FormatError("SCSR row ids are not strictly ascending")
    if len(s_cols) and np.any((np.diff(s_cols) <= 0) & (np.diff(s_rows) == 0)):
        raise FormatError("column ids within an SCSR row are not strictly ascending")
    c_rows, c_cols = coo[:, 0], coo[:, 1]
    if np.any(coo & ROW_FLAG):
        raise FormatError("COO entry carries the row-header flag")
    if np.any(np.diff(c_rows) <= 0):
        raise FormatError("COO row ids are not strictly ascending")
    if len(c_rows) and len(heads) and np.isin(c_rows, heads).any():
        raise FormatError("COO row also appears as an SCSR row")

    rows = np.concatenate([s_rows, c_rows])
    cols = np.concatenate([s_cols, c_cols])
    if len(rows) and (rows.max() >= row_limit or cols.max() >= col_limit):
        raise FormatError(f"tile-relative id out of range for a {row_limit}x{col_limit} tile")
    if record.values is None:
        vals = np.ones(len(rows))
    else:
        vals = np.asarray(record.values, dtype=np.float64)
    order = np.argsort(rows * (ID_MASK + 1) + cols, kind="stable")
    return rows[order], cols[order], vals[order]


def iter_records(buf, value_kind: ValueKind = ValueKind.BINARY):
    """Yield the records of one tile row's bytes in file order."""
    pos = 0
    n = len(buf)
    prev = -1
    while pos < n:
        rec = parse_record(buf, pos, value_kind)
        if rec.tile_col_id <= prev:
            raise FormatError(f"tile columns not ascending at byte {pos} of the tile row")
        prev = rec.tile_col_id
        yield rec
        pos += rec.record_len


# ---------------------------------------------------------------------------
# analytic sizes

@dataclass(frozen=True)
class TileStats:
    nnr: int = 0
    nnc: int = 0
    nnz: int = 0
    c: int = 0

    def __add__(self, other: "TileStats") -> "TileStats":
        return TileStats(self.nnr + other.nnr, self.nnc + other.nnc, self.nnz + other.nnz, self.c)


def scsr_size(stats: TileStats) -> int:
    """Index + value bytes of a tile in SCSR: 2 per row id, 2 + c per non-zero."""
    return 2 * stats.nnr + (2 + stats.c) * stats.nnz


def dcsc_size(stats: TileStats) -> int:
    return (2 + 2 + 4) * stats.nnc + (2 + stats.c) * stats.nnz


# ---------------------------------------------------------------------------
# whole matrices

class TiledSparseMatrix:
    """A sparse image, either fully resident or addressed through storage."""

    def __init__(self, header: MatrixHeader, data: np.ndarray | None = None,
                 path=None, storage=None):
        self.header = header
        self.data = data
        self.path = path
        self.storage = storage

    @classmethod
    def from_bytes(cls, blob) -> "TiledSparseMatrix":
        data = np.frombuffer(blob, dtype=np.uint8)
        hdr = _read_header(lambda off, n: bytes(data[off:off + n]))
        hdr.validate_index(len(data))
        return cls(hdr, data=data)

    @classmethod
    def open(cls, path, storage) -> "TiledSparseMatrix":
        """Read only the header and index; tile rows stay on storage."""
        hdr = _read_header(lambda off, n: storage.read(path, off, n))
        hdr.validate_index(storage.size(path))
        return cls(hdr, path=path, storage=storage)

    @classmethod
    def load(cls, path, storage) -> "TiledSparseMatrix":
        """Read the entire image into memory with one sequential read."""
        return cls.from_bytes(storage.read(path, 0, storage.size(path)))

    @property
    def shape(self):
        return self.header.n_rows, self.header.n_cols

    @property
    def tile_size(self) -> int:
        return self.header.tile_size

    @property
    def value_kind(self) -> ValueKind:
        return self.header.value_kind

    @property
    def num_tile_rows(self) -> int:
        return self.header.num_tile_rows

    @property
    def nbytes(self) -> int:
        idx = self.header.tile_row_index
        return self.header.nbytes + sum(length for _, length in idx)

    def band_range(self, first: int, last: int):
        """Byte ``(offset, length)`` of the contiguous tile rows [first, last)."""
        idx = self.header.tile_row_index
        off = idx[first][0]
        end = idx[last - 1][0] + idx[last - 1][1]
        return off, end - off

    def tile_row_bytes(self, i: int) -> np.ndarray:
        off, length = self.header.tile_row_index[i]
        if self.data is not None:
            return self.data[off:off + length]
        buf = np.empty(length, dtype=np.uint8)
        self.storage.read_into(self.path, off, buf)
        return buf

    def tiles(self):
        """Yield ``(tile_row, TileRecord)`` for every non-empty tile."""
        for i in range(self.num_tile_rows):
            for rec in iter_records(self.tile_row_bytes(i), self.value_kind):
                yield i, rec

    def to_coo(self):
        """Decode the whole matrix to global ``(rows, cols, vals)`` sorted by (row, col)."""
        t = self.tile_size
        parts = []
        for i, rec in self.tiles():
            r, c, v = decode_tile(rec, t, self.header.row_limit(i),
                                  self.header.col_limit(rec.tile_col_id), self.value_kind)
            parts.append((r + i * t, c + rec.tile_col_id * t, v))
        if not parts:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
        rows, cols, vals = (np.concatenate(x) for x in zip(*parts))
        order = np.lexsort((cols, rows))
        return rows[order], cols[order], vals[order]


def _read_header(read) -> MatrixHeader:
    prefix = read(0, PREFIX_BYTES)
    if len(prefix) < PREFIX_BYTES:
        raise FormatError("file too short for a matrix header")
    ntr = _HEADER.unpack(prefix)[-1]
    if ntr > 1 << 40:
        raise FormatError(f"implausible tile-row count {ntr}")
    return MatrixHeader.unpack(prefix, read(PREFIX_BYTES, 16 * ntr))


@dataclass
class TileInfo:
    tile_row: int
    tile_col: int
    stats: TileStats
    record_len: int
    index_bytes: int
    scsr_rows: int
    nnz_scsr: int
    num_coo: int


@dataclass
class MatrixStats:
    tiles: list
    total: TileStats
    header_bytes: int
    file_bytes: int

    @property
    def nnz(self) -> int:
        return self.total.nnz

    @property
    def record_bytes(self) -> int:
        return sum(t.record_len for t in self.tiles)

    @property
    def scsr_bytes(self) -> int:
        return sum(scsr_size(t.stats) for t in self.tiles)

    @property
    def dcsc_bytes(self) -> int:
        return sum(dcsc_size(t.stats) for t in self.tiles)


def matrix_stats(m: TiledSparseMatrix) -> MatrixStats:
    c = m.value_kind.width
    t = m.tile_size
    tiles = []
    total = TileStats(c=c)
    for i, rec in m.tiles():
        rows, cols, _ = decode_tile(rec, t, m.header.row_limit(i),
                                    m.header.col_limit(rec.tile_col_id), m.value_kind)
        st = TileStats(len(np.unique(rows)), len(np.unique(cols)), len(rows), c)
        total = total + st
        tiles.append(TileInfo(i, rec.tile_col_id, st, rec.record_len, rec.index_bytes,
                              rec.scsr_rows, rec.nnz_scsr, rec.num_coo))
    return MatrixStats(tiles, total, m.header.nbytes, m.nbytes)
