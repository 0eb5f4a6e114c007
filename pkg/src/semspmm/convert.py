"""Edge-list / Matrix Market ingestion and conversion to the tiled image.

Conversion reads its source once and writes the image once.  Edge sets that
exceed the in-memory budget are spilled into per-tile-row bucket files and
sorted one tile row at a time.
"""

from __future__ import annotations

import logging
import os
import tempfile
import warnings

import numpy as np

from .defaults import CONVERT_MEM_EDGES, MiB, TILE_SIZE
from .errors import DataError
from .scsr import MatrixHeader, TiledSparseMatrix, ValueKind, check_tile_size, encode_tile, header_bytes

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# text sources

def _parse_block(text: str, ncols: int | None, first_line: int, path):
    """Parse whitespace-separated numeric lines; returns (array, ncols)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(("#", "%"))]
    if not lines:
        return np.empty((0, ncols or 2)), ncols
    if ncols is None:
        ncols = len(lines[0].split())
        if ncols not in (2, 3):
            raise DataError(f"{path}: expected 'u v [w]' lines, got {lines[0]!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        flat = np.fromstring(" ".join(lines), sep=" ")
    if flat.size != ncols * len(lines):
        for k, ln in enumerate(lines):
            parts = ln.split()
            try:
                [float(x) for x in parts]
            except ValueError:
                parts = None
            if parts is None or len(parts) != ncols:
                raise DataError(f"{path}: malformed line {ln!r} near line {first_line + k}")
    return flat.reshape(-1, ncols), ncols


def _as_ids(col, path):
    ids = col.astype(np.int64)
    if np.any(ids != col) or np.any(ids < 0):
        raise DataError(f"{path}: vertex ids must be non-negative integers")
    return ids


def read_edges(storage, path, chunk_size: int = 8 * MiB, meta: dict | None = None):
    """Yield ``(u, v, w)`` array chunks from an edge list or Matrix Market file.

    ``w`` is ``None`` when the source has no weight column.  Matrix Market
    ids are converted to 0-based; symmetric files are expanded, and the
    declared ``shape`` is stored into ``meta`` when one is given.
    """
    carry = b""
    ncols = None
    line_no = 1
    mm = None  # None = undecided, False = edge list, dict = Matrix Market state
    for chunk in storage.iter_chunks(path, chunk_size):
        data = carry + chunk
        cut = data.rfind(b"\n") + 1
        if cut == 0:
            carry = data
            continue
        carry = data[cut:]
        text = data[:cut].decode()
        if mm is None:
            mm, text, ncols = _sniff(text, path)
            if mm and meta is not None:
                meta["shape"] = mm["shape"]
        arr, ncols = _parse_block(text, ncols, line_no, path)
        line_no += text.count("\n")
        if len(arr):
            yield _finish(arr, mm, path)
    if carry.strip():
        text = carry.decode() + "\n"
        if mm is None:
            mm, text, ncols = _sniff(text, path)
            if mm and meta is not None:
                meta["shape"] = mm["shape"]
        arr, ncols = _parse_block(text, ncols, line_no, path)
        if len(arr):
            yield _finish(arr, mm, path)


def _sniff(text: str, path):
    if not text.startswith("%%MatrixMarket"):
        return False, text, None
    lines = text.splitlines(keepends=True)
    banner = lines[0].lower().split()
    if len(banner) < 5 or banner[1] != "matrix" or banner[2] != "coordinate":
        raise DataError(f"{path}: only coordinate Matrix Market files are supported")
    field, symmetry = banner[3], banner[4]
    if field not in ("pattern", "real", "integer") or symmetry not in ("general", "symmetric"):
        raise DataError(f"{path}: unsupported Matrix Market type {field} {symmetry}")
    k = 1
    while k < len(lines) and (lines[k].startswith("%") or not lines[k].strip()):
        k += 1
    if k >= len(lines):
        raise DataError(f"{path}: missing Matrix Market size line")
    rows, cols, nnz = (int(x) for x in lines[k].split())
    state = {"shape": (rows, cols), "nnz": nnz, "pattern": field == "pattern",
             "symmetric": symmetry == "symmetric"}
    ncols = 2 if field == "pattern" else 3
    return state, "".join(lines[k + 1:]), ncols


def _finish(arr, mm, path):
    u = _as_ids(arr[:, 0], path)
    v = _as_ids(arr[:, 1], path)
    w = arr[:, 2].copy() if arr.shape[1] == 3 else None
    if mm:
        u, v = u - 1, v - 1
        if np.any(u < 0) or np.any(v < 0):
            raise DataError(f"{path}: Matrix Market ids are 1-based")
        if mm["symmetric"]:
            off = u != v
            u, v = np.r_[u, v[off]], np.r_[v, u[off]]
            if w is not None:
                w = np.r_[w, w[off]]
    return u, v, w


# ---------------------------------------------------------------------------
# sorting and encoding

def _canonical(rows, cols, vals, value_kind, t):
    """Sort by (tile row, tile col, row, col) and apply the duplicate policy."""
    order = np.lexsort((cols, rows, cols // t, rows // t))
    rows, cols = rows[order], cols[order]
    vals = vals[order] if vals is not None else None
    dup = np.r_[False, (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])]
    if dup.any():
        if value_kind is ValueKind.FLOAT64:
            k = int(np.flatnonzero(dup)[0])
            raise DataError(f"duplicate weighted edge ({rows[k]}, {cols[k]})")
        keep = ~dup
        rows, cols = rows[keep], cols[keep]
        vals = vals[keep] if vals is not None else None
    return rows, cols, vals


def encode_tile_row(rows, cols, vals, tile_row: int, t: int, value_kind: ValueKind) -> bytes:
    """Encode one tile row from entries already in canonical order."""
    if len(rows) == 0:
        return b""
    tc = cols // t
    bounds = np.flatnonzero(np.r_[True, tc[1:] != tc[:-1], True])
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        j = int(tc[a])
        out.append(encode_tile(rows[a:b] - tile_row * t, cols[a:b] - j * t,
                               None if vals is None else vals[a:b],
                               tile_col_id=j, value_kind=value_kind))
    return b"".join(out)


def encode_matrix(rows, cols, vals=None, *, shape, tile_size: int = TILE_SIZE,
                  value_kind: ValueKind = ValueKind.BINARY) -> bytes:
    """Encode global coordinates into a complete image held in memory."""
    value_kind = ValueKind(value_kind)
    n_rows, n_cols = shape
    t = check_tile_size(tile_size)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = _values(vals, len(rows), value_kind)
    _check_range(rows, cols, n_rows, n_cols)
    rows, cols, vals = _canonical(rows, cols, vals, value_kind, t)
    hdr = MatrixHeader(n_rows, n_cols, t, value_kind)
    bodies = _encode_sorted(rows, cols, vals, hdr)
    hdr.tile_row_index = _index_for(bodies, hdr)
    return hdr.pack() + b"".join(bodies)


def _values(vals, n, value_kind):
    if value_kind is ValueKind.BINARY:
        return None
    if vals is None:
        return np.ones(n)
    vals = np.asarray(vals, dtype=np.float64)
    if len(vals) != n:
        raise DataError("value array length differs from the edge count")
    return vals


def _check_range(rows, cols, n_rows, n_cols):
    if len(rows) == 0:
        return
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DataError(f"edge ({rows[k]}, {cols[k]}) out of range for a {n_rows}x{n_cols} matrix")


def _encode_sorted(rows, cols, vals, hdr):
    t = hdr.tile_size
    tr = rows // t
    cuts = np.searchsorted(tr, np.arange(hdr.num_tile_rows + 1))
    return [encode_tile_row(rows[a:b], cols[a:b], None if vals is None else vals[a:b], i, t, hdr.value_kind)
            for i, (a, b) in enumerate(zip(cuts[:-1], cuts[1:]))]


def _index_for(bodies, hdr):
    pos = header_bytes(hdr.num_tile_rows)
    index = []
    for body in bodies:
        index.append((pos, len(body)))
        pos += len(body)
    return index


class _SequentialWriter:
    """Buffers appends into large sequential writes through the storage shim."""

    def __init__(self, storage, path, start: int, batch: int = 8 * MiB):
        self.storage, self.path, self.pos, self.batch = storage, path, start, batch
        self._parts, self._size = [], 0

    def append(self, data: bytes):
        self._parts.append(data)
        self._size += len(data)
        if self._size >= self.batch:
            self.flush()

    def flush(self):
        if self._size:
            self.storage.write(self.path, self.pos, b"".join(self._parts))
            self.pos += self._size
            self._parts, self._size = [], 0


def convert(edge_source, dest, storage, *, n_rows: int | None = None, n_cols: int | None = None,
            tile_size: int = TILE_SIZE, value_kind: ValueKind | None = ValueKind.BINARY, transpose: bool = False,
            mem_edges: int = CONVERT_MEM_EDGES, tmpdir=None, meta: dict | None = None) -> TiledSparseMatrix:
    """Convert a stream of ``(u, v, w)`` chunks into an image at ``dest``.

    ``n_rows`` x ``n_cols`` are the dimensions of the source matrix; when
    either is None they come from ``meta["shape"]`` once the source is
    consumed, or else the matrix is square with side ``max id + 1``.  With
    ``transpose`` the image holds the transposed matrix.  At most
    ``mem_edges`` edges are held in memory before spilling to bucket files.
    A ``value_kind`` of None is taken from the first chunk (weights present
    means Float64).  The source is read once and the image written once.
    """
    t = check_tile_size(tile_size)
    infer = n_rows is None or n_cols is None
    held, held_n = [], 0
    spill = None
    hi_u = hi_v = -1
    for u, v, w in edge_source:
        if value_kind is None:
            value_kind = ValueKind.BINARY if w is None else ValueKind.FLOAT64
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if infer:
            _check_range(u, v, np.inf, np.inf)
            if len(u):
                hi_u, hi_v = max(hi_u, int(u.max())), max(hi_v, int(v.max()))
        else:
            _check_range(u, v, n_rows, n_cols)
        if transpose:
            u, v = v, u
        held.append((u, v, _values(w, len(u), value_kind)))
        held_n += len(u)
        if held_n > mem_edges:
            if spill is None:
                spill = _BucketSpill(t, value_kind, tmpdir)
            spill.add(held)
            held, held_n = [], 0

    value_kind = ValueKind.BINARY if value_kind is None else value_kind
    if infer:
        if meta and "shape" in meta:
            n_rows, n_cols = meta["shape"]
            if hi_u >= n_rows or hi_v >= n_cols:
                raise DataError(f"edge ids up to ({hi_u}, {hi_v}) exceed the declared {n_rows}x{n_cols} shape")
        else:
            n_rows = n_cols = max(hi_u, hi_v) + 1
    out_rows, out_cols = (n_cols, n_rows) if transpose else (n_rows, n_cols)
    hdr = MatrixHeader(out_rows, out_cols, t, value_kind)
    if spill is None:
        rows, cols, vals = _concat(held, value_kind)
        rows, cols, vals = _canonical(rows, cols, vals, value_kind, t)
        bodies = _encode_sorted(rows, cols, vals, hdr)
        hdr.tile_row_index = _index_for(bodies, hdr)
        storage.create(dest)
        w = _SequentialWriter(storage, dest, 0)
        w.append(hdr.pack())
        for body in bodies:
            w.append(body)
        w.flush()
        return TiledSparseMatrix(hdr, path=dest, storage=storage)

    spill.add(held)
    log.info("conversion spilled %d edges into %d buckets", spill.count, hdr.num_tile_rows)
    try:
        storage.create(dest)
        hdr.tile_row_index = [(0, 0)] * hdr.num_tile_rows
        storage.write(dest, 0, hdr.pack())
        w = _SequentialWriter(storage, dest, hdr.nbytes)
        index = []
        pos = hdr.nbytes
        for i in range(hdr.num_tile_rows):
            rows, cols, vals = spill.load(i)
            rows, cols, vals = _canonical(rows, cols, vals, value_kind, t)
            body = encode_tile_row(rows, cols, vals, i, t, value_kind)
            index.append((pos, len(body)))
            pos += len(body)
            w.append(body)
        w.flush()
        hdr.tile_row_index = index
        storage.write(dest, 0, hdr.pack())
    finally:
        spill.close()
    return TiledSparseMatrix(hdr, path=dest, storage=storage)


def _concat(held, value_kind):
    if not held:
        return np.empty(0, np.int64), np.empty(0, np.int64), (None if value_kind is ValueKind.BINARY else np.empty(0))
    rows = np.concatenate([h[0] for h in held])
    cols = np.concatenate([h[1] for h in held])
    vals = None if value_kind is ValueKind.BINARY else np.concatenate([h[2] for h in held])
    return rows, cols, vals


class _BucketSpill:
    """Per-tile-row bucket files of (row, col, value) records."""

    _dtype = np.dtype([("r", "<i8"), ("c", "<i8"), ("w", "<f8")])

    def __init__(self, tile_size: int, value_kind: ValueKind, tmpdir=None):
        self.tile_size = tile_size
        self.value_kind = value_kind
        self.dir = tempfile.TemporaryDirectory(prefix="semspmm-convert-", dir=tmpdir)
        self.count = 0

    def _path(self, i):
        return os.path.join(self.dir.name, f"bucket-{i}.bin")

    def add(self, held):
        if not held:
            return
        rows, cols, vals = _concat(held, self.value_kind)
        rec = np.empty(len(rows), dtype=self._dtype)
        rec["r"], rec["c"] = rows, cols
        rec["w"] = 1.0 if vals is None else vals
        tr = rows // self.tile_size
        order = np.argsort(tr, kind="stable")
        rec, tr = rec[order], tr[order]
        ids, starts = np.unique(tr, return_index=True)
        for i, a, b in zip(ids.tolist(), starts, np.r_[starts[1:], len(tr)]):
            with open(self._path(i), "ab") as f:
                rec[a:b].tofile(f)
        self.count += len(rows)

    def load(self, i):
        p = self._path(i)
        rec = np.fromfile(p, dtype=self._dtype) if os.path.exists(p) else np.empty(0, self._dtype)
        vals = None if self.value_kind is ValueKind.BINARY else rec["w"].copy()
        return rec["r"].copy(), rec["c"].copy(), vals

    def close(self):
        self.dir.cleanup()


def convert_file(src, dest, storage, *, shape=None, tile_size: int = TILE_SIZE,
                 value_kind: ValueKind | None = None, transpose: bool = False,
                 mem_edges: int = CONVERT_MEM_EDGES, tmpdir=None) -> TiledSparseMatrix:
    """Convert a text edge list or Matrix Market file.

    Without ``shape``, Matrix Market sizes are used; for edge lists the matrix
    is square with side ``max id + 1``.  ``value_kind`` defaults to Float64
    when the source has weights.
    """
    shape = shape or (None, None)
    meta: dict = {}
    try:
        return convert(read_edges(storage, src, meta=meta), dest, storage, n_rows=shape[0], n_cols=shape[1],
                       tile_size=tile_size, value_kind=value_kind, transpose=transpose,
                       mem_edges=mem_edges, tmpdir=tmpdir, meta=meta)
    except OSError as exc:
        raise DataError(f"cannot write {dest}: {exc}") from exc


def write_edge_list(storage, path, u, v, w=None, header: str | None = None):
    """Write ``u v [w]`` lines, one edge per line."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    lines = [f"# {header}\n"] if header else []
    if w is None:
        body = "\n".join(f"{a} {b}" for a, b in zip(u.tolist(), v.tolist()))
    else:
        body = "\n".join(f"{a} {b} {c!r}" for a, b, c in zip(u.tolist(), v.tolist(), np.asarray(w).tolist()))
    text = "".join(lines) + body + ("\n" if len(u) else "")
    storage.create(path)
    storage.write(path, 0, text.encode())

