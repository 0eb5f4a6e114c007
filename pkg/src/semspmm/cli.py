"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 memory
budget violation.  Every command prints its resolved configuration to
stderr before it touches a file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .apps import SparseOperator, nmf, out_degrees, pagerank, subspace_iteration
from .convert import convert_file, write_edge_list
from .defaults import (CACHE_BYTES, CONVERT_MEM_EDGES, DAMPING, EIGEN_MAX_ITERS, EIGEN_TOL, MERGE_BYTES,
                       NMF_RANK, PAGERANK_ITERS, TILE_SIZE)
from .dense import (DENSE_MAGIC, VerticalPartitionPlan, create_dense, load_vertical_partition, read_dense_header,
                    write_dense, write_dense_block)
from .errors import SemSpmmError
from .generators import RmatParams, SbmParams, gen_rmat, gen_sbm
from .kernel import KernelConfig, spmm
from .scsr import MAGIC, TiledSparseMatrix, ValueKind, matrix_stats
from .sem import IoPlan, spmm_large_dense
from .storage import FileStorage

log = logging.getLogger("semspmm")

BENCH_FIELDS = ("graph", "mode", "p", "mem_cols", "threads", "seconds", "bytes_read", "bytes_written")
BENCH_SCHEMA = "semspmm-bench v1"


class UsageError(Exception):
    pass


def _size(text: str) -> int:
    """Parse ``123``, ``64K``, ``8M`` or ``2G`` (binary multiples)."""
    units = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
    s = text.strip().upper().removesuffix("IB").removesuffix("B")
    try:
        if s and s[-1] in units:
            return int(float(s[:-1]) * units[s[-1]])
        return int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a byte size: {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from None


def _positive(name, value):
    if value is not None and value <= 0:
        raise UsageError(f"--{name} must be positive, got {value}")


def _kernel_args(p):
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cache-bytes", type=_size, default=CACHE_BYTES)
    p.add_argument("--merge-bytes", type=_size, default=MERGE_BYTES)
    p.add_argument("--mode", choices=("im", "sem"), default="im")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semspmm", description="Semi-external-memory sparse x dense multiplication.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="edge list / Matrix Market -> tiled image")
    p.add_argument("src")
    p.add_argument("dest")
    p.add_argument("--tile-size", type=int, default=TILE_SIZE)
    p.add_argument("--shape", type=int, nargs=2, metavar=("ROWS", "COLS"))
    p.add_argument("--transpose", action="store_true")
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--binary", action="store_true", help="ignore weights")
    kind.add_argument("--weighted", action="store_true", help="store float64 values")
    p.add_argument("--mem-edges", type=int, default=CONVERT_MEM_EDGES)

    p = sub.add_parser("info", help="describe a sparse or dense image")
    p.add_argument("image")
    p.add_argument("--tiles", action="store_true", help="list every tile")

    p = sub.add_parser("spmm", help="multiply an image by a dense matrix")
    p.add_argument("image")
    p.add_argument("output")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="dense image with as many rows as the sparse matrix has columns")
    src.add_argument("--random", type=int, metavar="P", help="use a seeded uniform n x P input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mem-cols", type=int, help="dense columns resident per pass")
    p.add_argument("--mem-budget", type=_size, help="memory budget; derives --mem-cols in sem mode")
    _kernel_args(p)

    p = sub.add_parser("pagerank", help="PageRank over a transposed adjacency image")
    p.add_argument("image", help="image of A^T (row u lists the in-neighbours of u)")
    p.add_argument("output", help="dense n x 1 image of ranks")
    p.add_argument("--damping", type=float, default=DAMPING)
    p.add_argument("--iters", type=int, default=PAGERANK_ITERS)
    p.add_argument("--tol", type=float)
    p.add_argument("--no-dangling", action="store_true", help="drop rank held by vertices without out-edges")
    p.add_argument("--trace")
    _kernel_args(p)

    p = sub.add_parser("eigen", help="top-k eigenpairs of a symmetric image")
    p.add_argument("image")
    p.add_argument("output", help="dense n x k image of eigenvectors; values go to stdout")
    p.add_argument("-k", type=int, default=8)
    p.add_argument("--block", type=int)
    p.add_argument("--tol", type=float, default=EIGEN_TOL)
    p.add_argument("--max-iters", type=int, default=EIGEN_MAX_ITERS)
    p.add_argument("--residency", choices=("memory", "storage"), default="memory")
    p.add_argument("--mem-cols", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace")
    _kernel_args(p)

    p = sub.add_parser("nmf", help="nonnegative factorisation A ~ W H")
    p.add_argument("image")
    p.add_argument("transpose_image")
    p.add_argument("prefix", help="writes PREFIX.W and PREFIX.Ht dense images")
    p.add_argument("-k", type=int, default=NMF_RANK)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--mem-cols", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace")
    _kernel_args(p)

    p = sub.add_parser("gen-rmat", help="write an R-MAT edge list")
    p.add_argument("output")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--edge-factor", type=int, default=16)
    p.add_argument("--abc", type=float, nargs=3, default=(0.57, 0.19, 0.19), metavar=("A", "B", "C"))
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-sbm", help="write a stochastic block model edge list")
    p.add_argument("output")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--edges", type=int, required=True)
    p.add_argument("--in-out", type=float, default=1.0)
    p.add_argument("--ordering", choices=("clustered", "unclustered"), default="clustered")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="time SpMM configurations and write CSV")
    p.add_argument("images", nargs="+")
    p.add_argument("--p", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--mem-cols", type=_int_list, default=[], help="empty means all columns resident")
    p.add_argument("--threads", type=_int_list, default=[1])
    p.add_argument("--modes", type=lambda s: s.split(","), default=["im", "sem"])
    p.add_argument("--cache-bytes", type=_size, default=CACHE_BYTES)
    p.add_argument("--merge-bytes", type=_size, default=MERGE_BYTES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--out", help="CSV path (default stdout)")
    return ap


def _validate(args) -> None:
    for name in ("threads", "cache_bytes", "merge_bytes", "mem_cols", "mem_budget", "random", "iters",
                 "max_iters", "k", "block", "tile_size", "mem_edges", "repeat", "edge_factor", "edges", "n"):
        val = getattr(args, name, None)
        if isinstance(val, list):
            for v in val:
                _positive(name.replace("_", "-"), v)
        else:
            _positive(name.replace("_", "-"), val)
    if args.command == "pagerank" and not 0 < args.damping < 1:
        raise UsageError(f"--damping must lie in (0, 1), got {args.damping}")
    if args.command == "bench":
        bad = set(args.modes) - {"im", "sem"}
        if bad:
            raise UsageError(f"--modes accepts im and sem, got {sorted(bad)}")
    if args.command == "eigen" and args.block is not None and args.block < args.k:
        raise UsageError(f"--block ({args.block}) must be at least -k ({args.k})")
    if args.command == "convert":
        ts = args.tile_size
        if ts & (ts - 1) or ts > 32768:
            raise UsageError(f"--tile-size must be a power of two <= 32768, got {ts}")


def _cfg(args) -> KernelConfig:
    return KernelConfig(cache_bytes=args.cache_bytes, threads=args.threads)


def _print_config(args) -> None:
    conf = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("# config " + json.dumps(conf, default=str, sort_keys=True), file=sys.stderr)


# ---------------------------------------------------------------------------
# commands

def cmd_convert(args, storage) -> int:
    kind = ValueKind.BINARY if args.binary else ValueKind.FLOAT64 if args.weighted else None
    m = convert_file(args.src, args.dest, storage, shape=args.shape, tile_size=args.tile_size,
                     value_kind=kind, transpose=args.transpose, mem_edges=args.mem_edges)
    print(f"wrote {args.dest}: {m.shape[0]}x{m.shape[1]}, {m.nbytes} bytes, "
          f"{storage.counters.total_read(args.src)} bytes read")
    return 0


def _is_dense(storage, path) -> bool:
    return storage.read(path, 0, 8) == DENSE_MAGIC


def cmd_info(args, storage) -> int:
    if _is_dense(storage, args.image):
        n, p = read_dense_header(storage, args.image)
        print(f"kind=dense\nn={n}\np={p}\nfile_bytes={storage.size(args.image)}")
        return 0
    if storage.read(args.image, 0, 8) != MAGIC:
        raise SemSpmmError(f"{args.image}: neither a sparse nor a dense image")
    m = TiledSparseMatrix.load(args.image, storage)
    st = matrix_stats(m)
    lines = {
        "kind": "sparse", "n": m.shape[0], "m": m.shape[1], "t": m.tile_size,
        "value_kind": m.value_kind.name.lower(), "nnz": st.nnz, "tile_rows": m.num_tile_rows,
        "tiles": len(st.tiles), "header_bytes": st.header_bytes, "record_bytes": st.record_bytes,
        "file_bytes": st.file_bytes, "scsr_formula_bytes": st.scsr_bytes, "dcsc_formula_bytes": st.dcsc_bytes,
    }
    for k, v in lines.items():
        print(f"{k}={v}")
    if args.tiles:
        for ti in st.tiles:
            print(f"tile {ti.tile_row} {ti.tile_col} nnz={ti.stats.nnz} nnr={ti.stats.nnr} "
                  f"nnc={ti.stats.nnc} record_len={ti.record_len} coo={ti.num_coo}")
    return 0


def _random_dense(n, p, seed):
    return np.random.default_rng(seed).random((n, p))


def run_spmm(image, in_path, out_path, storage, mode, cfg, mem_cols=None, mem_budget=None,
             merge_bytes=MERGE_BYTES, stats=None):
    """Multiply an on-storage dense image; both modes write the same bytes."""
    n_in, p = read_dense_header(storage, in_path)
    if mode == "sem":
        spm = TiledSparseMatrix.open(image, storage)
        plan = None
        if mem_cols is not None:
            plan = VerticalPartitionPlan(p, min(p, mem_cols))
        elif mem_budget is not None:
            plan = IoPlan.for_engine(n_in, p, spm.nbytes, mem_budget, cfg.threads).vertical_plan()
        return spmm_large_dense(spm, in_path, out_path, storage, plan, cfg, merge_bytes=merge_bytes, stats=stats)
    spm = TiledSparseMatrix.load(image, storage)
    plan = VerticalPartitionPlan(p, min(p, mem_cols or p))
    create_dense(storage, out_path, spm.shape[0], p)
    for a, b in plan.ranges:
        part = load_vertical_partition(storage, in_path, (a, b))
        write_dense_block(storage, out_path, p, 0, a, spmm(spm, part.data, cfg))
    return out_path


def cmd_spmm(args, storage) -> int:
    cfg = _cfg(args)
    in_path = args.input
    tmp = None
    if args.random is not None:
        spm = TiledSparseMatrix.open(args.image, storage)
        tmp = tempfile.TemporaryDirectory(prefix="semspmm-")
        in_path = os.path.join(tmp.name, "input.dense")
        write_dense(storage, in_path, _random_dense(spm.shape[1], args.random, args.seed))
    try:
        run_spmm(args.image, in_path, args.output, storage, args.mode, cfg, args.mem_cols, args.mem_budget,
                 args.merge_bytes)
    finally:
        if tmp is not None:
            tmp.cleanup()
    print(f"wrote {args.output}: sparse bytes read {storage.counters.total_read(args.image)}, "
          f"dense bytes written {storage.counters.total_written(args.output)}")
    return 0


def _operator(args, storage, path):
    return SparseOperator(path, storage, args.mode, _cfg(args), merge_bytes=args.merge_bytes)


def cmd_pagerank(args, storage) -> int:
    op = _operator(args, storage, args.image)
    st = pagerank(op, out_degrees(op), args.damping, args.iters, args.tol, not args.no_dangling)
    write_dense(storage, args.output, st.rank)
    if args.trace:
        st.trace.write(args.trace)
    top = np.argsort(-st.rank, kind="stable")[:10]
    print(f"iterations={st.iterations} sum={st.rank.sum():.12f}")
    for v in top:
        print(f"{v} {st.rank[v]!r}")
    return 0


def cmd_eigen(args, storage) -> int:
    op = _operator(args, storage, args.image)
    tmp = tempfile.TemporaryDirectory(prefix="semspmm-")
    try:
        st = subspace_iteration(op, args.k, args.block, max_iters=args.max_iters, tol=args.tol,
                                residency=args.residency, mem_cols=args.mem_cols, seed=args.seed,
                                scratch=os.path.join(tmp.name, "basis"))
    finally:
        tmp.cleanup()
    write_dense(storage, args.output, st.vectors)
    if args.trace:
        st.trace.write(args.trace)
    print(f"iterations={st.iterations} converged={st.converged}")
    for lam, r in zip(st.values, st.residuals):
        print(f"{lam!r} residual={r:.3e}")
    return 0 if st.converged else 3


def cmd_nmf(args, storage) -> int:
    A = _operator(args, storage, args.image)
    At = _operator(args, storage, args.transpose_image)
    st = nmf(A, At, args.k, args.iters, mem_cols=args.mem_cols, seed=args.seed)
    write_dense(storage, args.prefix + ".W", st.W)
    write_dense(storage, args.prefix + ".Ht", st.H.T)
    if args.trace:
        st.trace.write(args.trace)
    print(f"objective first={st.objective[0]!r} last={st.objective[-1]!r}")
    return 0


def cmd_gen_rmat(args, storage) -> int:
    a, b, c = args.abc
    params = RmatParams(args.scale, args.edge_factor, a, b, c, 1.0 - a - b - c, args.seed, not args.undirected)
    u, v = gen_rmat(params)
    write_edge_list(storage, args.output, u, v, header=f"rmat n={params.n} edges={len(u)} seed={args.seed}")
    print(f"wrote {args.output}: n={params.n} edges={len(u)}")
    return 0


def cmd_gen_sbm(args, storage) -> int:
    params = SbmParams(args.n, args.clusters, args.edges, args.in_out, args.ordering, args.seed)
    u, v = gen_sbm(params)
    write_edge_list(storage, args.output, u, v, header=f"sbm n={args.n} edges={len(u)} seed={args.seed}")
    print(f"wrote {args.output}: n={args.n} edges={len(u)}")
    return 0


def cmd_bench(args, storage) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        out.write(f"# {BENCH_SCHEMA}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BENCH_FIELDS)
        with tempfile.TemporaryDirectory(prefix="semspmm-bench-") as tmp:
            for image in args.images:
                spm = TiledSparseMatrix.open(image, storage)
                for p in args.p:
                    in_path = os.path.join(tmp, f"in{p}.dense")
                    out_path = os.path.join(tmp, f"out{p}.dense")
                    write_dense(storage, in_path, _random_dense(spm.shape[1], p, args.seed))
                    for mode in args.modes:
                        for mc in (args.mem_cols or [p]):
                            for th in args.threads:
                                for _ in range(args.repeat):
                                    cfg = KernelConfig(cache_bytes=args.cache_bytes, threads=th)
                                    storage.reset_counters()
                                    t0 = time.perf_counter()
                                    run_spmm(image, in_path, out_path, storage, mode, cfg, min(mc, p),
                                             merge_bytes=args.merge_bytes)
                                    sec = time.perf_counter() - t0
                                    w.writerow((os.path.basename(image), mode, p, min(mc, p), th, f"{sec:.6f}",
                                                storage.counters.total_read(image),
                                                storage.counters.total_written(out_path)))
                                    out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


COMMANDS = {
    "convert": cmd_convert, "info": cmd_info, "spmm": cmd_spmm, "pagerank": cmd_pagerank,
    "eigen": cmd_eigen, "nmf": cmd_nmf, "gen-rmat": cmd_gen_rmat, "gen-sbm": cmd_gen_sbm, "bench": cmd_bench,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
    except UsageError as exc:
        print(f"semspmm {args.command}: {exc}", file=sys.stderr)
        return 2
    _print_config(args)
    storage = FileStorage()
    try:
        return COMMANDS[args.command](args, storage)
    except SemSpmmError as exc:
        print(f"semspmm {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"semspmm {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"semspmm {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
