import csv
import hashlib
import io
import os
import subprocess
import sys

import numpy as np
import pytest

from semspmm.cli import main
from semspmm.dense import read_dense, write_dense
from semspmm.storage import FileStorage


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture
def toy_image(tmp_path, capsys):
    src = tmp_path / "toy.txt"
    src.write_text("0 1\n0 3\n5 2\n")
    dest = tmp_path / "toy.img"
    code, out, _ = _run(capsys, "convert", src, dest, "--tile-size", 16, "--shape", 16, 16)
    assert code == 0 and "16x16" in out
    return dest


@pytest.fixture
def rmat_image(tmp_path, capsys):
    edges, img = tmp_path / "g.txt", tmp_path / "g.img"
    assert _run(capsys, "gen-rmat", edges, "--scale", 10, "--edge-factor", 8, "--seed", 1)[0] == 0
    assert _run(capsys, "convert", edges, img, "--tile-size", 256, "--shape", 1024, 1024)[0] == 0
    return img


def test_info_on_toy(toy_image, capsys):
    code, out, err = _run(capsys, "info", toy_image)
    assert code == 0
    fields = dict(line.split("=", 1) for line in out.splitlines())
    assert (fields["n"], fields["t"], fields["nnz"]) == ("16", "16", "3")
    assert int(fields["file_bytes"]) == os.path.getsize(toy_image)
    assert err.startswith("# config {")


def test_spmm_modes_give_identical_files(rmat_image, tmp_path, capsys):
    a, b, c = (tmp_path / f"{x}.dense" for x in "abc")
    assert _run(capsys, "spmm", rmat_image, a, "--random", 6, "--mode", "im")[0] == 0
    assert _run(capsys, "spmm", rmat_image, b, "--random", 6, "--mode", "sem", "--threads", 2)[0] == 0
    assert _run(capsys, "spmm", rmat_image, c, "--random", 6, "--mode", "sem", "--mem-cols", 4)[0] == 0
    assert _digest(a) == _digest(b) == _digest(c)


def test_bench_single_pass_reads(rmat_image, capsys):
    code, out, _ = _run(capsys, "bench", rmat_image, "--p", "1,2,4,8", "--modes", "sem")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "# semspmm-bench v1"
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert [int(r["p"]) for r in rows] == [1, 2, 4, 8]
    size = os.path.getsize(rmat_image)
    for r in rows:
        assert int(r["bytes_read"]) == size
        assert int(r["bytes_written"]) >= 1024 * 8 * int(r["p"])


def test_pagerank_and_eigen_commands(tmp_path, capsys):
    edges = tmp_path / "c.txt"
    # undirected 6-cycle stored both ways
    edges.write_text("".join(f"{i} {(i + 1) % 6}\n{(i + 1) % 6} {i}\n" for i in range(6)))
    img = tmp_path / "c.img"
    assert _run(capsys, "convert", edges, img, "--tile-size", 16, "--transpose")[0] == 0
    pr = tmp_path / "pr.dense"
    assert _run(capsys, "pagerank", img, pr, "--mode", "sem", "--trace", tmp_path / "t.csv")[0] == 0
    assert np.allclose(read_dense(FileStorage(), str(pr)), 1 / 6)
    code, out, _ = _run(capsys, "eigen", img, tmp_path / "v.dense", "-k", 1, "--block", 3, "--tol", "1e-9")
    assert code == 0 and "2.0" in out


def test_nmf_command(tmp_path, capsys):
    edges = tmp_path / "m.txt"
    edges.write_text("0 0 1.0\n0 1 2.0\n1 0 2.0\n1 1 4.0\n")
    a, at = tmp_path / "a.img", tmp_path / "at.img"
    assert _run(capsys, "convert", edges, a, "--tile-size", 2)[0] == 0
    assert _run(capsys, "convert", edges, at, "--tile-size", 2, "--transpose")[0] == 0
    assert _run(capsys, "nmf", a, at, tmp_path / "f", "-k", 1, "--iters", 100)[0] == 0
    st = FileStorage()
    W, Ht = read_dense(st, str(tmp_path / "f.W")), read_dense(st, str(tmp_path / "f.Ht"))
    assert np.allclose(W @ Ht.T, [[1, 2], [2, 4]], atol=1e-6)


def test_gen_sbm_writes_edges(tmp_path, capsys):
    out = tmp_path / "s.txt"
    assert _run(capsys, "gen-sbm", out, "-n", 100, "--clusters", 4, "--edges", 300)[0] == 0
    assert 250 < len(out.read_text().splitlines()) <= 300


@pytest.mark.parametrize("argv", [
    ["spmm", "x", "y", "--random", "0"],
    ["spmm", "x", "y", "--random", "2", "--threads", "0"],
    ["convert", "a", "b", "--tile-size", "100"],
    ["pagerank", "x", "y", "--damping", "1.5"],
    ["eigen", "x", "y", "-k", "4", "--block", "2"],
    ["bench", "x", "--modes", "im,gpu"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


def test_data_error_exit(tmp_path, capsys):
    src = tmp_path / "bad.txt"
    src.write_text("0 1 1.0\n0 1 2.0\n")
    code, _, err = _run(capsys, "convert", src, tmp_path / "o.img")
    assert code == 3 and "duplicate" in err
    junk = tmp_path / "junk.img"
    junk.write_bytes(b"0123456789abcdef")
    assert _run(capsys, "info", junk)[0] == 3
    assert _run(capsys, "info", tmp_path / "missing.img")[0] == 3


def test_budget_error_exit(rmat_image, tmp_path, capsys):
    inp = tmp_path / "in.dense"
    write_dense(FileStorage(), str(inp), np.ones((1024, 4)))
    code, _, err = _run(capsys, "spmm", rmat_image, tmp_path / "o.dense", "--input", inp, "--mode", "sem",
                        "--mem-budget", "1M")
    assert code == 4 and "budget" in err


def test_console_script_entry_point(toy_image):
    res = subprocess.run([sys.executable, "-m", "semspmm.cli", "info", str(toy_image)], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "nnz=3" in res.stdout
