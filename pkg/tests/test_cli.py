import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import toeplitz

from hsm import cli
from hsm.covband import estimate_log
from hsm.io import parse_matrix, parse_vector, read_table

PATH3 = "p 3\nnode a 1\nnode b 2\nnode c 3\nedge a b\nedge b c\n"
DAG = ("p 5\nnode r1 1\nnode r2 2\nnode m 3\nnode c1 4\nnode c2 5\n"
       "edge r1 m\nedge r2 m\nedge m c1\nedge m c2\n")
INTERACTIONS = ("p 6\nnode x1 1\nnode x2 2\nnode x3 3\nnode x12 4\nnode x13 5\n"
                "node x23 6\nedge x1 x12\nedge x2 x12\nedge x1 x13\nedge x3 x13\n"
                "edge x2 x23\nedge x3 x23\n")


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        f = tmp_path / name
        f.write_text(text)
        return str(f)
    return write


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _header(text, key):
    for line in text.splitlines():
        if line.startswith(f"# {key}:"):
            return line.split(":", 1)[1].strip()
    raise KeyError(key)


def test_prox_log_lambda_zero_echoes_input(files, capsys):
    y = "0.25\n-1.5\n3.0\n"
    code, out, _ = _run(["prox", "--reg", "log", "--hierarchy", files("h", PATH3),
                         "--vector", files("y", y), "--lambda", "0"], capsys)
    assert code == 0
    np.testing.assert_array_equal(parse_vector(out), [0.25, -1.5, 3.0])


def test_prox_log_knot_example(files, capsys):
    code, out, _ = _run(["prox", "--reg", "log", "--hierarchy", files("h", PATH3),
                         "--vector", files("y", "2\n2\n0.1\n"), "--lambda", "0.5"],
                        capsys)
    assert code == 0
    assert _header(out, "knots") == "2"
    np.testing.assert_allclose(parse_vector(out), [1.5, 1.5, 0.0], atol=1e-15)
    assert float(_header(out, "max_kkt_violation")) <= 1e-12


def test_prox_log_naive_matches_path(files, capsys):
    rng = np.random.default_rng(3)
    y = rng.standard_normal(3)
    vec = files("y", "\n".join(repr(float(v)) for v in y))
    h = files("h", PATH3)
    _, a, _ = _run(["prox", "--reg", "log", "--hierarchy", h, "--vector", vec,
                    "--lambda", "0.4"], capsys)
    code, b, _ = _run(["prox", "--reg", "log", "--hierarchy", h, "--vector", vec,
                       "--lambda", "0.4", "--algorithm", "naive", "--tol", "1e-14"],
                      capsys)
    assert code == 0
    np.testing.assert_allclose(parse_vector(a), parse_vector(b), atol=1e-8)


@pytest.mark.parametrize("reg,alg", [("gl", "auto"), ("gl", "dual"), ("log", "auto"),
                                     ("log", "naive")])
def test_prox_on_dag_certifies(files, capsys, reg, alg):
    code, out, _ = _run(["prox", "--reg", reg, "--hierarchy", files("h", DAG),
                         "--vector", files("y", "1\n-2\n0.5\n3\n-1\n"),
                         "--lambda", "0.7", "--algorithm", alg, "--tol", "1e-14"],
                        capsys)
    assert code == 0
    assert float(_header(out, "max_kkt_violation")) <= 1e-6


def test_prox_gl_path_and_mgl(files, capsys):
    h = files("h", PATH3)
    y = files("y", "3\n-2\n1\n")
    code, a, _ = _run(["prox", "--reg", "gl", "--hierarchy", h, "--vector", y,
                       "--lambda", "0.5", "--algorithm", "path"], capsys)
    _, b, _ = _run(["prox", "--reg", "gl", "--hierarchy", h, "--vector", y,
                    "--lambda", "0.5", "--algorithm", "tree"], capsys)
    assert code == 0
    np.testing.assert_allclose(parse_vector(a), parse_vector(b), atol=1e-12)
    code, c, _ = _run(["prox", "--reg", "mgl", "--hierarchy", h, "--vector", y,
                       "--lambda", "0.5"], capsys)
    assert code == 0
    assert float(_header(c, "max_objective_decrease")) <= 1e-12


def test_covband_identity_and_lambda_zero(files, capsys):
    code, out, _ = _run(["covband", "--matrix", files("I", "1,0\n0,1\n"),
                         "--lambda", "0.3"], capsys)
    assert code == 0
    np.testing.assert_array_equal(parse_matrix(out), np.eye(2))
    S = toeplitz([2.0, 0.7, -0.3, 0.1])
    text = "\n".join(",".join(repr(float(x)) for x in row) for row in S)
    code, out, _ = _run(["covband", "--matrix", files("S", text), "--lambda", "0"],
                        capsys)
    np.testing.assert_array_equal(parse_matrix(out), S)


def test_covband_round_trip_matches_library(files, capsys):
    S = toeplitz([3.0, 1.2, 0.8, -0.4, 0.2, 0.05])
    text = "\n".join(",".join(repr(float(x)) for x in row) for row in S)
    code, out, _ = _run(["covband", "--matrix", files("S", text), "--lambda", "0.5"],
                        capsys)
    assert code == 0
    np.testing.assert_array_equal(parse_matrix(out), estimate_log(S, 0.5).sigma_hat)


def test_covband_grid_writes_summary(files, capsys, tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((30, 5))
    text = "\n".join(",".join(repr(float(x)) for x in row) for row in data)
    out_dir = tmp_path / "grid"
    code, _, _ = _run(["covband", "--data", files("X", text), "--estimator", "gl",
                       "--lambda-grid", "0,0.1,10", "--out-dir", str(out_dir)], capsys)
    assert code == 0
    t = read_table(str(out_dir / "summary.csv"))
    assert t.column("file") == ["estimate_000.csv", "estimate_001.csv",
                                "estimate_002.csv"]
    assert t.column("bandwidth")[-1] == "0"
    assert float(t.column("frobenius_distance")[0]) == 0.0
    assert (out_dir / "estimate_002.csv").exists()


def test_decompose_outputs(files, capsys):
    code, out, _ = _run(["decompose", files("h", PATH3)], capsys)
    assert code == 0
    assert "path 1: a b c" in out
    assert "  group c: nodes a b c; indices 1 2 3" in out
    code, out, _ = _run(["decompose", files("e", "p 2\nnode u 1\nnode v 2\n")], capsys)
    assert "path 1: u" in out and "path 2: v" in out
    code, out, _ = _run(["decompose", files("i", INTERACTIONS)], capsys)
    assert code == 0
    paths = [l for l in out.splitlines() if l.startswith("path ")]
    covered = sorted(tok for l in paths for tok in l.split(":")[1].split())
    assert covered == sorted(["x1", "x2", "x3", "x12", "x13", "x23"])


def test_simulate_rows_and_determinism(files, capsys, tmp_path):
    cfg = files("c.cfg", "experiment = shrinkage-profile\nD = 5\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["simulate", cfg, "--output", str(a)]) == 0
    assert cli.main(["simulate", cfg, "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_table(str(a))) == 3 * 2 * 10 * 5
    cfg = files("r.cfg", "experiment = rate-check\np = 100, 200\nK = 10\n"
                         "replicates = 2\n")
    assert cli.main(["simulate", cfg, "--output", str(a)]) == 0
    t = read_table(str(a))
    assert t.column("p") == ["100", "200"]
    assert "config" in t.meta


def test_usage_errors(capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["prox", "--reg", "lasso"]) == cli.EXIT_USAGE
    assert cli.main(["covband", "--matrix", "x", "--data", "y"]) == cli.EXIT_USAGE


def test_input_errors(files, capsys, tmp_path):
    h = files("h", PATH3)
    assert cli.main(["prox", "--reg", "log", "--hierarchy", h, "--vector",
                     files("y", "1\n2\n"), "--lambda", "1"]) == cli.EXIT_INPUT
    assert cli.main(["prox", "--reg", "log", "--hierarchy", h, "--vector",
                     files("y3", "1\n2\n3\n"), "--lambda", "-1"]) == cli.EXIT_INPUT
    cyclic = "p 2\nnode a 1\nnode b 2\nedge a b\nedge b a\n"
    assert cli.main(["decompose", files("cyc", cyclic)]) == cli.EXIT_INPUT
    assert cli.main(["decompose", str(tmp_path / "missing")]) == cli.EXIT_INPUT
    assert cli.main(["covband", "--matrix", files("A", "1,2\n0,1\n"),
                     "--lambda", "1"]) == cli.EXIT_INPUT
    assert cli.main(["simulate", files("bad.cfg", "experiment = rate-check\nfoo = 1\n")
                     ]) == cli.EXIT_INPUT
    assert "input error" in capsys.readouterr().err


def test_numerical_error_exit(files, capsys, monkeypatch):
    real = cli.prox_log_naive_bcd
    monkeypatch.setattr(cli, "prox_log_naive_bcd",
                        lambda y, gs, lam, tol: real(y, gs, lam, 0.0, max_cycles=1))
    code = cli.main(["prox", "--reg", "log", "--hierarchy", files("h", DAG),
                     "--vector", files("y", "1\n-2\n0.5\n3\n-1\n"),
                     "--lambda", "0.7", "--algorithm", "naive"])
    assert code == cli.EXIT_NUMERICAL


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "hsm.cli", "--version"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("hsm ")
