import csv
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakma.cli import function_from_spec, main, parse_config
from weakma.errors import ConfigError
from weakma.fields import Grid, load_field

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- catalog and parsing ----------------------------------------------------------------

def test_catalog_values():
    g = Grid(9)
    x1, x2 = g.full_mesh()
    assert np.all(function_from_spec("zero", g).values == 0)
    assert np.all(function_from_spec("const:2.5", g).values == 2.5)
    assert np.allclose(function_from_spec("sinsin:1,2", g).values, np.sin(np.pi * x1) * np.sin(2 * np.pi * x2))
    assert np.allclose(function_from_spec("sinsin:1,1,3", g).values, 3 * np.sin(np.pi * x1) * np.sin(np.pi * x2))
    assert np.allclose(function_from_spec("poly:1,0,0,0,1", g).values, 1 + x1 * x2)


@pytest.mark.parametrize("spec", ["zero:1", "const:", "sinsin:1", "poly:1,2,3,4,5,6,7", "bump:1", "const:x"])
def test_catalog_rejects(spec):
    with pytest.raises(ConfigError):
        function_from_spec(spec, Grid(9))


def test_parse_defaults_use_selected_exponents():
    rc = parse_config("n = 257\n")
    assert rc.stages == 0 and rc.f_spec == "zero" and rc.J == 8
    cfg = rc.exponents
    assert cfg.alpha == 0.01
    assert cfg.beta == pytest.approx(cfg.beta_max / 2)
    assert cfg.a > 1


def test_parse_aliases_and_comments():
    rc = parse_config("# header\nn = 129   # grid\nf = sinsin:1,1\noutput = out\nstages=1\n")
    assert rc.f_spec == "sinsin:1,1" and rc.output_dir == "out" and rc.stages == 1


@pytest.mark.parametrize(
    "text, key",
    [
        ("n = 100\n", "'n'"),
        ("n = 129\nstages = 13\n", "'stages'"),
        ("n = 129\nbogus = 1\n", "'bogus'"),
        ("n = 129\nf = sinsin:x\n", "'f_spec'"),
        ("n = 129\nv_flat = nope\n", "'v_flat_spec'"),
        ("n = 129\nn = 129\n", "'n'"),
        ("stages = 1\n", "'n'"),
        ("n = 129\nK = many\n", "'K'"),
        ("n = 129\njunk line\n", "line 2"),
    ],
)
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


@given(st.integers(3, 12), st.integers(0, 12))
def test_parse_accepts_valid_sizes(k, stages):
    rc = parse_config(f"n = {2**k + 1}\nstages = {stages}\nalpha = 0\nmargin = 0.3\na = 1e300\n")
    assert rc.n == 2**k + 1 and rc.stages == stages


# -- check --------------------------------------------------------------------------------

def test_check_defaults_pass(tmp_path, capsys):
    assert main(["check", write(tmp_path, "n = 129\nstages = 6\n"), "--output-dir", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "admissibility.csv")
    assert rows[0] == ["ineq", "q", "lhs_log10", "rhs_log10", "slack", "pass"]
    assert all(r[-1] == "1" for r in rows[1:])
    assert "inequalities pass" in capsys.readouterr().out


def test_check_b_equal_one_fails(tmp_path):
    cfg = write(tmp_path, "n = 129\nstages = 2\nalpha = 0\nb = 1.0\nc = 3\nkappa = 0.3\na = 100\n")
    assert main(["check", cfg, "--output-dir", str(tmp_path), "--quiet"]) == 1


def test_check_huge_a_twelve_stages(tmp_path):
    cfg = write(tmp_path, "n = 129\nstages = 12\nalpha = 0\nmargin = 0.3\na = 1e300\n")
    assert main(["check", cfg, "--output-dir", str(tmp_path), "--quiet"]) == 0
    rows = read_csv(tmp_path / "admissibility.csv")[1:]
    assert max(int(r[1]) for r in rows) == 12
    assert all(math.isfinite(float(r[2])) and math.isfinite(float(r[3])) for r in rows)


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["solve", write(tmp_path, "n = 129\nf = sinsin:9\n"), "--output-dir", str(tmp_path)]) == 2
    assert "f_spec" in capsys.readouterr().err
    assert main(["check", str(tmp_path / "missing.cfg")]) == 2


def test_pipeline_error_exit_code(tmp_path, capsys):
    cfg = (CONFIGS / "flat.cfg").read_text().replace("n = 1025", "n = 129")
    assert main(["solve", write(tmp_path, cfg), "--output-dir", str(tmp_path / "o"), "--quiet"]) == 3
    assert "ResolutionExhausted" in capsys.readouterr().err


# -- solve ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def flat_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("flat")
    proc = subprocess.run(
        [sys.executable, "-m", "weakma", "solve", str(CONFIGS / "flat.cfg"), "--output-dir", str(out)],
        capture_output=True, text=True, env={**os.environ, "MA_THREADS": "1"},
    )
    return proc, out


def test_solve_zero_stages(flat_run):
    proc, out = flat_run
    assert proc.returncode == 0, proc.stderr
    line = next(l for l in proc.stdout.splitlines() if "|v - v_flat|_0" in l)
    dist = float(line.split("=")[1].split()[0])
    eps = float(line.split("epsilon =")[1].split(",")[0])
    assert dist <= eps and "ok" in line
    for name in ("admissibility.csv", "residuals.csv", "convergence.csv", "reports.csv",
                 "config.json", "A.maf", "v_0.maf", "w_0.maf", "bending_t0.1.obj"):
        assert (out / name).exists(), name


def test_solve_outputs_round_trip(flat_run):
    _, out = flat_run
    v = load_field(out / "v_0.maf")
    assert v.grid.n == 1025
    res = read_csv(out / "residuals.csv")
    assert res[0] == ["q", "j", "k", "residual"]
    assert len(res) == 1 + 64
    assert all(float(r[3]) == float(repr(float(r[3]))) for r in res[1:])
    conv = read_csv(out / "convergence.csv")
    assert conv == [["q", "b_pow", "dv_c0", "dv_c1", "dv_c1_over_sqrt_delta", "deficit_c0", "residual_max"]]
    for name in ("admissibility.csv", "residuals.csv", "convergence.csv", "reports.csv"):
        raw = (out / name).read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
    obj = (out / "bending_t0.1.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in obj) == 129 * 129


def test_solve_deterministic(flat_run, tmp_path):
    proc, out = flat_run
    assert main(["solve", str(CONFIGS / "flat.cfg"), "--output-dir", str(tmp_path), "--quiet"]) == 0
    for name in ("admissibility.csv", "residuals.csv", "convergence.csv", "reports.csv", "bending_t0.1.obj"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name
    assert (tmp_path / "v_0.maf").read_bytes() == (out / "v_0.maf").read_bytes()


def test_shipped_configs_parse():
    for name in ("desk.cfg", "homogeneous.cfg", "flat.cfg"):
        rc = parse_config((CONFIGS / name).read_text())
        assert rc.exponents.invariant_violations() == []
    desk = parse_config((CONFIGS / "desk.cfg").read_text())
    assert (desk.f_spec, desk.n, desk.stages) == ("sinsin:1,1", 4097, 2)
    homo = parse_config((CONFIGS / "homogeneous.cfg").read_text())
    assert (homo.f_spec, homo.v_flat_spec, homo.n, homo.stages) == ("zero", "zero", 4097, 2)
