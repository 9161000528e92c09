import json
import os

import pytest

from fracfucik.cli import main
from fracfucik.config import ConfigError, parse_config

TINY = """
[mesh]
n_cells = 16
s = 0.4

[fucik]
level = 2
a_grid = auto 3
"""

SOLVE = """
[mesh]
n_cells = 96
s = 0.2

[energy]
eps = 0.06
gamma = 0.3
n_samples = 4

[solver]
level = 2
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_defaults():
    cfg = parse_config(TINY)
    assert cfg.mesh.extent == ((-1.0, 1.0),) and cfg.mesh.n_cells == (16,)
    assert cfg.fucik["a_grid"] == ("auto", 3)
    assert cfg.solver["seed"] == 0 and cfg.energy["mu"] is None
    assert json.dumps(cfg.to_dict())


def test_missing_required_key():
    with pytest.raises(ConfigError, match="'s'"):
        parse_config("[mesh]\nn_cells = 8\n")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r":4: unknown key 'colour'"):
        parse_config("[mesh]\nn_cells = 8\ns = 0.3\ncolour = red\n", "x.ini")


@pytest.mark.parametrize("text", [
    "[mesh]\nn_cells = 8\ns = 0.3\n[plot]\nx = 1\n",
    "[mesh]\nn_cells = eight\ns = 0.3\n",
    "[mesh]\nn_cells = 8\ns = 0.7\n",
    "[mesh]\ndim = 2\nextent = 0 1\nn_cells = 8\ns = 0.3\n",
    "[mesh]\nn_cells = 8\ns = 0.3\n[solver]\ncase = sideways\n",
])
def test_rejected_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_cli_missing_s_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, "[mesh]\nn_cells = 16\n")
    assert main(["eigs", cfg, "--output-dir", str(tmp_path / "o")]) == 1
    assert "'s'" in capsys.readouterr().err


def test_cli_unknown_key_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, TINY + "bogus = 1\n")
    assert main(["fucik", cfg, "--output-dir", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err


def test_cli_usage_errors(tmp_path, monkeypatch):
    assert main([]) == 1
    assert main(["nonsense"]) == 1
    assert main(["eigs", str(tmp_path / "missing.ini")]) == 1
    cfg = _write(tmp_path, TINY)
    monkeypatch.setenv("FRACFUCIK_THREADS", "many")
    assert main(["eigs", cfg, "--output-dir", str(tmp_path / "o")]) == 1
    assert main(["eigs", cfg, "--output-dir", str(tmp_path / "o"), "--threads", "0"]) == 1


def test_cli_eigs_deterministic_and_valid(tmp_path):
    cfg = _write(tmp_path, TINY)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert main(["eigs", cfg, "--output-dir", str(d1), "--dump-matrices"]) == 0
    assert main(["eigs", cfg, "--output-dir", str(d2), "--dump-matrices"]) == 0
    for name in ("eigs.csv", "eigs.json", "stiffness.triplets", "mass.triplets", "operator.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    m1 = json.loads((d1 / "manifest.json").read_text())
    m2 = json.loads((d2 / "manifest.json").read_text())
    assert m1["files"] == m2["files"] and set(m1["timings"]) == set(m2["timings"])
    assert main(["validate", str(d1)]) == 0
    with open(d1 / "eigs.csv", "a") as fh:
        fh.write("1,2\n")
    assert main(["validate", str(d1)]) == 2


def test_cli_fucik_pass_and_threads(tmp_path, monkeypatch):
    cfg = _write(tmp_path, TINY)
    assert main(["fucik", cfg, "--output-dir", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("FRACFUCIK_THREADS", "2")
    assert main(["fucik", cfg, "--output-dir", str(tmp_path / "b")]) == 0
    for name in ("fucik.csv", "fucik_symmetry.csv", "fucik.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["validate", str(tmp_path / "a")]) == 0


def test_cli_flagged_exit_2(tmp_path):
    # a bisection tolerance wider than the curve spacing cannot resolve strict decrease
    cfg = _write(tmp_path, TINY + "bisect_tol = 10\n")
    assert main(["fucik", cfg, "--output-dir", str(tmp_path / "o")]) == 2
    report = json.loads((tmp_path / "o" / "fucik.json").read_text())
    assert report["passed"] is False


def test_cli_solver_error_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, SOLVE + "a = 1000\nb = 1000\n")
    assert main(["solve", cfg, "--output-dir", str(tmp_path / "o")]) == 2
    assert "LinkingError" in capsys.readouterr().err


def test_cli_inadmissible_bubble_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, SOLVE.replace("gamma = 0.3", "gamma = 0.05"))
    assert main(["solve", cfg, "--output-dir", str(tmp_path / "o")]) == 1
    assert "below mu0" in capsys.readouterr().err


def test_cli_solve_then_degiorgi(tmp_path):
    cfg = _write(tmp_path, SOLVE)
    out = tmp_path / "s"
    assert main(["solve", cfg, "--output-dir", str(out)]) == 0
    rep = json.loads((out / "solve.json").read_text())
    assert rep["result"]["residual"] < 1e-8
    a, b = rep["problem"]["a"], rep["problem"]["b"]
    cfg2 = _write(tmp_path, SOLVE + f"a = {a!r}\nb = {b!r}\n", "dg.ini")
    dg = tmp_path / "d"
    assert main(["degiorgi", cfg2, "--output-dir", str(dg), "--solution", str(out / "solution.csv")]) == 0
    assert main(["validate", str(out), str(dg)]) == 0
    assert main(["degiorgi", cfg, "--output-dir", str(dg), "--solution", str(out / "solution.csv")]) == 1


def test_cli_checks_run(tmp_path):
    text = """
[mesh]
n_cells = 128
s = 0.2

[energy]
eps = 0.05
gamma = 0.3
eps_grid = 0.25 0.125 0.0625 0.03125
n_samples = 4
"""
    cfg = _write(tmp_path, text)
    for cmd in ("bubble-check", "linking-check"):
        out = tmp_path / cmd
        assert main([cmd, cfg, "--output-dir", str(out)]) in (0, 2)
        assert os.path.exists(out / "manifest.json")
        assert main(["validate", str(out)]) == 0
    assert json.loads((tmp_path / "linking-check" / "linking.json").read_text())["passed"]
