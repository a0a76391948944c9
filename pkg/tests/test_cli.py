import csv
import json
import textwrap
from pathlib import Path

import numpy as np
import pytest

from fictitious_control.cli import main
from fictitious_control.config import ConfigError, load_config

BASE = """
name = "small"
T = 0.25
mode = "{mode}"

[windows]
omega = [0.3, 0.7]
omega0 = [0.4, 0.6]
omega1 = [0.42, 0.58]
omega2 = [0.45, 0.55]

[coefficients]
d = [1, 1]
g = {g}
a = {a}

[grid]
nx = 30
nt = 30
"""


def write(tmp_path, extra="", mode="theorem1", g="[[0, 0], [0, 0]]", a="[[0, 0], [1, 0]]", name="run.toml"):
    path = tmp_path / name
    path.write_text(BASE.format(mode=mode, g=g, a=a) + textwrap.dedent(extra))
    return path


CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_check_theorem1(tmp_path, capsys):
    assert main(["check", str(write(tmp_path)), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "Theorem 1 applies, i0=1" in out
    data = json.loads((tmp_path / "check.json").read_text())
    assert data["theorem1"] == {"applies": True, "i0": 1}
    assert (tmp_path / "det_H.csv").exists()


def test_check_decoupled_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, a="[[0, 0], [0, 0]]")
    assert main(["check", str(cfg), "--out", str(tmp_path)]) == 2
    assert "not controllable by Theorem 1 (necessity)" in capsys.readouterr().out


def test_check_case_ii_shipped_config(tmp_path, capsys):
    assert main(["check", str(CONFIGS / "case_ii.toml"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "Theorem 2 case (ii) applies" in out
    value = float(out.split("min |det H| = ")[1].split()[0])
    assert value == pytest.approx(16.0, rel=1e-12)


def test_config_error_exit_code(tmp_path, capsys):
    bad = write(tmp_path, "\n[hum]\ncg_tol = 2.0\n")
    assert main(["hum", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "hum.cg_tol" in err and "run.toml:" in err
    broken = tmp_path / "broken.toml"
    broken.write_text("T = \n")
    assert main(["check", str(broken), "--out", str(tmp_path)]) == 1
    assert main(["check", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 1


def test_unknown_key_reports_line(tmp_path):
    path = write(tmp_path, "\n[hum]\nkk = 1\n")
    with pytest.raises(ConfigError, match=r"hum\.kk"):
        load_config(path)


def test_condition_exit_code(tmp_path):
    cfg = write(tmp_path, mode="case_ii", g="[[0, 0], [1, 0]]", a="[[0, 0], [1, 0]]")
    assert main(["pipeline", str(cfg), "--out", str(tmp_path)]) == 2


def test_solver_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "\n[hum]\nk = 1e8\ncg_tol = 1e-14\ncg_max_iter = 1\n")
    assert main(["hum", str(cfg), "--out", str(tmp_path)]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_pipeline_report(tmp_path):
    cfg = write(tmp_path, "\n[hum]\nk = 1e4\n")
    assert main(["pipeline", str(cfg), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["support_violation"] == 0.0
    assert report["terminal_norm"] < report["y0_norm"]
    rows = list(csv.reader((tmp_path / "u.csv").open()))
    assert rows[0] == ["t", "x", "component", "value"]
    assert len(rows) == 1 + 31 * 30 * 1


def test_verify_identity_zero_input(tmp_path, capsys):
    cfg = write(tmp_path, "\n[verify]\nlevels = [16, 32]\nzero_input = true\n")
    assert main(["verify-identity", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "identity.csv").open()))
    assert [float(r[1]) for r in rows[1:]] == [0.0, 0.0]
    assert "order=nan" in capsys.readouterr().out


def test_sweep_rows_monotone(tmp_path):
    cfg = write(tmp_path, "\n[hum]\nks = [1e2, 1e4, 1e6]\n")
    assert main(["sweep", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    norms = [float(r["terminal_norm"]) for r in rows]
    assert len(rows) == 3 and norms[0] > norms[1] > norms[2]


def test_outputs_are_deterministic(tmp_path):
    cfg = write(tmp_path, "\n[hum]\nk = 1e4\n[output]\nformats = [\"csv\", \"json\", \"binary\"]\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", str(cfg), "--out", str(a)]) == 0
    assert main(["pipeline", str(cfg), "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert "u.bin" in names and names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_binary_output_layout(tmp_path):
    cfg = write(tmp_path, "\n[hum]\nk = 1e4\n[output]\nformats = [\"binary\"]\n")
    assert main(["hum", str(cfg), "--out", str(tmp_path)]) == 0
    raw = (tmp_path / "control.bin").read_bytes()
    nx, nt, ncomp = np.frombuffer(raw[:24], dtype="<i8")
    assert (nx, nt, ncomp) == (30, 30, 2)
    assert len(raw) == 24 + 8 * (nt + 1) * ncomp * nx
    assert not (tmp_path / "control.csv").exists()


def test_thread_limit_env(tmp_path, monkeypatch):
    cfg = write(tmp_path, "\n[hum]\nk = 1e4\n")
    assert main(["hum", str(cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("FICTITIOUS_CONTROL_THREADS", "1")
    assert main(["hum", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "hum.json").read_text() == (tmp_path / "b" / "hum.json").read_text()


def test_weights_and_poincare(tmp_path, capsys):
    cfg = write(tmp_path, "\n[poincare]\ng = 0.0\na = 1.0\nnx = 50\n")
    assert main(["weights", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "weights.csv").exists()
    assert main(["poincare", str(cfg), "--out", str(tmp_path)]) == 0
    assert "rayleigh_min=1" in capsys.readouterr().out
    data = json.loads((tmp_path / "poincare.json").read_text())
    assert data["rayleigh_min"] == 1.0
