import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mestim import __version__
from mestim.cli import main
from mestim.replicate import DOSE_RESPONSE_CONFIG


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def ryegrass_csv(tmp_path):
    from importlib import resources
    text = resources.files("mestim.data").joinpath("ryegrass.csv").read_text()
    return write(tmp_path / "ryegrass.csv", text)


def test_fit_mean(tmp_path, capsys):
    cfg = write(tmp_path / "m.cfg", "family = mean\ndata.outcome = y\n")
    data = write(tmp_path / "d.csv", "y\n1\n2\n3\n4\n5\n")
    out = tmp_path / "res.json"
    assert main(["fit", cfg, data, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    p = doc["parameters"][0]
    assert_allclose(p["estimate"], 3.0, atol=1e-12)
    assert_allclose(p["std_error"], np.sqrt(0.4), atol=1e-12)
    assert doc["covariance"] == {"rows": 1, "cols": 1,
                                 "values": [pytest.approx(0.4, abs=1e-12)]}
    assert doc["solver"]["converged"] is True
    assert len(doc["provenance"]["config_sha256"]) == 64
    assert "3.0000" in capsys.readouterr().out


def test_fit_dose_response_row(tmp_path, ryegrass_csv, capsys):
    cfg = write(tmp_path / "dr.cfg", DOSE_RESPONSE_CONFIG)
    assert main(["fit", cfg, ryegrass_csv, "--digits", "2"]) == 0
    rows = capsys.readouterr().out.splitlines()
    ec = [r for r in rows if r.startswith("EC20")]
    assert len(ec) == 1
    assert ec[0].split()[1] == "1.86"
    assert ec[0].endswith("(1.58, 2.14)")


def test_unknown_family_exits_2(tmp_path, capsys):
    cfg = write(tmp_path / "bad.cfg", "family = quantile\ndata.outcome = y\n")
    data = write(tmp_path / "d.csv", "y\n1\n2\n")
    assert main(["fit", cfg, data]) == 2
    assert "quantile" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    data = write(tmp_path / "d.csv", "y\n1\n2\n")
    assert main(["fit", str(tmp_path / "nope.cfg"), data]) == 2


@pytest.mark.parametrize("csv", ["y\n1\n\n2,3\n", "x\n1\n2\n", "y\n1\nNA\n"])
def test_data_errors_exit_3(tmp_path, capsys, csv):
    cfg = write(tmp_path / "m.cfg", "family = mean\ndata.outcome = y\n")
    data = write(tmp_path / "d.csv", csv)
    assert main(["fit", cfg, data]) == 3
    assert "data error" in capsys.readouterr().err


def test_no_convergence_exits_4_and_writes_document(tmp_path, ryegrass_csv):
    cfg = write(tmp_path / "c.cfg", "family = loglogistic3\ndata.outcome = rootl\n"
                "data.dose = conc\nsolver.max_iter = 1\n")
    out = tmp_path / "res.json"
    assert main(["fit", cfg, ryegrass_csv, "--out", str(out)]) == 4
    doc = json.loads(out.read_text())
    assert doc["solver"]["converged"] is False
    assert doc["covariance"] is None
    assert len(doc["parameters"]) == 3


def test_summary_matches_document(tmp_path, ryegrass_csv, capsys):
    cfg = write(tmp_path / "dr.cfg", DOSE_RESPONSE_CONFIG)
    out = tmp_path / "res.json"
    assert main(["fit", cfg, ryegrass_csv, "--out", str(out), "--digits", "3"]) == 0
    doc = json.loads(out.read_text())
    table = capsys.readouterr().out.splitlines()
    for p in doc["parameters"]:
        row = next(r for r in table if r.split()[0] == p["name"])
        fields = row.replace("(", " ").replace(")", " ").replace(",", " ").split()
        expected = [f"{p[k]:.3f}" for k in
                    ("estimate", "std_error", "ci_lower", "ci_upper")]
        assert fields[1:] == expected


def test_tolerance_env_var(tmp_path, monkeypatch, ryegrass_csv):
    cfg = write(tmp_path / "dr.cfg", DOSE_RESPONSE_CONFIG)
    out = tmp_path / "res.json"
    monkeypatch.setenv("SANDWICH_SOLVER_TOL", "1e-6")
    assert main(["fit", cfg, ryegrass_csv, "--out", str(out)]) == 0
    assert json.loads(out.read_text())["solver"]["tol"] == 1e-6
    monkeypatch.setenv("SANDWICH_SOLVER_TOL", "banana")
    assert main(["fit", cfg, ryegrass_csv]) == 2


@pytest.mark.parametrize("example,files", [
    ("robust-line", {"points.csv", "lines.csv", "results.json"}),
    ("dose-response", {"points.csv", "curve.csv", "model.cfg", "results.json"}),
    ("standardize", {"data.csv", "forest.csv", "model.cfg", "results.json"}),
])
def test_replicate_is_deterministic(tmp_path, example, files):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["replicate", example, "--seed", "7", "--out", str(a)]) == 0
    assert main(["replicate", example, "--seed", "7", "--out", str(b)]) == 0
    assert set(os.listdir(a)) == files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_replicated_config_fits(tmp_path, capsys):
    d = tmp_path / "dr"
    assert main(["replicate", "dose-response", "--out", str(d)]) == 0
    assert "EC20 = 1.86 (95% CI: 1.58, 2.14)" in capsys.readouterr().out
    assert main(["fit", str(d / "model.cfg"), str(d / "points.csv")]) == 0
    d = tmp_path / "st"
    assert main(["replicate", "standardize", "--out", str(d)]) == 0
    assert main(["fit", str(d / "model.cfg"), str(d / "data.csv")]) == 0


def test_version_and_bad_example(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
    assert main(["replicate", "figure-9"]) == 2
