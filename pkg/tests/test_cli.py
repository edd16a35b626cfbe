import csv
import json

import pytest

from eigentube.cli import build_parser, main


def _json(p):
    return json.loads(p.read_text())


def test_sphere_sweep(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["sphere-sweep", "--family", "highest", "--l", "16,32,64", "--eps0", "0.1",
                 "--grid-k", "128", "--seed", "7", "--out", str(out)]) == 0
    rep = _json(out)
    assert rep["schema"] == "eigentube/1" and rep["family"] == "highest_weight"
    assert rep["corollary"]["kind"] == "corollary"
    assert "l4: slope" in capsys.readouterr().out


def test_torus_l4_csv(tmp_path):
    out = tmp_path / "z.csv"
    assert main(["torus-l4", "--nmax", "2000", "--trials", "3", "--circles", "6",
                 "--seed", "7", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) > 1 and all(len(r) == len(rows[0]) for r in rows)


def test_lattice_arcs_csv(tmp_path, capsys):
    out = tmp_path / "a.csv"
    assert main(["lattice-arcs", "--nmax", "2000", "--aperture-exp", "-0.6", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].count(",") >= 1
    assert "running max" in capsys.readouterr().out


def test_microlocal_check(tmp_path):
    out = tmp_path / "mkn.json"
    assert main(["microlocal-check", "--lambda", "32", "--grid", "256", "--eps0", "0.1",
                 "--fields", "1", "--out", str(out)]) == 0
    rep = _json(out)
    assert rep["partition_error"] <= 1e-10
    assert rep["leak"]["fraction"] <= 1e-4


def test_osc_norm(tmp_path):
    out = tmp_path / "osc.json"
    assert main(["osc-norm", "--lambdas", "20,30,40,50", "--thetas", "0.4,0.2,0.1,0.05",
                 "--metric", "radial", "--eta", "0.05", "--out", str(out)]) == 0
    rep = _json(out)
    assert len(rep["lambda"]["norms"]) == 4 and "slope" in rep["theta"]


def test_config_file(tmp_path):
    out = tmp_path / "a.csv"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nmax": 500, "aperture-exp": -0.7, "out": str(out)}))
    assert main(["--config", str(cfg), "lattice-arcs"]) == 0
    assert out.exists()
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit):
        main(["--config", str(cfg), "lattice-arcs"])


def test_parser_flags():
    p = build_parser()
    a = p.parse_args(["microlocal-check", "--lambda", "64"])
    assert a.lam == 64 and a.grid == 256
    a = p.parse_args(["verify"])
    assert a.out == "verify.json" and a.seed == 7
    with pytest.raises(SystemExit):
        p.parse_args(["sphere-sweep", "--family", "nope"])
