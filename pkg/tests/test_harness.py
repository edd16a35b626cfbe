import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigentube import harness
from eigentube.harness import (SCHEMA, ConfigError, ScalingReport, SweepConfig, config_hash,
                               corollary_report, dumps, fit_loglog, run_sweep, write_csv,
                               write_json)
from eigentube.models import DomainError

LAMS = [16.0, 32.0, 64.0, 128.0, 256.0]


def test_fit_exact_power():
    s, _, r = fit_loglog([(x, x ** 2) for x in LAMS])
    assert abs(s - 2.0) <= 1e-12 and r <= 1e-12


def test_fit_constant():
    s, i, _ = fit_loglog([(x, 3.0) for x in LAMS])
    assert abs(s) <= 1e-12 and abs(i - math.log(3.0)) <= 1e-12


def test_fit_noisy_eighth_power():
    rng = np.random.default_rng(0)
    s, _, _ = fit_loglog([(x, x ** 0.125 * (1 + 0.01 * rng.standard_normal())) for x in LAMS])
    assert abs(s - 0.125) <= 0.01


def test_fit_errors():
    with pytest.raises(DomainError):
        fit_loglog([(1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(DomainError):
        fit_loglog([(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)])


@given(st.floats(1e-6, 1e6), st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_fit_scale_invariance(c, p):
    base = fit_loglog([(x, x ** p) for x in LAMS])
    scaled = fit_loglog([(x, c * x ** p) for x in LAMS])
    assert abs(scaled[0] - base[0]) <= 1e-9
    assert abs(scaled[1] - base[1] - math.log(c)) <= 1e-9


def test_config_errors():
    with pytest.raises(ConfigError):
        SweepConfig("highest", [])
    with pytest.raises(ConfigError):
        SweepConfig("bogus", [16])
    with pytest.raises(ConfigError):
        SweepConfig("zonal", [16], eps0s=[0.0])
    with pytest.raises(DomainError):
        SweepConfig("zonal", [5000])


def test_config_hash_ignores_out():
    a = SweepConfig("zonal", [16, 32], out="a.json")
    b = SweepConfig("zonal", [16, 32], out="b.json")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(SweepConfig("zonal", [16, 32], seed=8))


def test_dumps_floats_and_determinism():
    obj = {"a": 0.1, "b": [1.0, 2, np.float64(1 / 3)], "c": float("nan"), "d": np.int64(4),
           "e": {"f": True, "g": None}, "h": np.array([0.5, 1e-300])}
    text = dumps(obj)
    assert text == dumps(obj)
    back = json.loads(text)
    assert back["b"][2] == 1 / 3 and back["a"] == 0.1
    assert back["c"] is None and back["d"] == 4 and back["h"] == [0.5, 1e-300]
    assert "0.33333333333333331" in text


def test_write_json_and_csv(tmp_path):
    p = tmp_path / "r.json"
    write_json(str(p), {"x": 1.5})
    assert json.loads(p.read_text())["schema"] == SCHEMA
    q = tmp_path / "t.csv"
    write_csv(str(q), ["n", "v"], [(5, 0.1), (25, 2.0)])
    lines = q.read_text().splitlines()
    assert lines == ["n,v", "5,0.10000000000000001", "25,2.0"]


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("EIGENTUBE_THREADS", "3")
    assert harness.thread_cap() == 3
    monkeypatch.setenv("EIGENTUBE_THREADS", "junk")
    assert harness.thread_cap() == 1


def test_sweep_collects_point_failures(monkeypatch):
    real = harness._sweep_point

    def flaky(cfg, l, pi_hat):
        if l == 24:
            raise DomainError("synthetic failure")
        return real(cfg, l, pi_hat)

    monkeypatch.setattr(harness, "_sweep_point", flaky)
    rep = run_sweep(SweepConfig("highest", [16, 24, 32, 48, 8], grid_k=64))
    # l = 8 is too coarse for the eps0 = 0.1 tube at oversample 1
    assert [f["l"] for f in rep["failures"]] == [24, 8]
    assert "under-resolved" in rep["failures"][1]["error"]
    assert {r["quantity"] for r in rep["reports"]} >= {"l4", "tube_l2", "kn_squared@0.1"}


@pytest.fixture(scope="module")
def small_sweeps():
    return {fam: run_sweep(SweepConfig(fam, [16, 32, 64, 128], grid_k=256))
            for fam in ("highest", "zonal")}


def test_sweep_report_contents(small_sweeps):
    rep = small_sweeps["highest"]
    assert rep["schema"] == SCHEMA and not rep["failures"]
    slopes = {r["quantity"]: r["slope"] for r in rep["reports"]}
    assert abs(slopes["l4"] - 0.125) <= 0.02
    for p in rep["points"]:
        kn = p["kn"]["0.1"]
        assert "quad_error" in kn and "delta" in kn and "coarse" in kn
        assert p["tube_grid"][0] >= p["grid"][0]
        assert len(p["tube_quad_error"]) == 2
    assert rep["config_hash"] == config_hash(SweepConfig("highest", [16, 32, 64, 128], grid_k=256))


def test_sweep_zonal_l4_flat(small_sweeps):
    slopes = {r["quantity"]: r["slope"] for r in small_sweeps["zonal"]["reports"]}
    assert slopes["l4"] <= 0.05


def test_sweep_reproducible(small_sweeps):
    again = run_sweep(SweepConfig("highest", [16, 32, 64, 128], grid_k=256))
    assert dumps(again) == dumps(small_sweeps["highest"])


def test_corollary_real_sweeps(small_sweeps):
    rows = {r["family"]: r for r in corollary_report(list(small_sweeps.values()))["rows"]}
    assert rows["highest_weight"]["verdict"] == "consistent, saturated"
    assert rows["highest_weight"]["implication_ok"]
    assert rows["zonal"]["implication_ok"]


def _fake(family, slopes):
    return {"family": family,
            "reports": [{"quantity": q, "slope": s} for q, s in slopes.items()]}


def test_corollary_synthetic_verdicts():
    rep = corollary_report([
        _fake("a", {"l4": 0.125, "tube_l4": 0.125, "tube_l2": 0.0, "restriction": 0.25}),
        _fake("b", {"l4": 0.0, "tube_l4": 0.0, "tube_l2": -0.25, "restriction": 0.0}),
        _fake("c", {"l4": 0.0, "tube_l4": 0.125, "tube_l2": 0.0, "restriction": 0.0}),
        _fake("d", {"l4": 0.0}),
    ])
    rows = {r["family"]: r for r in rep["rows"]}
    assert rows["a"]["verdict"] == "consistent, saturated"
    assert rows["b"]["verdict"] == "consistent, decaying"
    assert rows["b"]["tube_premise"] and rows["b"]["l4_conclusion"] and rows["b"]["implication_ok"]
    assert rows["c"]["verdict"].startswith("inconsistent")
    assert rep["missing"] == [{"family": "d", "missing": ["tube_l4", "tube_l2", "restriction"]}]


def test_corollary_log_limited_flag():
    rep = corollary_report([_fake("z", {"l4": 0.09, "tube_l4": 0.09, "tube_l2": -0.03,
                                        "restriction": 0.1})])
    assert "log-limited" in rep["rows"][0]["verdict"]


def test_scaling_report_dict():
    r = ScalingReport.from_points("f", "q", [(x, x) for x in LAMS])
    d = r.to_dict()
    assert abs(d["slope"] - 1) <= 1e-12 and d["points"][0] == [16.0, 16.0]


def test_corollary_random_harmonics():
    sweeps = [run_sweep(SweepConfig("random", [16, 32, 64, 128], grid_k=256, seed=s))
              for s in range(5)]
    rows = corollary_report(sweeps)["rows"]
    tube = np.mean([r["exponents"]["tube_l2"] for r in rows])
    l4 = np.mean([r["exponents"]["l4"] for r in rows])
    assert abs(tube + 0.25) <= harness.HALF_WIDTH
    assert abs(l4) <= harness.HALF_WIDTH
    assert all(r["implication_ok"] for r in rows)
