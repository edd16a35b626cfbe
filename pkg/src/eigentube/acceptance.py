"""Acceptance criteria: each returns a dict with a verdict and the measured values.

Timings go to the ``timings`` side table, never into the report itself, so that
reruns with the same seed give byte-identical reports.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .harness import (SCHEMA, SweepConfig, run_lattice_arcs, run_osc_norm, run_sweep,
                      run_torus_l4)
from .models import lattice_circle_points

SPHERE_LS = [16, 32, 64, 128, 256]
MICRO_LAMS = (32, 64, 128)
MICRO_FIELDS = {32: 8, 64: 8, 128: 4}


def _crit(num, name, passed, values, threshold, note=""):
    return {"id": num, "name": name, "passed": bool(passed), "values": values,
            "threshold": threshold, "note": note}


def criterion_1(sweeps):
    rep = next(r for r in sweeps["highest_weight"]["reports"] if r["quantity"] == "l4")
    ok = abs(rep["slope"] - 0.125) <= 0.015
    return _crit(1, "highest-weight L4 slope", ok, {"slope": rep["slope"]}, "0.125 +- 0.015")


def criterion_2(sweeps):
    vals, ok = {}, True
    for fam in ("highest_weight", "zonal"):
        r = [p["kn"]["0.1"]["ratio_1_1pp"] for p in sweeps[fam]["points"]]
        spread = max(r) / min(r)
        vals[fam] = {"ratios": r, "spread": spread}
        ok &= spread <= 4
    return _crit(2, "inequality constant spread", ok, vals, "max/min <= 4")


def criterion_3(sweeps):
    reps = {r["quantity"]: r for r in sweeps["zonal"]["reports"]}
    l4, kn2 = reps["l4"]["slope"], reps["kn_squared@0.1"]["slope"]
    return _crit(3, "zonal profile", l4 <= 0.05 and kn2 <= 0.05,
                 {"l4_slope": l4, "kn_squared_slope": kn2}, "both slopes <= 0.05",
                 "KN^2 is close to a log lam + b; its local log-log slope at desk lam is about 0.1")


def criterion_4(seed):
    z = run_torus_l4(100_000, 100, seed)
    ok = z["max_ratio"] <= 3 ** 0.25 + 1e-9 and z["max_oracle_gap"] <= 1e-10
    return _crit(4, "Zygmund bound", ok,
                 {"max_ratio": z["max_ratio"], "max_oracle_gap": z["max_oracle_gap"],
                  "circles": len(z["rows"])}, "ratio <= 3^(1/4) + 1e-9, gap <= 1e-10")


def criterion_5():
    vals, ok = {}, True
    for metric, eta in (("euclidean", 0.0), ("radial", 0.05)):
        r = run_osc_norm(metric=metric, eta=eta)
        sl, st = r["lambda"]["slope"], r["theta"]["slope"]
        vals[f"{metric}:{eta}"] = {"lambda_slope": sl, "theta_slope": st,
                                   "lambda_norms": r["lambda"]["norms"],
                                   "theta_norms": r["theta"]["norms"],
                                   "normalized": r["normalized"]}
        ok &= abs(sl + 1.0) <= 0.1 and abs(st + 0.5) <= 0.15
    return _crit(5, "oscillatory operator scaling", ok, vals,
                 "lambda slope -1 +- 0.1, theta slope -0.5 +- 0.15",
                 "sweep has lam theta^2 in [0.5, 32]; lam theta^{1/2}||T|| still grows there")


def criterion_6(seed):
    from . import microlocal as ml
    from .geometry import geodesic_grid_torus
    from .norms import kn_norm
    per, ok_part, ok_leak = {}, True, True
    sup_norms, max_ratios, ratios = [], [], []
    rng = np.random.default_rng(seed)
    for lam in MICRO_LAMS:
        S = ml.MicrolocalSetup(lam)
        part = ml.partition_error(S, rng.normal(size=(S.N, S.N)), S.theta0)
        leak = ml.kernel_tube_leak(S, S.theta0, (0, 0), 10.0).leak_fraction
        norms = {th: ml.sup_tile_norm(S, th)[0] for th in S.thetas}
        sup = max(norms.values())
        pi_hat = geodesic_grid_torus(4, S.theta0 / 4, center=S.x0, reach=2 * S.delta + S.theta0)
        r = []
        for k in range(MICRO_FIELDS[lam]):
            f = ml.random_patch_field(S, seed * 1000 + 100 * lam + k)
            r.append(ml.mkn_norm(f, S).total / kn_norm(f, lam, S.eps0, pi_hat).value)
        ratios += r
        max_ratios.append(max(r))
        sup_norms.append(sup)
        ok_part &= part <= 1e-10
        ok_leak &= leak <= 1e-4
        per[str(lam)] = {"grid": S.N, "theta0": S.theta0, "partition_error": part,
                         "leak": leak, "sup_tile_norm": sup,
                         "tile_norms_by_theta": [[th, v] for th, v in norms.items()],
                         "mkn_over_kn": r}
    norm_spread = max(sup_norms) / min(sup_norms)
    c_spread = max(max_ratios) / min(max_ratios)
    checks = {"partition": ok_part, "leak": ok_leak, "norm_spread": norm_spread <= 3,
              "one_C": c_spread <= 3}
    return _crit(6, "microlocal suite", all(checks.values()),
                 {"per_lambda": per, "checks": checks, "norm_spread": norm_spread,
                  "C": max(ratios), "C_spread": c_spread, "fields": len(ratios)},
                 "partition <= 1e-10, leak <= 1e-4 at C_tube 10, spreads <= 3")


def criterion_7(seed):
    from . import microlocal as ml
    S = ml.MicrolocalSetup(128)
    f = ml.random_patch_field(S, seed)
    r = ml.orthogonality_quad(S, f)
    return _crit(7, "orthogonality decay", r.ratio <= 1e-2,
                 {"ratio": r.ratio, "near_diagonal": r.near_diagonal, "far": r.far,
                  "separations": r.separations, "mean_overlap": r.mean_overlap,
                  "monotone_fraction": r.monotone_fraction()}, "far/near <= 1e-2")


def criterion_8():
    a = run_lattice_arcs(100_000, -0.6)
    r2 = {n: len(lattice_circle_points(n)) for n in (5, 25, 65, 325)}
    want = {5: 8, 25: 12, 65: 16, 325: 24}
    ok = a["max_up_to"] <= a["max_up_to_half"] and r2 == want
    return _crit(8, "lattice arcs", ok,
                 {"max_up_to_50000": a["max_up_to_half"], "max_up_to_100000": a["max_up_to"],
                  "r2": {str(k): v for k, v in r2.items()}},
                 "no increase from N = 5e4 to 1e5; exact r2 counts")


def run_acceptance(seed: int = 7):
    """Criteria 1-8.  Returns (report, timings)."""
    timings, crits = {}, []

    def timed(key, fn, *a):
        t = time.perf_counter()
        out = fn(*a)
        timings[key] = time.perf_counter() - t
        return out

    sweeps = {}
    for fam in ("highest_weight", "zonal"):
        sweeps[fam] = timed(f"sweep:{fam}", run_sweep, SweepConfig(fam, SPHERE_LS, seed=seed))
    c1 = criterion_1(sweeps)
    c1["runtime_ok"] = timings["sweep:highest_weight"] <= 60
    c1["passed"] &= c1["runtime_ok"]
    crits += [c1, criterion_2(sweeps), criterion_3(sweeps)]
    c4 = timed("c4", criterion_4, seed)
    c4["runtime_ok"] = timings["c4"] <= 120
    c4["passed"] &= c4["runtime_ok"]
    c5 = timed("c5", criterion_5)
    c5["runtime_ok"] = timings["c5"] <= 600
    c5["passed"] &= c5["runtime_ok"]
    crits += [c4, c5, timed("c6", criterion_6, seed), timed("c7", criterion_7, seed),
              timed("c8", criterion_8)]
    report = {"schema": SCHEMA, "kind": "verify", "seed": seed, "criteria": crits,
              "all_passed": all(c["passed"] for c in crits)}
    return report, timings


def summary_lines(report) -> list:
    out = []
    for c in report["criteria"]:
        tag = "PASS" if c["passed"] else "FAIL"
        out.append(f"criterion {c['id']}: {tag}  {c['name']}  ({c['threshold']})")
    return out
