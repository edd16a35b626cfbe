"""Sweeps, log-log scaling fits, the co-scaling report, and persistence.

Reports are plain dicts written as JSON with a ``schema`` field; floats are
written with 17 significant digits so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import geodesic_grid_sphere, geodesic_grid_torus, sphere_grid
from .models import (DomainError, SphereHarmonicSpec, TorusEigenfunction,
                     eval_sphere_harmonic, lattice_circle_points)
from .norms import (DEFAULT_EPS0, kn_norm, lp_norm, ratio_1_1pp, ratio_1_1ppp,
                    restriction_norm, sup_tube_mass, tube_width)

SCHEMA = "eigentube/1"
HALF_WIDTH = 0.05        # default verdict tolerance on exponents
O_MINUS_MARGIN = 0.02    # "o_-" proxy: slope at least this far below the reference

FAMILY_ALIASES = {"zonal": "zonal", "highest": "highest_weight", "highest_weight": "highest_weight",
                  "random": "random_gaussian", "random_gaussian": "random_gaussian",
                  "single": "single_lm", "single_lm": "single_lm"}


class ConfigError(DomainError):
    pass


def thread_cap() -> int:
    try:
        n = int(os.environ.get("EIGENTUBE_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


# --------------------------------------------------------------------------
# persistence

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if all(c not in s for c in ".en"):
        s += ".0"
    return s


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written at 17 significant digits."""
    def enc(o, level):
        pad, inner = " " * (indent * level), " " * (indent * (level + 1))
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            return _fmt_float(o)
        if isinstance(o, (int, str)):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{inner}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, level) for v in o) + "]"
            return "[\n" + ",\n".join(inner + enc(v, level + 1) for v in o) + "\n" + pad + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")
    return enc(_plain(obj), 0) + "\n"


def write_json(path: str, report: dict) -> None:
    report = dict(report)
    report.setdefault("schema", SCHEMA)
    with open(path, "w") as fh:
        fh.write(dumps(report))


def write_csv(path: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_float(v) if isinstance(v, float) else v for v in _plain(list(row))])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def config_hash(cfg) -> str:
    d = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else dict(cfg)
    d.pop("out", None)
    return hashlib.sha256(dumps(d).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# fits

def fit_loglog(points):
    """Least squares of log v on log lam; returns (slope, intercept, max |residual|)."""
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 3:
        raise DomainError("need at least 3 points for a fit")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    return float(slope), float(icpt), float(np.abs(resid).max())


@dataclass
class ScalingReport:
    family: str
    quantity: str
    points: list
    slope: float
    intercept: float
    residual: float
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_points(cls, family, quantity, points, meta=None):
        s, i, r = fit_loglog(points)
        return cls(family, quantity, [list(p) for p in points], s, i, r, dict(meta or {}))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# sphere sweeps

@dataclass
class SweepConfig:
    family: str
    ls: list
    eps0s: list = field(default_factory=lambda: [DEFAULT_EPS0])
    grid_k: int = 512
    oversample: int = 1
    seed: int = 7
    out: Optional[str] = None

    def __post_init__(self):
        if not self.ls:
            raise ConfigError("empty degree list")
        if not self.eps0s:
            raise ConfigError("empty eps0 list")
        if self.family not in FAMILY_ALIASES:
            raise ConfigError(f"unknown family {self.family!r}")
        for e in self.eps0s:
            if not 0 < e <= 0.5:
                raise ConfigError("eps0 must lie in (0, 1/2]")
        if self.grid_k < 16 or self.oversample < 1:
            raise ConfigError("grid_k >= 16 and oversample >= 1 required")
        SphereHarmonicSpec(self.canonical_family, max(self.ls), self._order(max(self.ls)))

    @property
    def canonical_family(self) -> str:
        return FAMILY_ALIASES[self.family]

    def _order(self, l: int) -> int:
        return l // 2 if self.canonical_family == "single_lm" else 0

    def spec(self, l: int) -> SphereHarmonicSpec:
        return SphereHarmonicSpec(self.canonical_family, l, self._order(l), self.seed)


def _sweep_point(cfg: SweepConfig, l: int, pi_hat) -> dict:
    spec = cfg.spec(l)
    grid = sphere_grid(l, cfg.oversample)
    f = eval_sphere_harmonic(spec, grid)
    lam = spec.frequency
    row = {"l": l, "lam": lam, "grid": list(grid.shape), "l4": lp_norm(f, 4), "l2": lp_norm(f, 2)}
    kn = {}
    for e in cfg.eps0s:
        r = kn_norm(f, lam, e, pi_hat)
        kn[str(e)] = {"value": r.value, "coarse": r.coarse_value, "sup_mass": r.sup_mass,
                      "delta": r.delta, "quad_error": r.quad_error,
                      "unit_arc_value": r.unit_arc_value, "converged": r.converged,
                      "ratio_1_1pp": ratio_1_1pp(f, lam, e, pi_hat, kn=r),
                      "pole": list(r.geodesic.pole)}
    row["kn"] = kn
    delta = tube_width(lam, 0.0)
    ov = cfg.oversample
    while 3 * sphere_grid(l, ov).spacing > delta:
        ov += 1
    if ov != cfg.oversample:
        f = eval_sphere_harmonic(spec, sphere_grid(l, ov))
    row["tube_grid"] = list(f.grid.shape)
    dens = np.abs(f.values) ** 2
    _, m2, g2, _, q2 = sup_tube_mass(f, delta, pi_hat, density=dens)
    _, m4, _, _, q4 = sup_tube_mass(f, delta, pi_hat, density=dens ** 2)
    row["tube_l2"] = math.sqrt(m2)
    row["tube_l4"] = m4 ** 0.25
    row["tube_quad_error"] = [q2, q4]
    row["ratio_1_1ppp"] = list(ratio_1_1ppp(f, lam, pi_hat))
    row["restriction"] = restriction_norm(f, g2)
    return row


def run_sweep(cfg: SweepConfig) -> dict:
    """Per-degree quantities and scaling reports for one sphere family.

    Point failures are collected and the sweep continues.
    """
    pi_hat = geodesic_grid_sphere(cfg.grid_k)

    def one(l):
        try:
            return _sweep_point(cfg, l, pi_hat)
        except DomainError as exc:
            return {"l": l, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=thread_cap()) as ex:
        rows = list(ex.map(one, cfg.ls))
    ok = [r for r in rows if "error" not in r]
    fam = cfg.canonical_family
    meta = {"config_hash": config_hash(cfg), "grid_k": cfg.grid_k,
            "geodesic_resolution": pi_hat.resolution, "oversample": cfg.oversample}
    reports = []
    if len(ok) >= 3:
        def rep(name, fn):
            try:
                reports.append(ScalingReport.from_points(
                    fam, name, [(r["lam"], fn(r)) for r in ok], meta).to_dict())
            except DomainError as exc:
                reports.append({"family": fam, "quantity": name, "error": str(exc)})
        rep("l4", lambda r: r["l4"])
        rep("tube_l4", lambda r: r["tube_l4"])
        rep("tube_l2", lambda r: r["tube_l2"])
        rep("restriction", lambda r: r["restriction"])
        for e in cfg.eps0s:
            rep(f"kn_squared@{e}", lambda r, e=e: r["kn"][str(e)]["value"] ** 2)
            rep(f"ratio_1_1pp@{e}", lambda r, e=e: r["kn"][str(e)]["ratio_1_1pp"])
    return {"schema": SCHEMA, "kind": "sphere-sweep", "family": fam,
            "config": asdict(cfg) | {"out": None}, "config_hash": meta["config_hash"],
            "geodesic_resolution": pi_hat.resolution, "points": rows, "reports": reports,
            "failures": [r for r in rows if "error" in r]}


# --------------------------------------------------------------------------
# co-scaling report

REFERENCES = {"l4": 0.125, "tube_l4": 0.125, "tube_l2": 0.0}


def _slope(sweep: dict, quantity: str):
    for r in sweep.get("reports", []):
        if r.get("quantity") == quantity and "slope" in r:
            return r["slope"]
    return None


def corollary_report(sweeps: Sequence[dict], half_width: float = HALF_WIDTH,
                     margin: float = O_MINUS_MARGIN) -> dict:
    """Exponents of the global L^4 norm and of sup tube L^4 / L^2 norms at width
    lam^{-1/2}, with an equivalence verdict and the restriction/tube-decay implication."""
    rows, missing = [], []
    for sw in sweeps:
        fam = sw.get("family")
        ex = {q: _slope(sw, q) for q in (*REFERENCES, "restriction")}
        absent = [q for q, v in ex.items() if v is None]
        if absent:
            missing.append({"family": fam, "missing": absent})
            continue
        small = {q: ex[q] <= REFERENCES[q] - margin for q in REFERENCES}
        borderline = [q for q in REFERENCES
                      if abs(ex[q] - (REFERENCES[q] - margin)) <= half_width]
        if all(small.values()):
            verdict = "consistent, decaying"
        elif not any(small.values()):
            verdict = "consistent, saturated"
        else:
            verdict = "inconsistent"
        if borderline and verdict != "consistent, saturated":
            verdict += " (log-limited: " + ", ".join(borderline) + ")"
        prem_restr = ex["restriction"] <= half_width
        prem_tube = ex["tube_l2"] <= -0.25 + half_width
        concl = ex["l4"] <= half_width
        rows.append({"family": fam, "exponents": ex, "o_minus": small, "verdict": verdict,
                     "restriction_premise": prem_restr, "tube_premise": prem_tube,
                     "l4_conclusion": concl,
                     "implication_ok": (not (prem_restr or prem_tube)) or concl})
    return {"schema": SCHEMA, "kind": "corollary", "half_width": half_width,
            "o_minus_margin": margin,
            "o_minus_proxy": f"fitted slope <= reference - {margin}",
            "rows": rows, "missing": missing}


# --------------------------------------------------------------------------
# torus and lattice runs

def zygmund_circles(nmax: int, count: int = 50, seed: int = 7) -> list:
    """Half the circles with the most lattice points, half seeded at random among n <= nmax."""
    from .lattice import _points_by_n
    groups = _points_by_n(nmax)
    ns = np.array(sorted(groups))
    sizes = np.array([len(groups[int(n)]) for n in ns])
    order = np.lexsort((ns, -sizes))
    top = [int(n) for n in ns[order[: count // 2]]]
    rest = np.setdiff1d(ns, top)
    rng = np.random.default_rng(seed)
    pick = rng.choice(rest, size=min(count - len(top), rest.size), replace=False)
    return sorted(top + [int(n) for n in pick])


def random_torus_eigenfunction(n: int, rng) -> TorusEigenfunction:
    pts = lattice_circle_points(n)
    a = rng.normal(size=len(pts)) + 1j * rng.normal(size=len(pts))
    return TorusEigenfunction(n, {p: complex(c) for p, c in zip(pts, a)})


def run_torus_l4(nmax: int = 100_000, trials: int = 100, seed: int = 7, circles: int = 50,
                 oracle_per_circle: int = 4) -> dict:
    """Zygmund L^4 ratios on random coefficient vectors, with FFT quadrature spot checks."""
    from .lattice import l4_grid_quadrature, zygmund_l4
    if nmax < 1 or trials < 1:
        raise ConfigError("nmax and trials must be positive")
    rng = np.random.default_rng(seed)
    rows, worst_gap = [], 0.0
    for n in zygmund_circles(nmax, circles, seed):
        vals = []
        for t in range(trials):
            e = random_torus_eigenfunction(n, rng)
            v = zygmund_l4(e)
            vals.append(v)
            if t < oracle_per_circle:
                worst_gap = max(worst_gap, abs(v - l4_grid_quadrature(e)))
        rows.append([n, len(lattice_circle_points(n)), float(max(vals)), float(np.mean(vals))])
    return {"schema": SCHEMA, "kind": "torus-l4", "nmax": nmax, "trials": trials, "seed": seed,
            "bound": 3 ** 0.25, "max_ratio": max(r[2] for r in rows),
            "max_oracle_gap": worst_gap, "header": ["n", "r2", "max_ratio", "mean_ratio"],
            "rows": rows}


def run_lattice_arcs(nmax: int = 100_000, aperture_exp: float = -0.6) -> dict:
    from .lattice import cc_regime_scan
    delta = -0.5 - aperture_exp
    table = cc_regime_scan(nmax, delta)
    keep = np.flatnonzero(np.diff(np.concatenate([[0], table.running_max])) > 0)
    rows = [[int(table.n[k]), int(table.count[k]), int(table.running_max[k])] for k in keep]
    return {"schema": SCHEMA, "kind": "lattice-arcs", "nmax": nmax, "aperture_exp": aperture_exp,
            "delta": delta, "max_up_to_half": table.max_up_to(nmax // 2),
            "max_up_to": table.max_up_to(nmax),
            "header": ["n", "count", "running_max"], "rows": rows}


# --------------------------------------------------------------------------
# microlocal and oscillatory runs

def run_microlocal_check(lam: float = 64, grid: int = 256, eps0: float = 0.1, n_fields: int = 4,
                         seed: int = 7, c_tube: float = 10.0) -> dict:
    from . import microlocal as ml
    from .models import SampledField
    S = ml.MicrolocalSetup(lam, N=max(grid, ml.default_grid_size(lam)), eps0=eps0)
    rng = np.random.default_rng(seed)
    probe = rng.normal(size=(S.N, S.N))
    part = ml.partition_error(S, probe, S.theta0)
    sup_norm, nu, _ = ml.sup_tile_norm(S, S.theta0)
    leak = ml.kernel_tube_leak(S, S.theta0, (0, 0), c_tube)
    pi_hat = geodesic_grid_torus(4, S.theta0 / 4, center=S.x0, reach=2 * S.delta + S.theta0)
    fields = []
    for k in range(n_fields):
        f = ml.random_patch_field(S, seed * 1000 + k)
        m = ml.mkn_norm(f, S)
        kn = kn_norm(f, lam, eps0, pi_hat)
        fields.append({"seed": seed * 1000 + k, "mkn": m.total, "mkn_sup": m.sup,
                       "argmax": [m.argmax[0], list(m.argmax[1])] if m.argmax else [],
                       "kn": kn.value, "ratio": m.total / kn.value})
    return {"schema": SCHEMA, "kind": "microlocal-check", "lam": lam, "grid": S.N, "eps0": eps0,
            "theta0": S.theta0, "thetas": S.thetas, "partition_error": part,
            "sup_tile_norm": sup_norm, "sup_tile": list(nu),
            "leak": {"c_tube": c_tube, "tile": [0, 0], "fraction": leak.leak_fraction},
            "fields": fields, "max_ratio": max(f["ratio"] for f in fields) if fields else None}


def run_osc_norm(lams=(50, 100, 200, 400), thetas=(0.4, 0.2, 0.1, 0.05), metric: str = "euclidean",
                 eta: float = 0.0, lam_fixed: float = 200.0, theta_fixed: float = 0.2) -> dict:
    from .oscillatory import ModelPhase, scaling_fit
    phase = ModelPhase(metric=metric, eta=eta)
    fl, ft = scaling_fit(phase, list(lams), list(thetas), lam_fixed=lam_fixed,
                         theta_fixed=theta_fixed)
    out = {"schema": SCHEMA, "kind": "osc-norm", "metric": metric, "eta": eta}
    for fit in (fl, ft):
        out[fit.parameter] = {"xs": fit.xs, "norms": fit.norms, "slope": fit.slope,
                              "intercept": fit.intercept, "residuals": fit.residuals,
                              "converged": fit.converged}
    # normalized value lam theta^{1/2} ||T|| against the product lam theta^2
    out["normalized"] = [[lam * th * th, lam * math.sqrt(th) * n]
                         for lam, th, n in ([(x, theta_fixed, v) for x, v in zip(fl.xs, fl.norms)]
                                            + [(lam_fixed, x, v) for x, v in zip(ft.xs, ft.norms)])]
    return out
