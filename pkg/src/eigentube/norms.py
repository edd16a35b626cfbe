"""L^p norms, restriction integrals, tube masses and Kakeya-Nikodym norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (GeodesicGrid, GreatCircle, RingTubeIntegrator, TorusLine,
                       dist_to_torus_line, refine_sup)
from .models import DomainError, SampledField

DEFAULT_EPS0 = 0.1
EPS0_SWEEP = (0.05, 0.1, 0.25, 0.5)


class UnderResolvedError(DomainError):
    pass


def lp_norm(f: SampledField, p: float) -> float:
    """Quadrature L^p norm; p = inf gives the max norm over grid nodes."""
    a = np.abs(f.values)
    if math.isinf(p):
        return float(a.max())
    if p < 1:
        raise DomainError("p must be >= 1")
    return float(np.sum(f.grid.weights * a ** p) ** (1.0 / p))


def _default_pts(f: SampledField, geodesic) -> int:
    if f.manifold == "sphere":
        l = getattr(f.source, "degree", 1)
        return max(64, 8 * max(l, 1))
    n = getattr(f.source, "n", 1)
    return max(64, int(math.ceil(8 * math.sqrt(n) * geodesic.norm)))


def restriction_norm(f: SampledField, geodesic, n_pts: Optional[int] = None) -> float:
    """Periodic trapezoid rule for the integral of |f|^2 along a closed geodesic.

    The field's analytic source is evaluated directly at the curve points.
    """
    need = _default_pts(f, geodesic)
    if n_pts is None:
        n_pts = need
    elif n_pts < need:
        raise DomainError(f"n_pts={n_pts} too small, need >= {need}")
    pts = geodesic.sample(n_pts)
    v = f.evaluate(pts)
    return float(np.mean(np.abs(v) ** 2) * geodesic.length)


# --------------------------------------------------------------------------
# tube masses

def tube_width(lam: float, eps0: float) -> float:
    return lam ** (-0.5 + eps0)


def _check_resolution(grid, delta: float):
    if delta < 3 * grid.spacing:
        raise UnderResolvedError(
            f"under-resolved: tube width {delta:.3g} is below 3 grid spacings "
            f"({grid.spacing:.3g}); use a finer grid")


def torus_tube_mass(f: SampledField, line: TorusLine, delta: float,
                    density: Optional[np.ndarray] = None) -> float:
    if density is None:
        density = np.abs(f.values) ** 2
    d = dist_to_torus_line(f.grid.points(), line)
    return float(np.sum(np.where(d <= delta, f.grid.weights * density, 0.0)))


def unit_arc_mass(f: SampledField, circle: GreatCircle, delta: float,
                  arc: float = 1.0, density: Optional[np.ndarray] = None) -> float:
    """Largest mass in the delta-neighbourhood of a length-``arc`` sub-segment.

    Nodes in the band around the circle are assigned to their nearest circle
    point; a window of length ``arc`` slides over the sorted arc positions.
    """
    if density is None:
        density = np.abs(f.values) ** 2
    pts = f.grid.points().reshape(-1, 3)
    w = (f.grid.weights * density).ravel()
    e1, e2 = circle.frame()
    h = pts @ circle.pole
    keep = np.abs(h) <= math.sin(delta)
    psi = np.mod(np.arctan2(pts[keep] @ e2, pts[keep] @ e1), 2 * math.pi)
    order = np.argsort(psi, kind="stable")
    psi, wk = psi[order], w[keep][order]
    if psi.size == 0:
        return 0.0
    # unroll once so windows may wrap past 2 pi
    psi2 = np.concatenate([psi, psi + 2 * math.pi])
    cum = np.concatenate([[0.0], np.cumsum(np.concatenate([wk, wk]))])
    ends = np.searchsorted(psi2, psi + arc, side="right")
    starts = np.arange(psi.size)
    return float(np.max(cum[ends] - cum[starts]))


@dataclass
class KNResult:
    lam: float
    eps0: float
    delta: float
    sup_mass: float
    geodesic: object
    value: float
    coarse_value: float
    converged: bool
    unit_arc_mass: Optional[float] = None
    unit_arc_value: Optional[float] = None
    quad_error: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def kn_squared(self) -> float:
        return self.value ** 2


def _sphere_sup(f: SampledField, density: np.ndarray, delta: float, pi_hat: GeodesicGrid,
                n_starts: int = 3, tol: float = 1e-3):
    ring = RingTubeIntegrator(f.grid, density)
    poles = [c.pole for c in pi_hat.candidates]
    coarse = np.array([ring.integral(p, delta) for p in poles])
    order = np.argsort(-coarse, kind="stable")[:n_starts]
    best_val, best_geo, converged = coarse[order[0]], pi_hat.candidates[order[0]], True
    step = max(pi_hat.resolution, 4 * tol)
    for k in order:
        res = refine_sup(lambda g: ring.integral(g.pole, delta), pi_hat.candidates[k],
                         tol=tol, step=step)
        converged &= res.converged
        if res.value > best_val:
            best_val, best_geo = res.value, res.geodesic
    # sharp-indicator error: half the mass in a one-spacing shell at the boundary
    h = 0.5 * f.grid.spacing
    shell = ring.integral(best_geo.pole, min(delta + h, math.pi / 2)) - \
        ring.integral(best_geo.pole, max(delta - h, 1e-12))
    return float(coarse[order[0]]), float(best_val), best_geo, bool(converged), 0.5 * shell, ring


def _torus_sup(f: SampledField, density: np.ndarray, delta: float, pi_hat: GeodesicGrid):
    masses = [torus_tube_mass(f, g, delta, density) for g in pi_hat.candidates]
    k = int(np.argmax(masses))
    return masses[k], masses[k], pi_hat.candidates[k], True, 0.0, None


def sup_tube_mass(f: SampledField, delta: float, pi_hat: GeodesicGrid,
                  density: Optional[np.ndarray] = None, **kw):
    """(coarse, refined, argmax geodesic, converged, quadrature error estimate)."""
    if density is None:
        density = np.abs(f.values) ** 2
    if f.manifold != pi_hat.manifold:
        raise DomainError("field and geodesic grid live on different manifolds")
    _check_resolution(f.grid, delta)
    if f.manifold == "sphere":
        if delta > math.pi / 2:
            raise DomainError("tube width above pi/2")
        out = _sphere_sup(f, density, delta, pi_hat, **kw)
    else:
        out = _torus_sup(f, density, delta, pi_hat)
    return out[:5]


def kn_norm(f: SampledField, lam: float, eps0: float, pi_hat: GeodesicGrid,
            unit_arc: bool = True, **kw) -> KNResult:
    """Kakeya-Nikodym norm sqrt(lam^{1/2-eps0} sup_gamma mass(T_delta(gamma)))."""
    if not 0 < eps0 <= 0.5:
        raise DomainError("eps0 must lie in (0, 1/2]")
    delta = tube_width(lam, eps0)
    coarse, best, geo, conv, qerr = sup_tube_mass(f, delta, pi_hat, **kw)
    scale = lam ** (0.5 - eps0)
    res = KNResult(lam, eps0, delta, best, geo, math.sqrt(scale * best),
                   math.sqrt(scale * coarse), conv, quad_error=qerr)
    if unit_arc and f.manifold == "sphere":
        ua = unit_arc_mass(f, geo, delta)
        res.unit_arc_mass = ua
        res.unit_arc_value = math.sqrt(scale * ua)
    return res


def ratio_1_1pp(f: SampledField, lam: float, eps0: float, pi_hat: GeodesicGrid,
                kn: Optional[KNResult] = None) -> float:
    """Empirical constant ||f||_4 / (lam^{1/8} ||f||_2^{1/2} M^{1/4}), M the sup tube mass."""
    if kn is None:
        kn = kn_norm(f, lam, eps0, pi_hat, unit_arc=False)
    if kn.sup_mass <= 0:
        raise DomainError("degenerate zero sup tube mass")
    return lp_norm(f, 4) / (lam ** 0.125 * math.sqrt(lp_norm(f, 2)) * kn.sup_mass ** 0.25)


def ratio_1_1ppp(f: SampledField, lam: float, pi_hat: GeodesicGrid, **kw):
    """Both ratios of the lam^{-1/2}-tube form: against sup tube L^2 (power 1/8)
    and against sup tube L^4 (power 1/16)."""
    delta = tube_width(lam, 0.0)
    dens2 = np.abs(f.values) ** 2
    _, m2, _, _, _ = sup_tube_mass(f, delta, pi_hat, density=dens2, **kw)
    _, m4, _, _, _ = sup_tube_mass(f, delta, pi_hat, density=dens2 ** 2, **kw)
    if m2 <= 0 or m4 <= 0:
        raise DomainError("degenerate zero sup tube mass")
    n4 = lp_norm(f, 4)
    r1 = n4 / (lam ** 0.125 * m2 ** 0.25)          # ||.||_{L2(T)}^{1/2} = m2^{1/4}
    r2 = n4 / (lam ** 0.0625 * m4 ** 0.125)        # ||.||_{L4(T)}^{1/2} = m4^{1/8}
    return float(r1), float(r2)
