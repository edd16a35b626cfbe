"""Quadrature grids, closed geodesics, tubes and the sup over geodesics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import DomainError

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Product grid.  Sphere: rows are colatitudes, columns longitudes.
    Torus: rows are x1, columns x2, both uniform on [0, 2 pi)."""
    manifold: str
    theta: np.ndarray            # colatitudes (sphere) or x1 nodes (torus)
    phi: np.ndarray              # longitudes (sphere) or x2 nodes (torus)
    theta_weights: np.ndarray    # Gauss weights in cos(theta), or uniform spacing
    phi_weight: float
    degree: int

    @property
    def shape(self):
        return (self.theta.size, self.phi.size)

    @property
    def size(self) -> int:
        return self.theta.size * self.phi.size

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.theta_weights, np.full(self.phi.size, self.phi_weight))

    @property
    def spacing(self) -> float:
        """Largest node spacing along either axis (radians / torus units)."""
        if self.manifold == "sphere":
            return max(float(np.max(np.diff(self.theta))), 2 * math.pi / self.phi.size)
        return 2 * math.pi / min(self.shape)

    def points(self) -> np.ndarray:
        """Node coordinates with shape grid.shape + (3,) or (2,)."""
        if self.manifold == "sphere":
            st = np.sin(self.theta)[:, None]
            return np.stack([st * np.cos(self.phi)[None, :],
                             st * np.sin(self.phi)[None, :],
                             np.broadcast_to(np.cos(self.theta)[:, None], self.shape)],
                            axis=-1)
        x1, x2 = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([x1, x2], axis=-1)


def sphere_grid(l_max: int, oversample: int = 1) -> QuadratureGrid:
    """Gauss-Legendre in cos(theta) times uniform longitudes.

    With L = oversample * l_max there are 2L+1 colatitudes and 4L+1
    longitudes, so every spherical polynomial of degree <= 4L is integrated
    exactly; in particular |Y_l^m|^4 for l <= L.
    """
    if l_max < 1:
        raise DomainError("l_max must be >= 1")
    L = l_max * oversample
    n_theta, n_phi = 2 * L + 1, 4 * L + 1
    x, w = np.polynomial.legendre.leggauss(n_theta)
    order = np.argsort(-x)                      # increasing colatitude
    theta = np.arccos(x[order])
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    return QuadratureGrid("sphere", theta, phi, w[order], 2 * math.pi / n_phi, 4 * L)


def torus_grid(n: int) -> QuadratureGrid:
    """Uniform n x n grid on [0, 2 pi)^2; exact for trig polynomials of degree < n."""
    x = 2 * math.pi * np.arange(n) / n
    h = 2 * math.pi / n
    return QuadratureGrid("torus", x, x.copy(), np.full(n, h), h, n - 1)


# --------------------------------------------------------------------------
# geodesics

def canonical_pole(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    nz = np.flatnonzero(np.abs(n) > 1e-15)
    if nz.size and n[nz[-1]] < 0:
        n = -n
    return n


@dataclass(frozen=True, eq=False)
class GreatCircle:
    pole: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pole", canonical_pole(self.pole))

    def frame(self):
        """Orthonormal (u, v) spanning the circle's plane."""
        n = self.pole
        a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(n, a)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u)

    def sample(self, n_pts: int) -> np.ndarray:
        t = 2 * math.pi * np.arange(n_pts) / n_pts
        u, v = self.frame()
        return np.cos(t)[:, None] * u + np.sin(t)[:, None] * v

    @property
    def length(self) -> float:
        return 2 * math.pi


@dataclass(frozen=True)
class TorusLine:
    """Closed geodesic {x : (-q x1 + p x2)/|(p,q)| = offset mod 2 pi/|(p,q)|}."""
    p: int
    q: int
    offset: float = 0.0

    def __post_init__(self):
        if math.gcd(self.p, self.q) != 1:
            raise DomainError(f"direction ({self.p},{self.q}) is not primitive")
        period = 2 * math.pi / self.norm
        object.__setattr__(self, "offset", float(self.offset) % period)

    @property
    def norm(self) -> float:
        return math.hypot(self.p, self.q)

    @property
    def length(self) -> float:
        return 2 * math.pi * self.norm

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.p, self.q], dtype=float) / self.norm

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.q, self.p], dtype=float) / self.norm

    def base_point(self) -> np.ndarray:
        return self.offset * self.normal

    def sample(self, n_pts: int) -> np.ndarray:
        t = self.length * np.arange(n_pts) / n_pts
        return self.base_point()[None, :] + t[:, None] * self.direction[None, :]


@dataclass(frozen=True)
class Tube:
    geodesic: object
    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius < math.pi / 4:
            raise DomainError(f"tube radius {self.radius} outside (0, pi/4)")


def dist_to_great_circle(p, gamma: GreatCircle) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.abs(np.arcsin(np.clip(p @ gamma.pole, -1.0, 1.0)))


def dist_to_torus_line(x, line: TorusLine) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    period = 2 * math.pi / line.norm
    r = np.mod(x @ line.normal - line.offset, period)
    return np.minimum(r, period - r)


def tube_mask(grid: QuadratureGrid, tube: Tube) -> np.ndarray:
    """Per-node weights w_i * 1[dist_i <= radius]."""
    g = tube.geodesic
    if isinstance(g, GreatCircle):
        if grid.manifold != "sphere":
            raise DomainError("great-circle tube needs a sphere grid")
        d = dist_to_great_circle(grid.points(), g)
    else:
        if grid.manifold != "torus":
            raise DomainError("torus-line tube needs a torus grid")
        d = dist_to_torus_line(grid.points(), g)
    return np.where(d <= tube.radius, grid.weights, 0.0)


class RingTubeIntegrator:
    """Fast sharp-tube integrals of a fixed density on a sphere product grid.

    A band |p.n| <= sin(delta) meets each colatitude ring in at most two
    longitude intervals, so with circular prefix sums per ring a tube
    integral costs O(n_theta) instead of O(n_nodes).  Node membership uses the
    same closed inequality as ``tube_mask``.
    """

    def __init__(self, grid: QuadratureGrid, density: np.ndarray):
        if grid.manifold != "sphere":
            raise DomainError("ring integration is for sphere grids")
        self.grid = grid
        self.n_phi = grid.phi.size
        ring = density * grid.weights
        self.total = float(ring.sum())
        # prefix over two periods so wrapped index ranges are contiguous
        doubled = np.concatenate([ring, ring], axis=1)
        self.prefix = np.concatenate(
            [np.zeros((ring.shape[0], 1)), np.cumsum(doubled, axis=1)], axis=1)
        self.ring_sums = ring.sum(axis=1)
        self.cos_t = np.cos(grid.theta)
        self.sin_t = np.sin(grid.theta)

    def _range_sum(self, rows, j0, j1):
        # sum of ring[rows, j0..j1] inclusive, 0 <= j0 < n_phi, j1 - j0 < n_phi
        return self.prefix[rows, j1 + 1] - self.prefix[rows, j0]

    def integral(self, pole, radius: float) -> float:
        n = np.asarray(pole, dtype=float)
        n = n / np.linalg.norm(n)
        s = math.sin(radius)
        alpha_c, alpha_s = n[2], math.hypot(n[0], n[1])
        beta = math.atan2(n[1], n[0])
        a = self.cos_t * alpha_c
        b = self.sin_t * alpha_s
        total = 0.0
        flat = b < 1e-14
        if flat.any():
            total += float(self.ring_sums[flat & (np.abs(a) <= s)].sum())
        rows = np.flatnonzero(~flat)
        if rows.size == 0:
            return total
        a, b = a[rows], b[rows]
        hi = (s - a) / b
        lo = (-s - a) / b
        ok = (hi >= -1.0) & (lo <= 1.0)
        rows, hi, lo = rows[ok], np.clip(hi[ok], -1, 1), np.clip(lo[ok], -1, 1)
        A = np.arccos(hi)      # |psi| >= A
        B = np.arccos(lo)      # |psi| <= B
        at_zero = hi >= 1.0    # A == 0: the two pieces join across psi = 0
        at_pi = lo <= -1.0     # B == pi: they join across psi = pi
        full = at_zero & at_pi
        if full.any():
            total += float(self.ring_sums[rows[full]].sum())
        # list of (rows, lower, upper) psi-intervals
        pieces = []
        m = at_zero & ~at_pi
        pieces.append((rows[m], -B[m], B[m]))
        m = at_pi & ~at_zero
        pieces.append((rows[m], A[m], 2 * math.pi - A[m]))
        m = ~at_zero & ~at_pi
        pieces.append((rows[m], A[m], B[m]))
        pieces.append((rows[m], -B[m], -A[m]))
        step = 2 * math.pi / self.n_phi
        for r, lo_psi, hi_psi in pieces:
            if r.size == 0:
                continue
            j0 = np.ceil((beta + lo_psi) / step - 1e-9).astype(np.int64)
            j1 = np.floor((beta + hi_psi) / step + 1e-9).astype(np.int64)
            cnt = np.minimum(j1 - j0 + 1, self.n_phi)
            good = cnt > 0
            j0m = np.mod(j0[good], self.n_phi)
            total += float(self._range_sum(r[good], j0m, j0m + cnt[good] - 1).sum())
        return total


# --------------------------------------------------------------------------
# discretized space of geodesics

@dataclass(frozen=True, eq=False)
class GeodesicGrid:
    manifold: str
    candidates: list
    resolution: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.candidates)


def _antipodal_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(np.abs(a @ b.T), 0.0, 1.0))


def covering_radius(poles: np.ndarray, n_samples: int = 20000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return float(_antipodal_dist(x, poles).min(axis=1).max())


def fibonacci_poles(K: int) -> np.ndarray:
    i = np.arange(K)
    z = (i + 0.5) / K
    r = np.sqrt(1.0 - z * z)
    ang = i * GOLDEN_ANGLE
    return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)


def geodesic_grid_sphere(K: int, rotation: Optional[np.ndarray] = None) -> GeodesicGrid:
    """K great-circle poles from a Fibonacci set on the upper hemisphere."""
    if K < 16:
        raise DomainError("K must be >= 16")
    poles = fibonacci_poles(K)
    if rotation is not None:
        poles = poles @ np.asarray(rotation, dtype=float).T
    h = covering_radius(poles)
    return GeodesicGrid("sphere", [GreatCircle(p) for p in poles], h,
                        meta={"K": K, "nominal_h": math.sqrt(2 * math.pi / K)})


def primitive_directions(max_coord: int) -> list:
    """Primitive (p, q), one per line direction (p > 0, or p == 0 and q == 1)."""
    out = []
    for p in range(0, max_coord + 1):
        for q in range(-max_coord, max_coord + 1):
            if (p == 0 and q != 1) or math.gcd(p, q) != 1:
                continue
            out.append((p, q))
    return out


def geodesic_grid_torus(max_coord: int, offset_step: float,
                        center=None, reach: Optional[float] = None) -> GeodesicGrid:
    """Closed torus lines with primitive directions up to max_coord.

    With ``center`` and ``reach`` only lines passing within ``reach`` of
    ``center`` are kept (for fields supported in a small patch).
    """
    cands = []
    for p, q in primitive_directions(max_coord):
        norm = math.hypot(p, q)
        period = 2 * math.pi / norm
        if center is None:
            offs = np.arange(0.0, period, offset_step)
        else:
            c = (np.array([-q, p]) / norm) @ np.asarray(center, dtype=float)
            offs = c + np.arange(-reach, reach + 1e-12, offset_step)
        cands.extend(TorusLine(p, q, float(o)) for o in offs)
    return GeodesicGrid("torus", cands, offset_step, meta={"max_coord": max_coord})


# --------------------------------------------------------------------------
# compass search

def _tangent_frame(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


@dataclass
class RefineResult:
    geodesic: GreatCircle
    value: float
    start_value: float
    converged: bool
    iterations: int
    evaluations: int


def refine_sup(objective: Callable[[GreatCircle], float], start: GreatCircle,
               tol: float = 1e-3, step: float = 0.05, max_iter: int = 200) -> RefineResult:
    """Derivative-free compass ascent over great-circle poles.

    Polls +-step along two tangent directions at the current pole, moves to
    the first improvement, halves the step after a failed poll and stops once
    the step falls below tol.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    best, best_gc = start.pole.copy(), start
    best_val = float(objective(start))
    start_val = best_val
    evals, it = 1, 0
    while step >= tol:
        if it >= max_iter:
            return RefineResult(best_gc, best_val, start_val, False, it, evals)
        it += 1
        e1, e2 = _tangent_frame(best)
        moved = False
        for d in (e1, -e1, e2, -e2):
            cand = best + step * d
            cand /= np.linalg.norm(cand)
            gc = GreatCircle(cand)
            val = float(objective(gc))
            evals += 1
            if val > best_val:
                best, best_gc, best_val, moved = cand, gc, val, True
                break
        if not moved:
            step *= 0.5
    return RefineResult(best_gc, best_val, start_val, True, it, evals)
