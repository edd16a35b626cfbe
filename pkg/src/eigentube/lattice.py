"""Lattice points on circles, arcs, and exact L^4 / restriction identities on T^2.

Arcs are measured by arclength on the circle of radius lambda = sqrt(n); an
arc of arclength lambda^{1+a} has angular aperture lambda^{a}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import TorusLine
from .models import DomainError, TorusEigenfunction, lattice_circle_points

GUARD = 1e-12
MAX_SCAN = 10 ** 6


@dataclass(frozen=True)
class ArcQuery:
    n: int
    a: float

    @property
    def lam(self) -> float:
        return math.sqrt(self.n)

    @property
    def arclength(self) -> float:
        """Window arclength, clipped to the circumference."""
        return min(self.lam ** (1 + self.a), 2 * math.pi * self.lam)


@dataclass(frozen=True)
class ArcWitness:
    start: tuple                 # first lattice point in the window
    points: tuple                # all points in the window, counterclockwise
    start_angle: float
    aperture: float              # angular length of the window


def _window_counts(pts: np.ndarray, n: int, aperture: float) -> np.ndarray:
    """Number of points in the closed forward window [angle_i, angle_i + aperture]."""
    k = len(pts)
    if aperture >= 2 * math.pi:
        return np.full(k, k)
    if aperture >= math.pi:
        ang = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * math.pi)
        gaps = np.mod(ang[None, :] - ang[:, None], 2 * math.pi)
        return np.sum(gaps <= aperture + GUARD, axis=1)
    thr = 4.0 * n * math.sin(aperture / 2) ** 2 * (1 + GUARD)
    counts = np.ones(k, dtype=np.int64)
    alive = np.ones(k, dtype=bool)
    for t in range(1, k):
        j = (np.arange(k) + t) % k
        q = pts[j]
        cross = pts[:, 0] * q[:, 1] - pts[:, 1] * q[:, 0]
        d = pts - q
        chord2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
        # forward gap below pi is exact in integers: cross > 0
        alive &= (cross > 0) & (chord2 <= thr)
        if not alive.any():
            break
        counts += alive
    return counts


def max_arc_count(q: ArcQuery, pts: Optional[list] = None):
    """Largest number of circle points in an arc of arclength lam^{1+a}.

    Returns (count, ArcWitness or None).
    """
    if pts is None:
        pts = lattice_circle_points(q.n)
    if not pts:
        return 0, None
    P = np.array(pts, dtype=np.int64)
    aperture = q.arclength / q.lam
    counts = _window_counts(P, q.n, aperture)
    i = int(np.argmax(counts))
    c = int(counts[i])
    win = tuple(tuple(int(v) for v in P[(i + t) % len(P)]) for t in range(c))
    start_angle = math.atan2(P[i, 1], P[i, 0]) % (2 * math.pi)
    return c, ArcWitness(win[0], win, start_angle, aperture)


def _points_by_n(N: int) -> dict:
    """All lattice points with 0 < |l|^2 <= N grouped by |l|^2, angle-sorted."""
    r = math.isqrt(N)
    a = np.arange(-r, r + 1)
    A, B = np.meshgrid(a, a, indexing="ij")
    A, B = A.ravel(), B.ravel()
    nn = A * A + B * B
    keep = (nn > 0) & (nn <= N)
    A, B, nn = A[keep], B[keep], nn[keep]
    ang = np.mod(np.arctan2(B, A), 2 * math.pi)
    order = np.lexsort((ang, nn))
    A, B, nn = A[order], B[order], nn[order]
    # distinct points on one circle differ in angle by >= 1/n, far above
    # double rounding, but confirm the order with integer cross products
    same = nn[1:] == nn[:-1]
    cross = A[:-1] * B[1:] - B[:-1] * A[1:]
    half0 = (B[:-1] > 0) | ((B[:-1] == 0) & (A[:-1] > 0))
    half1 = (B[1:] > 0) | ((B[1:] == 0) & (A[1:] > 0))
    bad = same & (half0 == half1) & (cross <= 0)
    if bad.any():
        raise RuntimeError("angle sort disagrees with exact comparison")
    cuts = np.flatnonzero(np.diff(nn)) + 1
    groups = {}
    for s, e in zip(np.concatenate([[0], cuts]), np.concatenate([cuts, [nn.size]])):
        groups[int(nn[s])] = np.stack([A[s:e], B[s:e]], axis=1)
    return groups


@dataclass
class ScanTable:
    delta: float
    n: np.ndarray
    count: np.ndarray
    running_max: np.ndarray

    def max_up_to(self, N: int) -> int:
        k = np.searchsorted(self.n, N, side="right")
        return int(self.running_max[k - 1]) if k else 0


def cc_regime_scan(N: int, delta: float) -> ScanTable:
    """Max points on arcs of aperture lam^{-1/2-delta} for every n <= N."""
    if N > MAX_SCAN:
        raise DomainError(f"N={N} exceeds desk guard {MAX_SCAN}")
    if N < 2:
        e = np.zeros(0, dtype=np.int64)
        return ScanTable(delta, e, e, e)
    groups = _points_by_n(N)
    ns = np.array(sorted(groups), dtype=np.int64)
    counts = np.empty(ns.size, dtype=np.int64)
    a = -0.5 - delta
    for k, n in enumerate(ns):
        q = ArcQuery(int(n), a)
        counts[k] = _window_counts(groups[int(n)], int(n), q.arclength / q.lam).max()
    return ScanTable(delta, ns, counts, np.maximum.accumulate(counts))


# --------------------------------------------------------------------------
# exact identities for torus eigenfunctions

def _conv_sums(e: TorusEigenfunction):
    l, a = e.arrays()
    s1 = (l[:, None, 0] + l[None, :, 0]).ravel()
    s2 = (l[:, None, 1] + l[None, :, 1]).ravel()
    prod = (a[:, None] * a[None, :]).ravel()
    return s1, s2, prod


def zygmund_l4(e: TorusEigenfunction) -> float:
    """L^4 norm of the L^2-normalized field in normalized measure, via
    ||e||_4^4 = sum_s |c_s|^2, c_s = sum_{l + l' = s} a_l a_l'."""
    s1, s2, prod = _conv_sums(e)
    _, inv = np.unique(np.stack([s1, s2], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    c = np.bincount(inv, prod.real) + 1j * np.bincount(inv, prod.imag)
    l2sq = e.l2_norm() ** 2
    return float(np.sum(np.abs(c) ** 2) ** 0.25 / math.sqrt(l2sq))


def l4_grid_quadrature(e: TorusEigenfunction, N: Optional[int] = None) -> float:
    """Same quantity by FFT synthesis on an N x N grid (exact for N > 4 max|l_i|)."""
    l, a = e.arrays()
    if N is None:
        N = 4 * int(np.abs(l).max()) + 2
    F = np.zeros((N, N), dtype=complex)
    np.add.at(F, (l[:, 0] % N, l[:, 1] % N), a)
    v = np.fft.ifft2(F) * (N * N)
    m4 = np.mean(np.abs(v) ** 4)
    return float(m4 ** 0.25 / e.l2_norm())


def torus_restriction(e: TorusEigenfunction, line: TorusLine) -> float:
    """Integral of |e|^2 ds along a closed line by 1-D Parseval.

    Uses the (2 pi)^{-1} field convention of the models module.  Frequencies
    project to the integers l.(p, q); equal projections resonate.
    """
    l, a = e.arrays()
    k = l @ np.array([line.p, line.q])
    phase = np.exp(1j * (l @ line.base_point()))
    _, inv = np.unique(k, return_inverse=True)
    inv = inv.ravel()
    b = a * phase / (2 * math.pi)
    c = np.bincount(inv, b.real) + 1j * np.bincount(inv, b.imag)
    return float(line.length * np.sum(np.abs(c) ** 2))


def torus_restriction_trapezoid(e: TorusEigenfunction, line: TorusLine,
                                n_pts: Optional[int] = None) -> float:
    l, a = e.arrays()
    kmax = int(np.abs(l @ np.array([line.p, line.q])).max())
    if n_pts is None:
        n_pts = 4 * kmax + 8
    x = line.sample(n_pts)
    v = np.exp(1j * (x @ l.T.astype(float))) @ a / (2 * math.pi)
    return float(np.mean(np.abs(v) ** 2) * line.length)
