"""Explicit eigenfunction families on the round sphere and the flat torus.

Sphere harmonics use the orthonormal convention

    Y_l^m(theta, phi) = Lbar_l^m(cos theta) e^{i m phi},
    Lbar_l^m = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m,

with the Condon-Shortley phase, so that the integral of |Y_l^m|^2 over S^2
is one.  Torus eigenfunctions are sampled as (2 pi)^{-1} sum a_l e^{i x.l}
on [0, 2 pi)^2 with Lebesgue measure, which makes the L^2 norm equal to the
l^2 norm of the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cmp_to_key
from typing import Mapping, Optional

import numpy as np
from scipy.special import gammaln

MAX_DEGREE = 4096
FAMILIES = ("zonal", "highest_weight", "single_lm", "random_gaussian")

# extended-range rescaling for the Legendre recurrence
_BIG = 1e150
_LOG_BIG = math.log(_BIG)


class DomainError(ValueError):
    pass


class DegreeOverflowError(DomainError):
    pass


@dataclass(frozen=True)
class SphereHarmonicSpec:
    family: str
    degree: int
    order: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.degree < 0:
            raise DomainError("degree must be nonnegative")
        if self.degree > MAX_DEGREE:
            raise DegreeOverflowError(
                f"degree overflow: l={self.degree} exceeds {MAX_DEGREE}")
        if abs(self.order) > self.degree:
            raise DomainError(f"|m|={abs(self.order)} exceeds l={self.degree}")
        if self.family != "single_lm" and self.degree < 1:
            raise DomainError("nonconstant families need l >= 1")

    @property
    def frequency(self) -> float:
        return math.sqrt(self.degree * (self.degree + 1))


@dataclass(frozen=True)
class TorusEigenfunction:
    n: int
    coefficients: Mapping[tuple, complex]

    def __post_init__(self):
        if not self.coefficients:
            raise DomainError("empty coefficient map")
        for (a, b) in self.coefficients:
            if a * a + b * b != self.n:
                raise DomainError(f"({a},{b}) is not on the circle |l|^2={self.n}")

    @property
    def frequency(self) -> float:
        return math.sqrt(self.n)

    def arrays(self):
        """Return (points[k,2] int64, amplitudes[k] complex) in a fixed order."""
        keys = sorted(self.coefficients)
        pts = np.array(keys, dtype=np.int64).reshape(-1, 2)
        amps = np.array([complex(self.coefficients[k]) for k in keys])
        return pts, amps

    def l2_norm(self) -> float:
        return math.sqrt(sum(abs(complex(a)) ** 2 for a in self.coefficients.values()))


@dataclass(frozen=True, eq=False)
class SampledField:
    """Samples of a field on a quadrature grid.

    ``values`` has the grid's 2-D shape.  When ``source`` is set the field is
    ``scale`` times the analytic function it names, which lets curve
    integrals evaluate the function directly instead of interpolating.
    """
    grid: object
    values: np.ndarray
    manifold: str
    source: object = None
    scale: complex = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise DomainError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if self.manifold != self.grid.manifold:
            raise DomainError("field and grid live on different manifolds")

    def mass(self) -> float:
        return float(np.sum(self.grid.weights * np.abs(self.values) ** 2))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the underlying analytic function at points.

        Sphere points are unit 3-vectors (..., 3); torus points are (..., 2).
        """
        if self.source is None:
            raise DomainError("field has no analytic source to evaluate")
        points = np.asarray(points, dtype=float)
        if self.manifold == "sphere":
            return self.scale * _eval_sphere_points(self.source, points)
        return self.scale * _eval_torus_points(self.source, points)


# --------------------------------------------------------------------------
# associated Legendre functions

def _sectoral_log(m: int, sin_theta: np.ndarray):
    """log|Lbar_m^m| split as (constant, m log sin theta)."""
    const = 0.5 * (math.log((2 * m + 1) / (4 * math.pi))
                   + gammaln(2 * m + 1) - 2 * gammaln(m + 1) - m * math.log(4.0))
    if m == 0:
        return np.full(np.shape(sin_theta), const)
    with np.errstate(divide="ignore"):
        return const + m * np.log(sin_theta)


def legendre_column(l_max: int, m: int, x) -> np.ndarray:
    """Lbar_l^m(x) for l = m..l_max at fixed m >= 0; shape (l_max-m+1, len(x)).

    Three-term recurrence in l from the sectoral seed, carried with a
    per-point log scale so nothing under- or overflows up to l = 4096.
    """
    if l_max > MAX_DEGREE:
        raise DegreeOverflowError(f"degree overflow: l={l_max} exceeds {MAX_DEGREE}")
    if not 0 <= m <= l_max:
        raise DomainError(f"need 0 <= m <= l, got l={l_max}, m={m}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    sign = -1.0 if m % 2 else 1.0
    logscale = _sectoral_log(m, s)
    zero = ~np.isfinite(logscale)
    logscale = np.where(zero, 0.0, logscale)
    p_prev = np.zeros_like(x)
    p_cur = np.where(zero, 0.0, sign)
    out = np.empty((l_max - m + 1, x.size))
    with np.errstate(over="ignore", under="ignore"):
        out[0] = p_cur * np.exp(logscale)
        for ll in range(m + 1, l_max + 1):
            a = math.sqrt((4.0 * ll * ll - 1.0) / (ll * ll - m * m))
            b = math.sqrt(((ll - 1.0) ** 2 - m * m) / (4.0 * (ll - 1.0) ** 2 - 1.0))
            p_next = a * (x * p_cur - b * p_prev)
            p_prev, p_cur = p_cur, p_next
            big = np.abs(p_cur) > _BIG
            if big.any():
                p_cur = np.where(big, p_cur / _BIG, p_cur)
                p_prev = np.where(big, p_prev / _BIG, p_prev)
                logscale = logscale + np.where(big, _LOG_BIG, 0.0)
            out[ll - m] = p_cur * np.exp(logscale)
    return out


def legendre_normalized(l: int, m: int, x) -> np.ndarray:
    """Lbar_l^m(x) for a single (l, m), m >= 0, vectorized in x = cos theta."""
    x = np.asarray(x, dtype=float)
    return legendre_column(l, m, x.ravel())[-1].reshape(x.shape)


def legendre_all_orders(l: int, x) -> np.ndarray:
    """Lbar_l^m(x) for m = 0..l at once; returns an (l+1, len(x)) array."""
    if l > MAX_DEGREE:
        raise DegreeOverflowError(f"degree overflow: l={l} exceeds {MAX_DEGREE}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    ms = np.arange(l + 1, dtype=float)
    const = 0.5 * (np.log((2 * ms + 1) / (4 * math.pi))
                   + gammaln(2 * ms + 1) - 2 * gammaln(ms + 1) - ms * math.log(4.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(s)
        logscale = const[:, None] + ms[:, None] * logs[None, :]
    logscale[0, :] = const[0]
    zero = ~np.isfinite(logscale)
    logscale = np.where(zero, 0.0, logscale)
    sign = np.where(np.arange(l + 1) % 2, -1.0, 1.0)[:, None]
    seed = np.where(zero, 0.0, sign)
    # row m holds the running value of Lbar_ll^m; rows with m > ll are idle
    p_cur = np.zeros((l + 1, x.size))
    p_prev = np.zeros((l + 1, x.size))
    for ll in range(0, l + 1):
        if ll > 0:
            mm = ms[:ll]
            a = np.sqrt((4.0 * ll * ll - 1.0) / (ll * ll - mm * mm))
            with np.errstate(invalid="ignore"):
                b = np.sqrt(np.clip(((ll - 1.0) ** 2 - mm * mm), 0.0, None)
                            / (4.0 * (ll - 1.0) ** 2 - 1.0))
            nxt = a[:, None] * (x[None, :] * p_cur[:ll] - b[:, None] * p_prev[:ll])
            p_prev[:ll] = p_cur[:ll]
            p_cur[:ll] = nxt
            big = np.abs(p_cur[:ll]) > _BIG
            if big.any():
                p_cur[:ll] = np.where(big, p_cur[:ll] / _BIG, p_cur[:ll])
                p_prev[:ll] = np.where(big, p_prev[:ll] / _BIG, p_prev[:ll])
                logscale[:ll] += np.where(big, _LOG_BIG, 0.0)
        p_cur[ll] = seed[ll]
    with np.errstate(over="ignore", under="ignore"):
        return p_cur * np.exp(logscale)


def random_coefficients(spec: SphereHarmonicSpec) -> np.ndarray:
    """Complex Gaussian weights g_m, m = -l..l, E|g_m|^2 = 1."""
    rng = np.random.default_rng(spec.seed)
    n = 2 * spec.degree + 1
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)


def _harmonic_terms(spec: SphereHarmonicSpec):
    """(m, weight) pairs so the harmonic is sum weight * Y_l^m."""
    l = spec.degree
    if spec.family == "zonal":
        return [(0, 1.0)]
    if spec.family == "highest_weight":
        return [(l, 1.0)]
    if spec.family == "single_lm":
        return [(spec.order, 1.0)]
    g = random_coefficients(spec)
    return [(m, g[m + l]) for m in range(-l, l + 1)]


def _ylm_theta_part(l: int, m: int, x) -> np.ndarray:
    """Theta factor of Y_l^m including the sign for negative m."""
    p = legendre_normalized(l, abs(m), x)
    if m < 0 and m % 2:
        p = -p
    return p


def _eval_sphere_points(spec: SphereHarmonicSpec, points: np.ndarray) -> np.ndarray:
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    z = np.clip(pts[:, 2], -1.0, 1.0)
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    l = spec.degree
    terms = _harmonic_terms(spec)
    if len(terms) == 1:
        m, w = terms[0]
        out = w * _ylm_theta_part(l, m, z) * np.exp(1j * m * phi)
    else:
        table = legendre_all_orders(l, z)
        out = np.zeros(z.shape, dtype=complex)
        for m, w in terms:
            row = table[abs(m)]
            if m < 0 and m % 2:
                row = -row
            out += w * row * np.exp(1j * m * phi)
    return out.reshape(shape)


def _eval_torus_points(e: TorusEigenfunction, points: np.ndarray) -> np.ndarray:
    shape = points.shape[:-1]
    pts = points.reshape(-1, 2)
    lat, amps = e.arrays()
    phase = pts @ lat.T.astype(float)
    out = (np.exp(1j * phase) @ amps) / (2 * math.pi)
    return out.reshape(shape)


# --------------------------------------------------------------------------
# sampled fields

def eval_sphere_harmonic(spec: SphereHarmonicSpec, grid) -> SampledField:
    if grid.manifold != "sphere":
        raise DomainError("eval_sphere_harmonic needs a sphere grid")
    l = spec.degree
    x = np.cos(grid.theta)
    nphi = grid.phi.size
    terms = _harmonic_terms(spec)
    if len(terms) == 1:
        m, w = terms[0]
        values = np.outer(w * _ylm_theta_part(l, m, x), np.exp(1j * m * grid.phi))
    else:
        if 2 * l + 1 > nphi:
            raise DomainError("grid has too few longitudes for this degree")
        table = legendre_all_orders(l, x)
        spectrum = np.zeros((x.size, nphi), dtype=complex)
        for m, w in terms:
            row = table[abs(m)]
            if m < 0 and m % 2:
                row = -row
            spectrum[:, m % nphi] += w * row
        # longitudes are uniform from phi=0, so synthesis is an inverse DFT
        values = np.fft.ifft(spectrum, axis=1) * nphi
    f = SampledField(grid, values, "sphere", source=spec, scale=1.0,
                     meta={"family": spec.family, "l": l, "m": spec.order,
                           "seed": spec.seed, "lambda": spec.frequency})
    return l2_normalize(f)


def eval_torus_eigenfunction(e: TorusEigenfunction, grid) -> SampledField:
    if grid.manifold != "torus":
        raise DomainError("eval_torus_eigenfunction needs a torus grid")
    lat, amps = e.arrays()
    n1, n2 = grid.shape
    rmax = int(np.abs(lat).max())
    if min(n1, n2) < 4 * math.sqrt(e.n) or rmax >= min(n1, n2) // 2:
        raise DomainError("torus grid too coarse for this eigenfunction")
    spec = np.zeros(grid.shape, dtype=complex)
    np.add.at(spec, (lat[:, 0] % n1, lat[:, 1] % n2), amps)
    values = np.fft.ifft2(spec) * (n1 * n2) / (2 * math.pi)
    return SampledField(grid, values, "torus", source=e, scale=1.0,
                        meta={"n": e.n, "lambda": e.frequency})


def l2_normalize(f: SampledField) -> SampledField:
    mass = f.mass()
    if not mass > 0.0:
        raise DomainError("cannot normalize a zero field")
    c = 1.0 / math.sqrt(mass)
    return replace(f, values=f.values * c, scale=f.scale * c)


def lattice_circle_points(n: int) -> list:
    """All (a, b) in Z^2 with a^2 + b^2 = n, sorted counterclockwise from angle 0.

    Sorting uses exact integer half-plane and cross-product comparisons.
    """
    if n < 1:
        raise DomainError("n must be positive")
    pts = []
    for a in range(0, math.isqrt(n) + 1):
        b2 = n - a * a
        b = math.isqrt(b2)
        if b * b == b2:
            for sa in {a, -a}:
                for sb in {b, -b}:
                    pts.append((sa, sb))
    return sorted(set(pts), key=cmp_to_key(angle_compare))


def _half(p) -> int:
    # 0 for angles in [0, pi), 1 for [pi, 2 pi)
    x, y = p
    return 0 if (y > 0 or (y == 0 and x > 0)) else 1


def angle_compare(p, q) -> int:
    hp, hq = _half(p), _half(q)
    if hp != hq:
        return -1 if hp < hq else 1
    cross = p[0] * q[1] - p[1] * q[0]
    return -1 if cross > 0 else (1 if cross < 0 else 0)


def sphere_laplacian(f: SampledField, l_max: int) -> np.ndarray:
    """Apply -Delta spectrally: analyse f into Y_l^m, l <= l_max, scale by l(l+1), resynthesise.

    Exact for band-limited fields on a grid that integrates degree 2*l_max.
    """
    grid = f.grid
    x = np.cos(grid.theta)
    wt = grid.theta_weights
    nphi = grid.phi.size
    fm = np.fft.fft(f.values, axis=1) * (2 * math.pi / nphi)
    out = np.zeros_like(fm)
    for m in range(-l_max, l_max + 1):
        col = fm[:, m % nphi]
        if not np.any(col):
            continue
        table = legendre_column(l_max, abs(m), x)
        if m < 0 and m % 2:
            table = -table
        ls = np.arange(abs(m), l_max + 1)
        coef = table @ (wt * col)
        out[:, m % nphi] = (ls * (ls + 1) * coef) @ table
    return np.fft.ifft(out, axis=1) * nphi
