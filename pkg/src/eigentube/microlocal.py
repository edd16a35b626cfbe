"""Phase-space tiles, spectral cutoffs and microlocal KN norms on the flat torus.

Model: T^2 = [0, 2 pi)^2, patch centre x0 = (0, 3/2), patch scale delta = 1/20.
Lines are parametrized by the chart

    phi(x, xi) = (x1 - x2 xi1/xi2, omega),   omega = first entry of the
                                             downward unit covector -sign(xi2) xi/|xi|,

i.e. the x1-intercept of the straight line through x in direction xi and its
tilt.  xi and -xi share a chart point, so one tile holds both orientations of
one family of lines.  phi is constant along the straight-line flow.

Fourier conventions: a torus field with grid values v has coefficients
f_hat(l) = fft2(v)/N^2, so f(x) = sum_l f_hat(l) e^{i x.l}.  A symbol acts by
(Q f)(x) = sum_l q(x, l) f_hat(l) e^{i x.l}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import QuadratureGrid, torus_grid
from .models import DomainError, SampledField

X0 = (0.0, 1.5)
DELTA = 1.0 / 20
C_UPSILON = 0.25
C_RHO = 25.0
SPARSE_TOL = 1e-12
DOMAIN_MIN = 0.5        # |xi2|/|xi| lower bound of the chart domain
PAIR_CHUNK = 2_000_000  # (x, l) pairs per accumulation chunk


class UnderResolvedError(DomainError):
    pass


# --------------------------------------------------------------------------
# smooth partitions

def _g(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = u > 0
    out[m] = np.exp(-1.0 / u[m])
    return out


def smooth_step(t):
    """H(t): 0 for t <= -1/2, 1 for t >= 1/2, C-infinity, H(t) + H(-t) = 1."""
    t = np.asarray(t, dtype=float)
    a, b = _g(t + 0.5), _g(0.5 - t)
    return a / (a + b)


def step_difference(t):
    """B(t) = H(t + 1/2) - H(t - 1/2); supported in (-1, 1), sum_k B(t + k) = 1."""
    t = np.asarray(t, dtype=float)
    return smooth_step(t + 0.5) - smooth_step(t - 0.5)


@dataclass(frozen=True)
class PartitionBump:
    """beta(z) = B(z1) B(z2)."""

    def __call__(self, z1, z2):
        return step_difference(z1) * step_difference(z2)

    @staticmethod
    def support_radius() -> float:
        return math.sqrt(2.0)


def upsilon(r, c: float = C_UPSILON):
    """1 on [c, 1/c], 0 off [c/2, 2/c]."""
    r = np.asarray(r, dtype=float)
    rise = smooth_step((r - 0.75 * c) / (0.5 * c))
    fall = 1.0 - smooth_step((r - 1.5 / c) / (1.0 / c))
    return rise * fall


def alpha_cutoff(dist, delta: float = DELTA):
    """1 on |x - x0| <= 3 delta/2, 0 for |x - x0| >= 2 delta."""
    return 1.0 - smooth_step((np.asarray(dist) - 1.75 * delta) / (0.5 * delta))


def patch_bump(dist, radius: float):
    """C-infinity bump equal to 1 at the centre, supported in |x - x0| < radius."""
    u = np.asarray(dist) / radius
    v = 1.0 - u * u
    out = np.zeros_like(v)
    m = v > 0
    out[m] = np.exp(1.0 - 1.0 / v[m])
    return out


# --------------------------------------------------------------------------
# spectral cutoff

@dataclass(frozen=True)
class SpectralCutoff:
    """chi_lam = rho(lam - |D|) with rho(s) = e^{3is/2} (sin(s/4)/(s/4))^2.

    rho_hat is the unit-mass triangle on [1, 2] peaked at 3/2, rho(0) = 1 and
    |rho(s)| <= C_RHO (1 + |s|)^{-2} with C_RHO = 25.
    """
    lam: float

    @staticmethod
    def rho(s):
        s = np.asarray(s, dtype=float)
        q = s / 4.0
        return np.exp(1.5j * s) * np.sinc(q / math.pi) ** 2

    @staticmethod
    def rho_hat(t):
        t = np.asarray(t, dtype=float)
        # rho(s) = integral of rho_hat(t) e^{its} dt
        return 2.0 * np.maximum(0.0, 1.0 - 2.0 * np.abs(t - 1.5))

    def multiplier(self, r):
        return self.rho(self.lam - np.asarray(r, dtype=float))

    def decay_bound(self, s):
        return C_RHO * (1.0 + np.abs(np.asarray(s, dtype=float))) ** (-2)


# --------------------------------------------------------------------------
# chart

def phi_map(x, xi):
    """(s, omega) of the line through x with direction xi.  Requires |xi2|/|xi| >= 1/2."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    nrm = np.hypot(xi[..., 0], xi[..., 1])
    if np.any(nrm == 0):
        raise DomainError("zero covector")
    if np.any(np.abs(xi[..., 1]) < DOMAIN_MIN * nrm * (1 - 1e-15)):
        raise DomainError("near-tangent direction outside the chart domain")
    s = x[..., 0] - x[..., 1] * xi[..., 0] / xi[..., 1]
    omega = -np.sign(xi[..., 1]) * xi[..., 0] / nrm
    return s, omega


def line_of(s: float, omega: float):
    """Base point (s, 0) and downward unit direction of the chart line (s, omega)."""
    return np.array([s, 0.0]), np.array([omega, -math.sqrt(1.0 - omega * omega)])


def unwrap(x, x0=X0):
    """Torus coordinates shifted into the window of side 2 pi centred at x0."""
    x0 = np.asarray(x0, dtype=float)
    return x0 + np.mod(np.asarray(x, dtype=float) - x0 + math.pi, 2 * math.pi) - math.pi


def dist_to_segment(x, base, direction, half_length: float):
    d = np.asarray(x, dtype=float) - base
    t = np.clip(d @ direction, -half_length, half_length)
    return np.linalg.norm(d - t[..., None] * direction, axis=-1)


# --------------------------------------------------------------------------
# setup shared by all tiles at one frequency

def default_grid_size(lam: float) -> int:
    return max(256, 1 << int(math.ceil(math.log2(4 * lam))))


@dataclass(eq=False)
class MicrolocalSetup:
    lam: float
    N: int = 0
    eps0: float = 0.1
    x0: tuple = X0
    delta: float = DELTA
    c: float = C_UPSILON

    def __post_init__(self):
        if self.N == 0:
            self.N = default_grid_size(self.lam)
        if self.N < 4 * self.lam:
            raise UnderResolvedError(
                f"grid N={self.N} under-resolves lam={self.lam}: need N >= 4 lam")

    # grid and frequencies --------------------------------------------------
    @cached_property
    def grid(self) -> QuadratureGrid:
        return torus_grid(self.N)

    @property
    def weight(self) -> float:
        return (2 * math.pi / self.N) ** 2

    @cached_property
    def freqs(self):
        k = np.fft.fftfreq(self.N, 1.0 / self.N).round().astype(np.int64)
        L1, L2 = np.meshgrid(k, k, indexing="ij")
        return L1, L2

    @cached_property
    def freq_norm(self):
        L1, L2 = self.freqs
        return np.hypot(L1, L2)

    @cached_property
    def in_domain(self):
        L1, L2 = self.freqs
        r = self.freq_norm
        return (r > 0) & (np.abs(L2) >= DOMAIN_MIN * r)

    @cached_property
    def upsilon_values(self):
        return upsilon(self.freq_norm / self.lam, self.c)

    @cached_property
    def chart_freq(self):
        """(slope xi1/xi2, omega) on the chart domain (zeros elsewhere)."""
        L1, L2 = self.freqs
        r = self.freq_norm
        dom = self.in_domain
        slope = np.zeros(L1.shape)
        omega = np.zeros(L1.shape)
        slope[dom] = L1[dom] / L2[dom]
        omega[dom] = -np.sign(L2[dom]) * L1[dom] / r[dom]
        return slope, omega

    @cached_property
    def cutoff(self) -> SpectralCutoff:
        return SpectralCutoff(self.lam)

    # patch ---------------------------------------------------------------
    @cached_property
    def patch(self):
        """Flat indices, unwrapped coordinates and alpha values of nodes with alpha > 0."""
        pts = unwrap(self.grid.points().reshape(-1, 2), self.x0)
        dist = np.linalg.norm(pts - np.asarray(self.x0), axis=1)
        a = alpha_cutoff(dist, self.delta)
        idx = np.flatnonzero(a > 0)
        return idx, pts[idx], a[idx]

    @property
    def theta0(self) -> float:
        return self.lam ** (-0.5 + self.eps0)

    @property
    def thetas(self) -> list:
        out, th = [], self.theta0
        while th <= 1.0 + 1e-12:
            out.append(th)
            th *= 2
        return out

    # helpers -------------------------------------------------------------
    def coefficients(self, f) -> np.ndarray:
        v = f.values if isinstance(f, SampledField) else np.asarray(f)
        if v.shape != (self.N, self.N):
            raise DomainError(f"field shape {v.shape} does not match grid {self.N}")
        return np.fft.fft2(v) / self.N ** 2

    def synthesize(self, fhat) -> np.ndarray:
        return np.fft.ifft2(fhat) * self.N ** 2

    def field(self, values, meta=None) -> SampledField:
        return SampledField(self.grid, np.asarray(values, dtype=complex), "torus",
                            meta=dict(meta or {}))

    def l2(self, values) -> float:
        return float(math.sqrt(self.weight * np.sum(np.abs(values) ** 2)))

    def apply_chi(self, f) -> SampledField:
        return apply_chi(f, self.cutoff, self)


def apply_chi(f: SampledField, cutoff: SpectralCutoff, setup: Optional[MicrolocalSetup] = None):
    """Fourier multiplier rho(lam - |l|)."""
    N = f.values.shape[0]
    if N < 4 * cutoff.lam:
        raise UnderResolvedError(f"grid N={N} under-resolves lam={cutoff.lam}")
    k = np.fft.fftfreq(N, 1.0 / N)
    r = np.hypot(k[:, None], k[None, :])
    out = np.fft.ifft2(np.fft.fft2(f.values) * cutoff.multiplier(r))
    return SampledField(f.grid, out, "torus", meta=dict(f.meta))


# --------------------------------------------------------------------------
# tiles

@dataclass(frozen=True)
class PhaseSpaceTile:
    setup: MicrolocalSetup
    theta: float
    nu: tuple

    def __post_init__(self):
        th0 = self.setup.theta0
        if not th0 * (1 - 1e-12) <= self.theta <= 1.0 + 1e-12:
            raise DomainError(f"theta={self.theta} outside [theta0={th0:.4g}, 1]")

    @property
    def chart_center(self):
        return (-self.theta * self.nu[0], -self.theta * self.nu[1])

    def line(self):
        s, om = self.chart_center
        if abs(om) >= 1:
            raise DomainError("tile centre outside the chart")
        return line_of(s, om)

    def symbol(self, x, ell):
        """q(x, l) = alpha(x) beta(phi(x, l)/theta + nu) Upsilon(|l|/lam), zero off the chart domain."""
        x = np.asarray(x, dtype=float)
        ell = np.asarray(ell, dtype=float)
        r = np.hypot(ell[..., 0], ell[..., 1])
        dom = (r > 0) & (np.abs(ell[..., 1]) >= DOMAIN_MIN * r)
        xu = unwrap(x, self.setup.x0)
        a = alpha_cutoff(np.linalg.norm(xu - np.asarray(self.setup.x0), axis=-1), self.setup.delta)
        safe = np.where(dom[..., None], ell, np.array([0.0, 1.0]))
        s, om = phi_map(xu, safe)
        b = PartitionBump()(s / self.theta + self.nu[0], om / self.theta + self.nu[1])
        return np.where(dom, a * b * upsilon(r / self.setup.lam, self.setup.c), 0.0)


def _sparse_coefficients(setup: MicrolocalSetup, fhat: np.ndarray):
    """Flat indices of frequencies that survive pruning, with weights Upsilon f_hat."""
    amp = np.abs(fhat)
    peak = amp.max() if amp.size else 0.0
    keep = setup.in_domain & (setup.upsilon_values > 0) & (amp > SPARSE_TOL * peak)
    idx = np.flatnonzero(keep)
    return idx, (setup.upsilon_values.ravel()[idx] * fhat.ravel()[idx])


@dataclass
class TileOutputs:
    """Q^nu_theta f on the patch nodes for every tile with a nonzero symbol."""
    theta: float
    nus: list
    values: np.ndarray          # (n_tiles, n_patch)

    def norms(self, weight: float) -> np.ndarray:
        return np.sqrt(weight * np.sum(np.abs(self.values) ** 2, axis=1))

    def index(self, nu) -> int:
        return self.nus.index(tuple(nu))


def _tile_ranges(setup: MicrolocalSetup, theta: float):
    _, pts, _ = setup.patch
    smax = float(np.max(np.abs(pts[:, 0])) + np.max(np.abs(pts[:, 1])) * math.sqrt(3.0)) + 1e-9
    n1 = int(math.ceil(smax / theta)) + 2
    n2 = int(math.ceil(1.0 / theta)) + 2
    return n1, n2


def apply_tiles(setup: MicrolocalSetup, f, thetas: Optional[Sequence[float]] = None,
                fhat: Optional[np.ndarray] = None, omega_window=None) -> list:
    """All tile outputs for each theta in one pass over (x, l) pairs.

    ``omega_window`` optionally restricts to frequencies whose omega lies in
    [lo, hi], which is exact for tiles whose beta-support lies inside it.
    """
    if thetas is None:
        thetas = setup.thetas
    if fhat is None:
        fhat = setup.coefficients(f)
    idx, coef = _sparse_coefficients(setup, fhat)
    slope_all, omega_all = setup.chart_freq
    slope, omega = slope_all.ravel()[idx], omega_all.ravel()[idx]
    if omega_window is not None:
        m = (omega >= omega_window[0]) & (omega <= omega_window[1])
        idx, coef, slope, omega = idx[m], coef[m], slope[m], omega[m]
    L1, L2 = setup.freqs
    l1, l2 = L1.ravel()[idx].astype(float), L2.ravel()[idx].astype(float)
    _, pts, a = setup.patch
    nx = pts.shape[0]
    ranges = [_tile_ranges(setup, th) for th in thetas]
    acc = [np.zeros((2 * n1 + 1) * (2 * n2 + 1) * nx, dtype=complex) for n1, n2 in ranges]
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    xi = np.arange(nx)
    for c0 in range(0, idx.size, chunk):
        sl = slice(c0, c0 + chunk)
        E = np.exp(1j * (pts[:, :1] * l1[None, sl] + pts[:, 1:] * l2[None, sl]))
        A = E * (a[:, None] * coef[None, sl])
        S = pts[:, :1] - pts[:, 1:] * slope[None, sl]
        for k, th in enumerate(thetas):
            n1, n2 = ranges[k]
            z1 = S / th
            z2 = omega[sl] / th
            v1 = np.floor(-z1)
            v2 = np.floor(-z2)
            # with t = z + v in (-1, 0]: B(t) = H(t + 1/2), B(t + 1) = 1 - H(t + 1/2)
            h1 = smooth_step(z1 + v1 + 0.5)
            h2 = smooth_step(z2 + v2 + 0.5)
            v1, v2 = v1.astype(np.int64), v2.astype(np.int64)
            for d1, b1 in ((0, h1), (1, 1.0 - h1)):
                for d2, b2 in ((0, h2), (1, 1.0 - h2)):
                    w = A * (b1 * b2[None, :])
                    tile = (v1 + d1 + n1) * (2 * n2 + 1) + (v2 + d2 + n2)[None, :]
                    flat = (tile * nx + xi[:, None]).ravel()
                    wf = w.ravel()
                    acc[k] += (np.bincount(flat, wf.real, minlength=acc[k].size)
                               + 1j * np.bincount(flat, wf.imag, minlength=acc[k].size))
    out = []
    for k, th in enumerate(thetas):
        n1, n2 = ranges[k]
        V = acc[k].reshape(-1, nx)
        live = np.flatnonzero(np.any(V != 0, axis=1))
        nus = [(int(t // (2 * n2 + 1) - n1), int(t % (2 * n2 + 1) - n2)) for t in live]
        out.append(TileOutputs(th, nus, V[live]))
    return out


def _omega_window(theta: float, nu2: int):
    return (-theta * (nu2 + 1) - 1e-12, -theta * (nu2 - 1) + 1e-12)


def apply_tile(tile: PhaseSpaceTile, f: SampledField) -> SampledField:
    """Q^nu_theta f as a field on the full torus grid (zero off the patch)."""
    setup = tile.setup
    res = apply_tiles(setup, f, [tile.theta], omega_window=_omega_window(tile.theta, tile.nu[1]))[0]
    out = np.zeros(setup.N * setup.N, dtype=complex)
    idx, _, _ = setup.patch
    if tuple(tile.nu) in res.nus:
        out[idx] = res.values[res.index(tile.nu)]
    return setup.field(out.reshape(setup.N, setup.N), {"tile": (tile.theta, tuple(tile.nu))})


def partition_error(setup: MicrolocalSetup, f, theta: float) -> float:
    """max |sum_nu Q^nu f - alpha * (Upsilon-filtered f)| on the patch, relative to the peak."""
    fhat = setup.coefficients(f)
    res = apply_tiles(setup, f, [theta], fhat=fhat)[0]
    total = res.values.sum(axis=0)
    idx, coef = _sparse_coefficients(setup, fhat)
    g = np.zeros(setup.N * setup.N, dtype=complex)
    g[idx] = coef
    ref = setup.synthesize(g.reshape(setup.N, setup.N)).ravel()
    pidx, _, a = setup.patch
    ref = a * ref[pidx]
    scale = max(np.abs(ref).max(), 1e-300)
    return float(np.abs(total - ref).max() / scale)


def beta_sum_error(z: np.ndarray, span: int = 4) -> float:
    """max |sum_nu beta(z + nu) - 1| over sample points z (..., 2)."""
    z = np.asarray(z, dtype=float)
    tot = np.zeros(z.shape[:-1])
    beta = PartitionBump()
    for n1 in range(-span, span + 1):
        for n2 in range(-span, span + 1):
            tot += beta(z[..., 0] + n1, z[..., 1] + n2)
    return float(np.abs(tot - 1.0).max())


# --------------------------------------------------------------------------
# microlocal KN norm

@dataclass
class MKNResult:
    lam: float
    eps0: float
    per_theta: dict            # theta -> (sup_nu theta^{-1/2} ||Q f||, argmax nu)
    sup: float
    l2_term: float
    total: float
    argmax: tuple = ()


def mkn_norm(f: SampledField, setup: MicrolocalSetup, check_support: bool = True) -> MKNResult:
    vals = f.values
    l2 = setup.l2(vals)
    if l2 == 0.0:
        return MKNResult(setup.lam, setup.eps0, {}, 0.0, 0.0, 0.0)
    if check_support:
        idx, _, a = setup.patch
        inside = np.zeros(vals.size, dtype=bool)
        inside[idx[a >= 1.0 - 1e-12]] = True
        out_mass = setup.weight * np.sum(np.abs(vals.ravel()[~inside]) ** 2)
        if out_mass > 1e-6 * l2 * l2:
            raise DomainError("field is not supported in the alpha patch")
    per, best, arg = {}, 0.0, ()
    for res in apply_tiles(setup, f):
        n = res.norms(setup.weight) / math.sqrt(res.theta)
        k = int(np.argmax(n))
        per[res.theta] = (float(n[k]), res.nus[k])
        if n[k] > best:
            best, arg = float(n[k]), (res.theta, res.nus[k])
    return MKNResult(setup.lam, setup.eps0, per, best, l2, best + l2, arg)


# --------------------------------------------------------------------------
# test fields

def random_patch_field(setup: MicrolocalSetup, seed: int = 0, cone: float = 0.5,
                       radius: Optional[float] = None) -> SampledField:
    """Random field with frequencies in ||l| - lam| <= sqrt(lam), |l1|/|l| <= cone,
    times a smooth bump supported in B(x0, radius); L^2-normalized."""
    if radius is None:
        radius = setup.delta
    rng = np.random.default_rng(seed)
    L1, L2 = setup.freqs
    r = setup.freq_norm
    band = (np.abs(r - setup.lam) <= math.sqrt(setup.lam)) & (np.abs(L1) <= cone * r)
    fhat = np.zeros((setup.N, setup.N), dtype=complex)
    k = int(band.sum())
    fhat[band] = rng.normal(size=k) + 1j * rng.normal(size=k)
    g = setup.synthesize(fhat)
    pts = unwrap(setup.grid.points(), setup.x0)
    dist = np.linalg.norm(pts - np.asarray(setup.x0), axis=-1)
    v = g * patch_bump(dist, radius)
    v /= setup.l2(v)
    return setup.field(v, {"seed": seed, "lam": setup.lam})


# --------------------------------------------------------------------------
# operator norms

def _pair_weights(setup: MicrolocalSetup, theta: float, idx: np.ndarray, sl: slice):
    """Tile indices and real weights alpha * beta * Upsilon for the 4 candidate tiles
    of each (x, l) pair in the chunk; also the tile-range offsets."""
    n1, n2 = _tile_ranges(setup, theta)
    slope_all, omega_all = setup.chart_freq
    ii = idx[sl]
    slope, omega = slope_all.ravel()[ii], omega_all.ravel()[ii]
    ups = setup.upsilon_values.ravel()[ii]
    _, pts, a = setup.patch
    z1 = (pts[:, :1] - pts[:, 1:] * slope[None, :]) / theta
    z2 = omega / theta
    v1, v2 = np.floor(-z1), np.floor(-z2)
    h1 = smooth_step(z1 + v1 + 0.5)
    h2 = smooth_step(z2 + v2 + 0.5)
    v1, v2 = v1.astype(np.int64), v2.astype(np.int64)
    base = a[:, None] * ups[None, :]
    out = []
    for d1, b1 in ((0, h1), (1, 1.0 - h1)):
        for d2, b2 in ((0, h2), (1, 1.0 - h2)):
            tile = (v1 + d1 + n1) * (2 * n2 + 1) + (v2 + d2 + n2)[None, :]
            out.append((tile, base * b1 * b2[None, :]))
    return out, (n1, n2)


def _freq_support(setup: MicrolocalSetup, omega_window=None) -> np.ndarray:
    keep = setup.in_domain & (setup.upsilon_values > 0)
    if omega_window is not None:
        om = setup.chart_freq[1]
        keep &= (om >= omega_window[0]) & (om <= omega_window[1])
    return np.flatnonzero(keep)


def tile_frobenius(setup: MicrolocalSetup, theta: float) -> dict:
    """Hilbert-Schmidt norm of every tile operator, as a map L^2 -> L^2(patch)."""
    idx = _freq_support(setup)
    nx = setup.patch[1].shape[0]
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    n1, n2 = _tile_ranges(setup, theta)
    acc = np.zeros((2 * n1 + 1) * (2 * n2 + 1))
    for c0 in range(0, idx.size, chunk):
        parts, _ = _pair_weights(setup, theta, idx, slice(c0, c0 + chunk))
        for tile, w in parts:
            acc += np.bincount(tile.ravel(), (w * w).ravel(), minlength=acc.size)
    acc *= setup.weight / (4 * math.pi ** 2)
    live = np.flatnonzero(acc > 0)
    return {(int(t // (2 * n2 + 1) - n1), int(t % (2 * n2 + 1) - n2)): float(math.sqrt(acc[t]))
            for t in live}


def tile_matrix_gram(tile: PhaseSpaceTile) -> np.ndarray:
    """M M^H for the matrix of Q^nu_theta from unit-normalized coefficients to
    weighted patch values; its top eigenvalue is ||Q^nu_theta||^2."""
    setup = tile.setup
    idx = _freq_support(setup, _omega_window(tile.theta, tile.nu[1]))
    _, pts, _ = setup.patch
    nx = pts.shape[0]
    L1, L2 = setup.freqs
    n1, n2 = _tile_ranges(setup, tile.theta)
    target = (tile.nu[0] + n1) * (2 * n2 + 1) + (tile.nu[1] + n2)
    G = np.zeros((nx, nx), dtype=complex)
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    for c0 in range(0, idx.size, chunk):
        sl = slice(c0, c0 + chunk)
        parts, _ = _pair_weights(setup, tile.theta, idx, sl)
        q = sum(np.where(t == target, w, 0.0) for t, w in parts)
        ii = idx[sl]
        E = np.exp(1j * (pts[:, :1] * L1.ravel()[ii][None, :] + pts[:, 1:] * L2.ravel()[ii][None, :]))
        M = q * E
        G += M @ M.conj().T
    return G * setup.weight / (4 * math.pi ** 2)


def tile_operator_norm(tile: PhaseSpaceTile) -> float:
    ev = np.linalg.eigvalsh(tile_matrix_gram(tile))
    return float(math.sqrt(max(ev[-1], 0.0)))


def sup_tile_norm(setup: MicrolocalSetup, theta: float, top: int = 4):
    """max over the ``top`` tiles of largest Hilbert-Schmidt norm of the exact operator norm."""
    fro = tile_frobenius(setup, theta)
    cands = sorted(fro, key=lambda k: -fro[k])[:top]
    norms = {nu: tile_operator_norm(PhaseSpaceTile(setup, theta, nu)) for nu in cands}
    nu = max(norms, key=norms.get)
    return norms[nu], nu, norms


def _apply_all(setup, theta, idx, c):
    """Forward map: coefficient vector c on idx -> (n_tiles_range, nx) outputs."""
    _, pts, _ = setup.patch
    nx = pts.shape[0]
    L1, L2 = setup.freqs
    n1, n2 = _tile_ranges(setup, theta)
    acc = np.zeros((2 * n1 + 1) * (2 * n2 + 1) * nx, dtype=complex)
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    xi = np.arange(nx)[:, None]
    for c0 in range(0, idx.size, chunk):
        sl = slice(c0, c0 + chunk)
        ii = idx[sl]
        E = np.exp(1j * (pts[:, :1] * L1.ravel()[ii][None, :] + pts[:, 1:] * L2.ravel()[ii][None, :]))
        A = E * c[None, sl]
        for tile, w in _pair_weights(setup, theta, idx, sl)[0]:
            flat = (tile * nx + xi).ravel()
            wf = (A * w).ravel()
            acc += (np.bincount(flat, wf.real, minlength=acc.size)
                    + 1j * np.bincount(flat, wf.imag, minlength=acc.size))
    return acc.reshape(-1, nx) / (2 * math.pi) * math.sqrt(setup.weight)


def _adjoint_all(setup, theta, idx, g):
    _, pts, _ = setup.patch
    nx = pts.shape[0]
    L1, L2 = setup.freqs
    out = np.zeros(idx.size, dtype=complex)
    gf = g.ravel()
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    xi = np.arange(nx)[:, None]
    for c0 in range(0, idx.size, chunk):
        sl = slice(c0, c0 + chunk)
        ii = idx[sl]
        E = np.exp(-1j * (pts[:, :1] * L1.ravel()[ii][None, :] + pts[:, 1:] * L2.ravel()[ii][None, :]))
        S = np.zeros(E.shape, dtype=complex)
        for tile, w in _pair_weights(setup, theta, idx, sl)[0]:
            S += w * gf[tile * nx + xi]
        out[sl] = np.sum(E * S, axis=0)
    return out / (2 * math.pi) * math.sqrt(setup.weight)


def square_function_norm(setup: MicrolocalSetup, theta: float, tol: float = 1e-6,
                         max_iter: int = 200, seed: int = 0):
    """||sum_nu Q^nu* Q^nu|| by power iteration; returns (value, converged, iterations)."""
    idx = _freq_support(setup)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=idx.size) + 1j * rng.normal(size=idx.size)
    c /= np.linalg.norm(c)
    val = 0.0
    for it in range(1, max_iter + 1):
        y = _adjoint_all(setup, theta, idx, _apply_all(setup, theta, idx, c))
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0, True, it
        c = y / new
        if abs(new - val) <= tol * new:
            return new, True, it
        val = new
    return val, False, max_iter


# --------------------------------------------------------------------------
# kernel concentration near the tile line

@dataclass
class LeakResult:
    lam: float
    theta: float
    nu: tuple
    y: tuple
    c_tube: float
    leak_fraction: float
    output_mass: float


def _place(setup: MicrolocalSetup, patch_values) -> np.ndarray:
    out = np.zeros(setup.N * setup.N, dtype=complex)
    out[setup.patch[0]] = patch_values
    return out.reshape(setup.N, setup.N)


def point_mass(setup: MicrolocalSetup, y) -> tuple:
    """Unit-L^2 grid delta at the node nearest y; returns (field, node coordinates)."""
    h = 2 * math.pi / setup.N
    i, j = (int(round(c / h)) % setup.N for c in np.mod(np.asarray(y, dtype=float), 2 * math.pi))
    v = np.zeros((setup.N, setup.N), dtype=complex)
    v[i, j] = 1.0 / math.sqrt(setup.weight)
    return setup.field(v), (i * h, j * h)


def kernel_tube_leak(setup: MicrolocalSetup, theta: float, nu: tuple, c_tube: float = 10.0,
                     y=None, half_length: float = 2.5) -> LeakResult:
    """Mass fraction of chi_lam Q^nu_theta delta_y outside the (c_tube theta)-tube of the tile line."""
    tile = PhaseSpaceTile(setup, theta, tuple(nu))
    base, d = tile.line()
    x0 = np.asarray(setup.x0)
    foot = base + ((x0 - base) @ d) * d
    if y is None:
        y = foot
    f, ynode = point_mass(setup, y)
    u = apply_tile(tile, f)
    g = apply_chi(u, setup.cutoff).values
    dens = np.abs(g) ** 2
    tot = float(setup.weight * dens.sum())
    if tot == 0.0:
        return LeakResult(setup.lam, theta, tuple(nu), ynode, c_tube, 0.0, 0.0)
    pts = unwrap(setup.grid.points(), setup.x0)
    dist = dist_to_segment(pts, foot, d, half_length)
    out = float(setup.weight * dens[dist > c_tube * theta].sum())
    return LeakResult(setup.lam, theta, tuple(nu), ynode, c_tube, out / tot, tot)


# --------------------------------------------------------------------------
# almost orthogonality of squared tile pieces

@dataclass
class OrthogonalityResult:
    lam: float
    theta: float
    separations: np.ndarray       # floor(|nu - nu'|) bins
    mean_overlap: np.ndarray      # mean |int g_nu^2 conj(g_nu'^2)| per bin
    near_diagonal: float          # mean over pairs with |nu - nu'| <= near
    far: float                    # mean over the largest-separation bin

    @property
    def ratio(self) -> float:
        return self.far / self.near_diagonal if self.near_diagonal > 0 else float("inf")

    def monotone_fraction(self) -> float:
        """Fraction of consecutive bins where the mean overlap does not increase."""
        d = np.diff(self.mean_overlap)
        return float(np.mean(d <= 0)) if d.size else 1.0


def orthogonality_quad(setup: MicrolocalSetup, f: SampledField, theta: Optional[float] = None,
                       rel_floor: float = 1e-2, near: float = 2.0) -> OrthogonalityResult:
    """Overlaps |int g_nu^2 conj(g_nu'^2) dx| with g_nu = chi Q^nu f, binned by |nu - nu'|.

    Tiles whose output norm is below ``rel_floor`` times the largest are dropped.
    """
    theta = setup.theta0 if theta is None else theta
    res = apply_tiles(setup, f, [theta])[0]
    norms = res.norms(setup.weight)
    keep = np.flatnonzero(norms >= rel_floor * norms.max())
    sq = []
    for k in keep:
        g = apply_chi(setup.field(_place(setup, res.values[k])), setup.cutoff).values
        sq.append((g * g).ravel())
    sq = np.array(sq)
    gram = np.abs(setup.weight * (sq @ sq.conj().T))
    nus = np.array([res.nus[k] for k in keep], dtype=float)
    sep = np.linalg.norm(nus[:, None, :] - nus[None, :, :], axis=2)
    iu = np.triu_indices(len(keep))
    s, v = sep[iu], gram[iu]
    b = np.floor(s + 1e-9).astype(int)
    bins = np.unique(b)
    means = np.array([v[b == k].mean() for k in bins])
    return OrthogonalityResult(setup.lam, theta, bins, means, float(v[s <= near + 1e-9].mean()),
                               float(means[-1]))


# --------------------------------------------------------------------------
# bilinear lower bound

BILINEAR_X0 = (0.0, 1.0)
BILINEAR_DELTA = 0.5


@dataclass
class BilinearResult:
    lam: float
    theta: float
    mu: tuple
    mu_p: tuple
    value: float
    converged: bool
    alternations: int
    history: list = field(default_factory=list)


def _tile_output_matrix(setup: MicrolocalSetup, theta: float, mu: tuple, out_idx: np.ndarray,
                        band: float = 0.5) -> np.ndarray:
    """Matrix of c -> (chi Q^mu f)(p) for output nodes p, where f_hat = c/(2 pi) on the
    frequencies of the tile with ||l| - lam| <= band lam."""
    r = setup.freq_norm
    keep = (setup.in_domain & (np.abs(r - setup.lam) <= band * setup.lam))
    om = setup.chart_freq[1]
    lo, hi = _omega_window(theta, mu[1])
    keep &= (om >= lo) & (om <= hi)
    idx = np.flatnonzero(keep)
    pidx, pts, _ = setup.patch
    nx = pts.shape[0]
    N = setup.N
    kern = np.fft.ifft2(setup.cutoff.multiplier(r))
    pi_, pj = np.divmod(out_idx, N)
    xi_, xj = np.divmod(pidx, N)
    K = kern[(pi_[:, None] - xi_[None, :]) % N, (pj[:, None] - xj[None, :]) % N]
    n1, n2 = _tile_ranges(setup, theta)
    target = (mu[0] + n1) * (2 * n2 + 1) + (mu[1] + n2)
    L1, L2 = setup.freqs
    T = np.zeros((out_idx.size, idx.size), dtype=complex)
    chunk = max(1, PAIR_CHUNK // max(nx, 1))
    for c0 in range(0, idx.size, chunk):
        sl = slice(c0, c0 + chunk)
        parts, _ = _pair_weights(setup, theta, idx, sl)
        q = sum(np.where(t == target, w, 0.0) for t, w in parts)
        ii = idx[sl]
        rows = np.flatnonzero(np.any(q != 0, axis=1))
        if rows.size == 0:
            continue
        p = pts[rows]
        E = np.exp(1j * (p[:, :1] * L1.ravel()[ii][None, :] + p[:, 1:] * L2.ravel()[ii][None, :]))
        T[:, sl] = K[:, rows] @ (q[rows] * E)
    return T / (2 * math.pi)


def _top_right(A: np.ndarray):
    w, V = np.linalg.eigh(A @ A.conj().T)
    v = A.conj().T @ V[:, -1]
    n = np.linalg.norm(v)
    return (v / n if n > 0 else v), math.sqrt(max(w[-1], 0.0))


def bilinear_lower_bound(mu, mu_p, theta: float, lam: float, eps0: float = 0.1,
                         n0: int = 4, n1: int = 8, N: int = 0, max_alt: int = 50,
                         tol: float = 1e-8, x0=BILINEAR_X0, delta: float = BILINEAR_DELTA,
                         out_radius: Optional[float] = None) -> BilinearResult:
    """Lower bound for the bilinear tile operator norm: the largest
    ||(chi Q^mu f1)(chi Q^mu' f2)||_{L^2(B(0, out_radius))} (default radius delta) found by alternating
    power iteration over unit f1, f2.  Only a lower bound."""
    mu, mu_p = tuple(mu), tuple(mu_p)
    if out_radius is None:
        out_radius = delta
    sep = math.hypot(mu[0] - mu_p[0], mu[1] - mu_p[1])
    if mu == mu_p or not n0 <= sep <= n1:
        raise DomainError(f"need {n0} <= |mu - mu'| <= {n1}, got {sep:g}")
    if N == 0:
        N = 1 << int(math.ceil(math.log2(4 * lam)))
    setup = MicrolocalSetup(lam, N=N, eps0=eps0, x0=x0, delta=delta)
    PhaseSpaceTile(setup, theta, mu)
    PhaseSpaceTile(setup, theta, mu_p)
    for m in (mu, mu_p):
        if theta * (abs(m[1]) + 1) > math.sqrt(1 - DOMAIN_MIN ** 2):
            raise DomainError(f"tile {m} at theta={theta} leaves the chart domain")
    pts = setup.grid.points().reshape(-1, 2)
    d = np.linalg.norm(unwrap(pts, (0.0, 0.0)), axis=1)
    out_idx = np.flatnonzero(d <= out_radius)
    T1 = _tile_output_matrix(setup, theta, mu, out_idx)
    T2 = _tile_output_matrix(setup, theta, mu_p, out_idx)
    sw = math.sqrt(setup.weight)
    c2, _ = _top_right(T2)
    h2 = T2 @ c2
    val, hist, conv, it = 0.0, [], False, 0
    for it in range(1, max_alt + 1):
        c1, _ = _top_right(h2[:, None] * T1)
        h1 = T1 @ c1
        c2, _ = _top_right(h1[:, None] * T2)
        h2 = T2 @ c2
        new = sw * float(np.linalg.norm(h1 * h2))
        hist.append(new)
        if it > 1 and abs(new - val) <= tol * new:
            val, conv = new, True
            break
        val = new
    return BilinearResult(lam, theta, mu, mu_p, val, conv, it, hist)
