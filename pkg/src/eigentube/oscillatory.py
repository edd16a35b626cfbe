"""Two-distance oscillatory integral operators and their L^2 norms.

T F(x) = int e^{i lam Psi(x; s, t)} b(x; s, t) F(s, t) ds dt with

    Psi(x; s, t) = psi(x, (s + t, y2)) + psi(x, (s - t, y2')),

x = (x1, x2) in Fermi-type coordinates about the segment {x1 = 0}.  The
discretization multiplies rows by exp(-i lam Psi(x; 0, 0)) and columns by
exp(-i lam (Psi(x0; s, t) - Psi(x0; 0, 0))).  Both are unitary diagonal
factors, so the operator norm is unchanged, but the remaining phase only
varies at the rate of the mixed derivatives, which keeps the grids small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import DomainError

MAX_ENTRIES = 2 * 10 ** 8
THETA_MAX = 0.5


class ResolutionError(DomainError):
    pass


class MemoryGuardError(DomainError):
    pass


# --------------------------------------------------------------------------
# phase

@dataclass(frozen=True)
class ModelPhase:
    """Two-distance phase; metric "radial" uses psi = r (1 + eta sin 2r) and
    "control" replaces Psi by the nondegenerate x.(s, t)."""
    y2: float = 1.4
    y2p: float = 1.425
    metric: str = "euclidean"
    eta: float = 0.0

    def __post_init__(self):
        if self.metric not in ("euclidean", "radial", "control"):
            raise DomainError(f"unknown metric {self.metric!r}")
        if self.metric == "radial" and not 0 <= self.eta <= 0.05:
            raise DomainError("eta must lie in [0, 0.05]")

    def psi(self, x1, x2, y1, y2):
        r = np.hypot(x1 - y1, x2 - y2)
        if self.metric == "euclidean":
            return r
        return r * (1.0 + self.eta * np.sin(2.0 * r))

    def __call__(self, x1, x2, s, t):
        if self.metric == "control":
            # nondegenerate bilinear phase x.(s, t)
            return x1 * s + x2 * t + 0.0 * (x1 + x2 + s + t)
        return self.psi(x1, x2, s + t, self.y2) + self.psi(x1, x2, s - t, self.y2p)

    def distances(self, x1, x2, s, t):
        return (np.hypot(x1 - s - t, x2 - self.y2), np.hypot(x1 - s + t, x2 - self.y2p))


# --------------------------------------------------------------------------
# cutoff

def _bump(u):
    """C-infinity bump supported in |u| < 1/2, equal to 1 at 0."""
    u = np.asarray(u, dtype=float)
    v = 1.0 - (2.0 * u) ** 2
    out = np.zeros_like(v)
    m = v > 0
    out[m] = np.exp(1.0 - 1.0 / v[m])
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """b = g(x1/(a theta)) g(s/(a_s theta)) w(t/theta) h(x2).

    Bumps are supported in |x1| < x1_half theta, |s| < s_half theta and
    t_gap theta < |t| < t_half theta, so b = 0 once |x1| + |s| + |t| >= C theta
    with C = x1_half + s_half + t_half.  Keeping |t| >= t_gap theta makes the
    mixed derivative in (x2, t) of size theta on the support.
    """
    theta: float
    x1_half: float = 1.0
    s_half: float = 1.0
    t_half: float = 1.0
    t_gap: float = 0.25
    x2_range: tuple = (-0.2, 0.4)
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0 < self.theta <= THETA_MAX:
            raise DomainError(f"theta={self.theta} must lie in (0, {THETA_MAX}]")
        if not 0 <= self.t_gap < self.t_half:
            raise DomainError("need 0 <= t_gap < t_half")

    @property
    def C(self) -> float:
        return self.x1_half + self.s_half + self.t_half

    def h(self, x2):
        a, b = self.x2_range
        return _bump((np.asarray(x2) - 0.5 * (a + b)) / (b - a))

    def w(self, u):
        lo, hi = self.t_gap, self.t_half
        if lo == 0:
            return _bump(np.asarray(u) / (2 * hi))
        return _bump((np.abs(u) - 0.5 * (lo + hi)) / (hi - lo))

    def __call__(self, x1, x2, s, t):
        th = self.theta
        return (self.amplitude * _bump(x1 / (2 * self.x1_half * th))
                * _bump(s / (2 * self.s_half * th))
                * self.w(np.asarray(t) / th) * self.h(x2))

    def support_box(self):
        """Half-widths of the support in x1, s, t and the x2 interval."""
        th = self.theta
        return self.x1_half * th, self.s_half * th, self.t_half * th, self.x2_range


# --------------------------------------------------------------------------
# matrix

@dataclass
class OscillatorMatrix:
    lam: float
    theta: float
    x1: np.ndarray
    x2: np.ndarray
    s: np.ndarray
    t: np.ndarray
    matrix: np.ndarray
    margins: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape


def _nodes(half: float, h: float, n_min: int, lo=None, hi=None):
    if lo is None:
        lo, hi = -half, half
    n = max(n_min, int(math.ceil((hi - lo) / h)) + 1)
    # open endpoints: the integrand vanishes there
    return np.linspace(lo, hi, n + 2)[1:-1]


def _mixed_gradient(phase: ModelPhase, cutoff: CutoffProfile, n_probe: int = 9):
    """Max |d/dx_k (Psi(x; sigma) - Psi(x; 0))| and |d/dsigma_k (Psi(x; sigma) - Psi(x0; sigma))|
    over a probe lattice of the support."""
    hx1, hs, ht, (a, b) = cutoff.support_box()
    x1 = np.linspace(-hx1, hx1, n_probe)
    x2 = np.linspace(a, b, n_probe)
    s = np.linspace(-hs, hs, n_probe)
    t = np.linspace(-ht, ht, n_probe)
    X1, X2, S, T = np.meshgrid(x1, x2, s, t, indexing="ij")
    x0 = 0.5 * (a + b)
    e = 1e-6

    def mixed(X1, X2, S, T):
        return phase(X1, X2, S, T) - phase(X1, X2, 0.0 * S, 0.0 * T) - phase(0.0 * X1, x0 + 0.0 * X2, S, T)

    g = {}
    for name, d in (("x1", (e, 0, 0, 0)), ("x2", (0, e, 0, 0)), ("s", (0, 0, e, 0)), ("t", (0, 0, 0, e))):
        plus = mixed(X1 + d[0], X2 + d[1], S + d[2], T + d[3])
        minus = mixed(X1 - d[0], X2 - d[1], S - d[2], T - d[3])
        g[name] = float(np.max(np.abs(plus - minus)) / (2 * e))
    return g


def assemble(phase: ModelPhase, cutoff: CutoffProfile, lam: float, theta: Optional[float] = None,
             r: float = 4.0, n_min: int = 24) -> OscillatorMatrix:
    """Dense discretization with sqrt trapezoid weights on both sides."""
    if theta is None:
        theta = cutoff.theta
    if not 0 < theta <= THETA_MAX:
        raise DomainError(f"theta={theta} must lie in (0, {THETA_MAX}]")
    if abs(theta - cutoff.theta) > 1e-15:
        raise DomainError("cutoff theta and assembly theta differ")
    if r < 2:
        raise ResolutionError("need at least 2 points per wavelength")
    grad = _mixed_gradient(phase, cutoff)
    hx1, hs, ht, (a, b) = cutoff.support_box()
    wavelength = 2 * math.pi / lam
    steps = {k: wavelength / (r * max(g, 1e-12)) for k, g in grad.items()}
    x1 = _nodes(hx1, steps["x1"], n_min)
    x2 = _nodes(None, steps["x2"], n_min, a, b)
    s = _nodes(hs, steps["s"], n_min)
    t = _nodes(ht, steps["t"], n_min)
    n_rows, n_cols = x1.size * x2.size, s.size * t.size
    if n_rows * n_cols > MAX_ENTRIES:
        raise MemoryGuardError(f"matrix {n_rows}x{n_cols} exceeds {MAX_ENTRIES} entries")
    spacing = {"x1": x1[1] - x1[0], "x2": x2[1] - x2[0], "s": s[1] - s[0], "t": t[1] - t[0]}
    # Nyquist spacing pi/(lam g) over actual spacing
    margins = {k: (math.pi / (lam * max(grad[k], 1e-12))) / spacing[k] for k in grad}
    if min(margins.values()) < 1.0:
        raise ResolutionError(f"under-sampled phase: margins {margins}")

    X1, X2 = [u.ravel() for u in np.meshgrid(x1, x2, indexing="ij")]
    S, T = [u.ravel() for u in np.meshgrid(s, t, indexing="ij")]
    x0 = 0.5 * (a + b)
    P = (phase(X1[:, None], X2[:, None], S[None, :], T[None, :])
         - phase(X1, X2, 0.0, 0.0)[:, None]
         - phase(0.0, x0, S, T)[None, :]
         + phase(0.0, x0, 0.0, 0.0))
    B = cutoff(X1[:, None], X2[:, None], S[None, :], T[None, :])
    wx = math.sqrt(spacing["x1"] * spacing["x2"])
    ws = math.sqrt(spacing["s"] * spacing["t"])
    M = np.exp(1j * lam * P) * B * (wx * ws)
    return OscillatorMatrix(lam, theta, x1, x2, s, t, M, margins)


# --------------------------------------------------------------------------
# norms

@dataclass
class NormResult:
    value: float
    converged: bool
    iterations: int
    restarts: tuple


def op_norm(m, tol: float = 1e-6, restarts: int = 3, max_iter: int = 2000,
            seed: int = 0) -> NormResult:
    """Largest singular value by power iteration on M*M with seeded restarts."""
    M = m.matrix if isinstance(m, OscillatorMatrix) else np.asarray(m)
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix has non-finite entries")
    rng = np.random.default_rng(seed)
    vals, conv_all, its = [], True, 0
    for _ in range(restarts):
        v = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
        v /= np.linalg.norm(v)
        sig, conv = 0.0, False
        for k in range(max_iter):
            w = M.conj().T @ (M @ v)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                sig, conv = 0.0, True
                break
            new = math.sqrt(nw)
            v = w / nw
            its += 1
            if abs(new - sig) <= tol * new:
                sig, conv = new, True
                break
            sig = new
        vals.append(sig)
        conv_all &= conv
    return NormResult(max(vals), conv_all, its, tuple(vals))


def svd_norm(m) -> float:
    M = m.matrix if isinstance(m, OscillatorMatrix) else np.asarray(m)
    return float(np.linalg.svd(M, compute_uv=False)[0])


# --------------------------------------------------------------------------
# scaling

def loglog_slope(x: Sequence[float], y: Sequence[float]):
    """Least-squares slope, intercept and residuals of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), float(coef[1]), ly - A @ coef


@dataclass
class ScalingFit:
    parameter: str
    xs: list
    norms: list
    slope: float
    intercept: float
    residuals: list
    converged: bool


def scaling_fit(phase: ModelPhase, lams: Sequence[float], thetas: Sequence[float],
                lam_fixed: float = 200.0, theta_fixed: float = 0.2,
                cutoff_factory: Callable[[float], CutoffProfile] = CutoffProfile,
                r: float = 4.0):
    """Slopes of ||T|| in lam (theta fixed) and in theta (lam fixed)."""
    if len(lams) < 4 or len(thetas) < 4:
        raise DomainError("need at least 4 values per swept parameter")
    out = []
    for name, xs in (("lambda", lams), ("theta", thetas)):
        norms, conv = [], True
        for x in xs:
            lam, th = (x, theta_fixed) if name == "lambda" else (lam_fixed, x)
            res = op_norm(assemble(phase, cutoff_factory(th), lam, th, r=r))
            norms.append(res.value)
            conv &= res.converged
        slope, icpt, resid = loglog_slope(xs, norms)
        out.append(ScalingFit(name, list(xs), norms, slope, icpt, list(resid), conv))
    return tuple(out)


# --------------------------------------------------------------------------
# kernel of T*T

@dataclass
class EnvelopeReport:
    lam: float
    theta: float
    constants: dict            # N -> smallest C for the sample
    trivial_bound: float       # int |b|^2 dx at the worst sampled point
    coincident_ok: bool
    n_samples: int


def _envelope(N: int, lam: float, theta: float, d: np.ndarray) -> np.ndarray:
    return theta ** (1 - N) * (1 + lam * d) ** (-N) + theta * (1 + lam * theta * d) ** (-N)


def kernel_values(phase: ModelPhase, cutoff: CutoffProfile, lam: float,
                  st: np.ndarray, stp: np.ndarray, r: float = 4.0, n_min: int = 32,
                  span: Optional[float] = None):
    """K(s,t; s',t') = int e^{i lam (Psi(x;s,t) - Psi(x;s',t'))} b b' dx by trapezoid.

    ``span`` fixes the x grid (as if the largest argument gap were span) so
    that several calls share one quadrature rule.
    """
    hx1, hs, ht, (a, b) = cutoff.support_box()
    if span is None:
        span = np.max(np.abs(st - stp)) if len(st) else 0.0
    # x-gradient of Psi(x;s,t) - Psi(x;s',t') is at most ~3|sigma - sigma'|
    g = max(3.0 * span, 1e-12)
    h = 2 * math.pi / (r * lam * g)
    x1 = _nodes(hx1, h, n_min)
    x2 = _nodes(None, h, n_min, a, b)
    if (math.pi / (lam * g)) / min(x1[1] - x1[0], x2[1] - x2[0]) < 1.0:
        raise ResolutionError("kernel quadrature under-resolved")
    X1, X2 = [u.ravel() for u in np.meshgrid(x1, x2, indexing="ij")]
    w = (x1[1] - x1[0]) * (x2[1] - x2[0])
    out = np.empty(len(st), dtype=complex)
    for k, ((s, t), (sp, tp)) in enumerate(zip(st, stp)):
        ph = phase(X1, X2, s, t) - phase(X1, X2, sp, tp)
        out[k] = w * np.sum(np.exp(1j * lam * ph) * cutoff(X1, X2, s, t) * cutoff(X1, X2, sp, tp))
    return out


def kernel_envelope_check(phase: ModelPhase, cutoff: CutoffProfile, lam: float,
                          n_samples: int = 64, seed: int = 0, r: float = 4.0) -> EnvelopeReport:
    """Smallest C with |K| <= C * envelope_N on a sample of argument pairs, N in {0, 3}.

    Both arguments are drawn on the t > 0 branch of the cutoff: t -> -t nearly
    swaps the two centres (they differ only by y2' - y2), so pairs taken from
    opposite branches are close to coincident and are not covered by the
    envelope.
    """
    theta = cutoff.theta
    if lam * theta ** 2 < 1:
        raise DomainError("kernel envelope check needs lam theta^2 >= 1")
    _, hs, ht, _ = cutoff.support_box()
    rng = np.random.default_rng(seed)

    def draw(n):
        s = rng.uniform(-hs, hs, n)
        t = rng.uniform(cutoff.t_gap * theta, ht, n)
        return np.stack([s, t], axis=1)

    base = draw(n_samples)
    other = draw(n_samples)
    # include coincident pairs and pairs at separation 10/(lam theta) in s
    k = n_samples // 4
    other[:k] = base[:k]
    other[k:2 * k] = base[k:2 * k] + np.array([10.0 / (lam * theta), 0.0])
    span = float(np.max(np.abs(base - other)))
    K = np.abs(kernel_values(phase, cutoff, lam, base, other, r=r, span=span))
    d = np.linalg.norm(base - other, axis=1)
    consts = {N: float(np.max(K / _envelope(N, lam, theta, d))) for N in (0, 3)}
    diag = np.abs(kernel_values(phase, cutoff, lam, base[:k], base[:k], r=r, span=span))
    return EnvelopeReport(lam, theta, consts, float(diag.max()),
                          bool(np.all(K[:k] <= diag * (1 + 1e-12))), n_samples)


# --------------------------------------------------------------------------
# derivative diagnostics

def _fd(f, x, i, j=None, h=1e-4):
    x = np.asarray(x, dtype=float)

    def sh(v, k, d):
        v = v.copy()
        v[k] += d
        return v

    if j is None:
        return (f(*sh(x, i, h)) - f(*sh(x, i, -h))) / (2 * h)
    return (f(*sh(sh(x, i, h), j, h)) - f(*sh(sh(x, i, h), j, -h))
            - f(*sh(sh(x, i, -h), j, h)) + f(*sh(sh(x, i, -h), j, -h))) / (4 * h * h)


def phase_derivatives(phase: ModelPhase, x2: float) -> dict:
    """Mixed derivatives of Psi at (0, x2; 0, 0); coordinates ordered (x1, x2, s, t)."""
    p = (0.0, x2, 0.0, 0.0)
    return {
        "d_x2_d_s": float(_fd(phase, p, 1, 2)),
        "d_x2_d_t": float(_fd(phase, p, 1, 3)),
        "d_x1": float(_fd(phase, p, 0)),
        "d_x1_d_s": float(_fd(phase, p, 0, 2)),
    }


def support_derivative_bounds(phase: ModelPhase, cutoff: CutoffProfile, n: int = 7) -> dict:
    """Proxies on the cutoff support: min |d_x2 d_t Psi| / theta and
    max |d_x1 d_t Psi(x; s, 0)| / |y2 - y2'|."""
    hx1, hs, ht, (a, b) = cutoff.support_box()
    th = cutoff.theta
    lo_t = cutoff.t_gap * th
    c_min, C_max = np.inf, 0.0
    for x1 in np.linspace(-hx1, hx1, n):
        for x2 in np.linspace(a, b, n):
            for s in np.linspace(-hs, hs, n):
                for t in np.concatenate([np.linspace(lo_t, ht, n), -np.linspace(lo_t, ht, n)]):
                    c_min = min(c_min, abs(_fd(phase, (x1, x2, s, t), 1, 3)) / th)
                C_max = max(C_max, abs(_fd(phase, (x1, x2, s, 0.0), 0, 3)))
    dy = abs(phase.y2 - phase.y2p)
    return {"c": float(c_min), "C": float(C_max / dy) if dy > 0 else float("nan"),
            "max_d_x1_d_t": float(C_max)}
