import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln

from eigentube.geometry import (GeodesicGrid, GreatCircle, TorusLine, Tube, geodesic_grid_sphere,
                                geodesic_grid_torus, sphere_grid, torus_grid, tube_mask)
from eigentube.models import (DomainError, SampledField, SphereHarmonicSpec, TorusEigenfunction,
                              eval_sphere_harmonic, eval_torus_eigenfunction, l2_normalize)
from eigentube.norms import (UnderResolvedError, kn_norm, lp_norm, ratio_1_1pp, ratio_1_1ppp,
                             restriction_norm, sup_tube_mass, tube_width)


def _const(g):
    return l2_normalize(SampledField(g, np.ones(g.shape, complex), "sphere"))


def _hw(l, oversample=1):
    g = sphere_grid(l, oversample)
    return eval_sphere_harmonic(SphereHarmonicSpec("highest_weight", l), g)


def _hw_l4_oracle(l):
    # |Y_l^l|^2 = c sin^{2l}, c = (2l+1)! / (4 pi 4^l (l!)^2); int sin^{4l+1} over [0, pi]
    logc = gammaln(2 * l + 2) - math.log(4 * math.pi) - l * math.log(4) - 2 * gammaln(l + 1)
    n = 4 * l + 1
    log_int = 0.5 * math.log(math.pi) + gammaln((n + 1) / 2) - gammaln(n / 2 + 1)
    return math.exp(2 * logc + math.log(2 * math.pi) + log_int) ** 0.25


def test_lp_constant():
    f = _const(sphere_grid(2))
    assert abs(lp_norm(f, 4) - (4 * math.pi) ** -0.25) <= 1e-14
    assert abs(lp_norm(f, 2) - 1) <= 1e-12
    assert abs(lp_norm(f, math.inf) - 1 / math.sqrt(4 * math.pi)) <= 1e-15
    with pytest.raises(DomainError):
        lp_norm(f, 0.5)


@pytest.mark.parametrize("l", [8, 64, 256])
def test_highest_weight_l4_oracle(l):
    assert abs(lp_norm(_hw(l), 4) - _hw_l4_oracle(l)) <= 1e-12


def test_highest_weight_l4_calibrated_power():
    lam = lambda l: math.sqrt(l * (l + 1))
    c = lp_norm(_hw(256), 4) / lam(256) ** 0.125
    assert abs(lp_norm(_hw(64), 4) / (c * lam(64) ** 0.125) - 1) <= 0.02


def test_restriction_constant_equator():
    f = eval_sphere_harmonic(SphereHarmonicSpec("single_lm", 0, 0), sphere_grid(2))
    assert abs(restriction_norm(f, GreatCircle([0, 0, 1])) - 0.5) <= 1e-14


def test_restriction_zonal_meridian_larger():
    f = eval_sphere_harmonic(SphereHarmonicSpec("zonal", 32), sphere_grid(32))
    mer = restriction_norm(f, GreatCircle([1, 0, 0]))
    equ = restriction_norm(f, GreatCircle([0, 0, 1]))
    dense = restriction_norm(f, GreatCircle([1, 0, 0]), n_pts=20000)
    assert mer > equ
    assert abs(mer - dense) <= 1e-12


def test_restriction_point_count_guard():
    f = eval_sphere_harmonic(SphereHarmonicSpec("zonal", 32), sphere_grid(32))
    with pytest.raises(DomainError):
        restriction_norm(f, GreatCircle([1, 0, 0]), n_pts=100)


def test_restriction_torus_plane_wave():
    e = TorusEigenfunction(25, {(3, 4): 2.0})
    f = eval_torus_eigenfunction(e, torus_grid(32))
    line = TorusLine(-4, 3, 0.3)
    want = (2.0 / (2 * math.pi)) ** 2 * line.length
    assert abs(restriction_norm(f, line) - want) <= 1e-12


def test_kn_highest_weight_eps_half():
    l = 64
    f = _hw(l, 2)
    r = kn_norm(f, math.sqrt(l * (l + 1)), 0.5, geodesic_grid_sphere(64))
    assert abs(r.delta - 1.0) <= 1e-15
    assert 0.99 <= r.kn_squared <= 1.0 + 1e-12


@pytest.mark.parametrize("eps0", [0.05, 0.1, 0.25])
def test_kn_constant_band_area(eps0):
    lam = 64.0
    f = _const(sphere_grid(64, 4))
    r = kn_norm(f, lam, eps0, geodesic_grid_sphere(64))
    want = lam ** (0.5 - eps0) * math.sin(tube_width(lam, eps0))
    # sharp tube on a grid: band-area error of order one spacing per unit width
    assert abs(r.kn_squared - want) <= 3 * f.grid.spacing / r.delta * want


def test_kn_zonal_argmax_meridian():
    l = 64
    f = eval_sphere_harmonic(SphereHarmonicSpec("zonal", l), sphere_grid(l, 2))
    r = kn_norm(f, math.sqrt(l * (l + 1)), 0.1, geodesic_grid_sphere(512))
    assert abs(r.geodesic.pole[2]) <= 0.02       # pole on the equator: circle through both poles
    assert r.value >= r.coarse_value


def test_kn_under_resolved_and_domain():
    f = _hw(16)
    with pytest.raises(UnderResolvedError, match="under-resolved"):
        kn_norm(f, 1e4, 0.05, geodesic_grid_sphere(64))
    with pytest.raises(DomainError):
        kn_norm(f, 16.0, 0.0, geodesic_grid_sphere(64))


def test_kn_monotone_in_eps0():
    l = 32
    f = eval_sphere_harmonic(SphereHarmonicSpec("random_gaussian", l, seed=4), sphere_grid(l, 4))
    G = geodesic_grid_sphere(256)
    m = [sup_tube_mass(f, tube_width(l, e), G)[1] for e in (0.05, 0.1, 0.25, 0.4)]
    assert all(b >= a - 1e-12 for a, b in zip(m, m[1:]))


def test_ratio_constant_finite():
    f = _const(sphere_grid(8, 4))
    r = ratio_1_1pp(f, 1.0, 0.25, geodesic_grid_sphere(64))
    assert 0 < r < math.inf
    r1, r2 = ratio_1_1ppp(f, 1.0, geodesic_grid_sphere(64))
    assert 0 < r1 < math.inf and 0 < r2 < math.inf


def test_ratio_highest_weight_order_one():
    l = 64
    f = _hw(l, 4)
    lam = math.sqrt(l * (l + 1))
    r1, _ = ratio_1_1ppp(f, lam, geodesic_grid_sphere(128))
    assert 0.2 <= r1 <= 5


def test_ratio_torus_plane_wave_closed_form():
    # |e| = 1/(2 pi) everywhere, tube of half-width d around a (1,0) line has area 2 d (2 pi)
    f = eval_torus_eigenfunction(TorusEigenfunction(25, {(3, 4): 1.0}), torus_grid(256))
    lam = 5.0
    d = tube_width(lam, 0.0)
    full = geodesic_grid_torus(1, 0.05)
    G = GeodesicGrid("torus", [c for c in full.candidates if (c.p, c.q) == (1, 0)], 0.05)
    m2 = sup_tube_mass(f, d, G)[1]
    n_nodes = np.sum(tube_mask(f.grid, Tube(TorusLine(1, 0, 0.0), d)) > 0)
    area = n_nodes * f.grid.weights[0, 0]
    assert abs(m2 - area / (4 * math.pi ** 2)) <= 1e-12
    assert abs(area - 4 * math.pi * d) <= 2 * math.pi * 2 * f.grid.spacing
    r1, _ = ratio_1_1ppp(f, lam, G)
    want = (2 * math.pi) ** -0.5 / (lam ** 0.125 * m2 ** 0.25)
    assert abs(r1 - want) <= 1e-12


@given(st.integers(0, 10 ** 6), st.floats(0.05, 0.7))
@settings(max_examples=25, deadline=None)
def test_holder_consistency(seed, r):
    g = sphere_grid(12, 2)
    f = eval_sphere_harmonic(SphereHarmonicSpec("random_gaussian", 12, seed=seed), g)
    rng = np.random.default_rng(seed)
    m = tube_mask(g, Tube(GreatCircle(rng.normal(size=3)), r))
    a = np.abs(f.values)
    l2 = math.sqrt(np.sum(m * a ** 2))
    l4 = np.sum(m * a ** 4) ** 0.25
    assert l2 <= m.sum() ** 0.25 * l4 * (1 + 1e-12)
