import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigentube.geometry import TorusLine
from eigentube.lattice import (ArcQuery, cc_regime_scan, l4_grid_quadrature, max_arc_count,
                               torus_restriction, torus_restriction_trapezoid, zygmund_l4)
from eigentube.models import DomainError, TorusEigenfunction, lattice_circle_points


def test_arc_unit_window_n1():
    c, w = max_arc_count(ArcQuery(1, -0.5))
    assert c == 1 and len(w.points) == 1


def test_arc_n25_long_windows():
    # a = 1 gives arclength 25 (aperture 5 rad < 2 pi): the largest gap is left out
    assert max_arc_count(ArcQuery(25, 1.0))[0] == 11
    # windows of at least a full turn see every point
    assert max_arc_count(ArcQuery(25, 1.2))[0] == 12


def test_arc_zero_window():
    c, _ = max_arc_count(ArcQuery(25, 0.0), pts=lattice_circle_points(25))
    assert max_arc_count(ArcQuery(65, -50.0))[0] == 1
    assert c >= 1


def test_arc_empty_circle():
    assert max_arc_count(ArcQuery(3, 0.0)) == (0, None)


def test_arc_witness_is_consistent():
    q = ArcQuery(5 ** 4 * 13 ** 2, -0.3)
    c, w = max_arc_count(q)
    ang = np.array([math.atan2(b, a) for a, b in w.points])
    span = (ang[-1] - ang[0]) % (2 * math.pi)
    assert len(w.points) == c
    assert span <= w.aperture + 1e-12


def _rotate(pts, k):
    out = pts
    for _ in range(k):
        out = [(-b, a) for a, b in out]
    return out


@given(st.integers(1, 20000), st.floats(-0.9, 0.5))
@settings(max_examples=60, deadline=None)
def test_arc_count_dihedral_invariant(n, a):
    pts = lattice_circle_points(n)
    c0 = max_arc_count(ArcQuery(n, a), pts)[0]
    rot = sorted(_rotate(pts, 1), key=lambda p: math.atan2(p[1], p[0]) % (2 * math.pi))
    ref = sorted([(a_, -b_) for a_, b_ in pts], key=lambda p: math.atan2(p[1], p[0]) % (2 * math.pi))
    assert max_arc_count(ArcQuery(n, a), rot)[0] == c0
    assert max_arc_count(ArcQuery(n, a), ref)[0] == c0


def test_arc_brute_force():
    # oracle: count points within the closed window starting at each point
    rng = np.random.default_rng(3)
    for n in (65, 325, 1105, 5525):
        pts = lattice_circle_points(n)
        ang = np.sort(np.array([math.atan2(b, a) % (2 * math.pi) for a, b in pts]))
        for a in rng.uniform(-0.9, 0.3, 5):
            ap = ArcQuery(n, a).arclength / math.sqrt(n)
            best = max(int(np.sum(((ang - t) % (2 * math.pi)) <= ap + 1e-12)) for t in ang)
            assert max_arc_count(ArcQuery(n, a))[0] == best


def test_scan_small_and_guard():
    assert cc_regime_scan(1, 0.1).n.size == 0
    with pytest.raises(DomainError):
        cc_regime_scan(10 ** 7, 0.1)


def test_scan_running_max_stable():
    t = cc_regime_scan(20000, 0.1)
    assert t.max_up_to(10000) == t.max_up_to(20000)
    assert np.all(np.diff(t.running_max) >= 0)
    t0 = cc_regime_scan(20000, 0.0)
    assert t0.max_up_to(20000) >= t.max_up_to(20000)


def test_zygmund_single_and_pair():
    assert abs(zygmund_l4(TorusEigenfunction(25, {(3, 4): 1.0})) - 1) <= 1e-15
    e = TorusEigenfunction(25, {(3, 4): 1.0, (-3, -4): 1.0})
    assert abs(zygmund_l4(e) - 1.5 ** 0.25) <= 1e-14


def test_zygmund_n25_matches_quadrature():
    e = TorusEigenfunction(25, {p: 12 ** -0.5 for p in lattice_circle_points(25)})
    assert abs(zygmund_l4(e) - l4_grid_quadrature(e)) <= 1e-10


@given(st.sampled_from([5, 25, 65, 325, 1105, 5525, 30 ** 2 + 7 ** 2]), st.integers(0, 10 ** 6))
@settings(max_examples=40, deadline=None)
def test_zygmund_bound_and_quadrature(n, seed):
    pts = lattice_circle_points(n)
    rng = np.random.default_rng(seed)
    k = rng.integers(1, len(pts) + 1)
    chosen = rng.choice(len(pts), size=k, replace=False)
    e = TorusEigenfunction(n, {pts[i]: complex(*rng.normal(size=2)) for i in chosen})
    z = zygmund_l4(e)
    assert z <= 3 ** 0.25 + 1e-9
    assert abs(z - l4_grid_quadrature(e)) <= 1e-10


def test_restriction_plane_wave():
    e = TorusEigenfunction(25, {(3, 4): 2.0})
    for line in (TorusLine(1, 0, 0.2), TorusLine(2, -1, 0.4)):
        want = (2.0 / (2 * math.pi)) ** 2 * line.length
        assert abs(torus_restriction(e, line) - want) <= 1e-13


def test_restriction_resonant_pair():
    # (5,0) and (3,4), (4,3)... (3,4) and (3,-4) share the projection 3 onto (1,0)
    e = TorusEigenfunction(25, {(3, 4): 1.0, (3, -4): 0.5 - 1j, (0, 5): 0.3})
    line = TorusLine(1, 0, 0.7)
    a, b = torus_restriction(e, line), torus_restriction_trapezoid(e, line)
    assert abs(a - b) <= 1e-10
    # resonance: value differs from the incoherent sum
    inc = line.length * sum(abs(complex(v)) ** 2 for v in e.coefficients.values()) / (4 * math.pi ** 2)
    assert abs(a - inc) > 1e-3


def test_restriction_constant_along_line():
    e = TorusEigenfunction(49, {(0, 7): 1.0, (0, -7): 2.0})
    line = TorusLine(1, 0, 1.1)
    x = line.sample(64)
    v = np.abs(np.exp(1j * 7 * x[:, 1]) + 2 * np.exp(-1j * 7 * x[:, 1]))
    assert np.ptp(v) <= 1e-13
    assert abs(torus_restriction(e, line) - torus_restriction_trapezoid(e, line)) <= 1e-12
