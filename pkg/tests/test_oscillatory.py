import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eigentube.models import DomainError
from eigentube.oscillatory import (CutoffProfile, MemoryGuardError, ModelPhase, ResolutionError,
                                   assemble, kernel_envelope_check, kernel_values, loglog_slope,
                                   op_norm, phase_derivatives, scaling_fit,
                                   support_derivative_bounds, svd_norm)

EUC = ModelPhase()


def test_assemble_margins():
    m = assemble(EUC, CutoffProfile(0.2), 50, 0.2, r=4)
    assert np.all(np.isfinite(m.matrix))
    assert min(m.margins.values()) >= 2


def test_assemble_guards():
    with pytest.raises(DomainError):
        CutoffProfile(0.6)
    with pytest.raises(DomainError):
        assemble(EUC, CutoffProfile(0.2), 50, 0.1)
    with pytest.raises(ResolutionError):
        assemble(EUC, CutoffProfile(0.2), 50, 0.2, r=1.5)
    with pytest.raises(MemoryGuardError):
        assemble(EUC, CutoffProfile(0.5), 5000, 0.5)
    with pytest.raises(DomainError):
        ModelPhase(metric="radial", eta=0.1)


def test_zero_cutoff_zero_matrix():
    m = assemble(EUC, CutoffProfile(0.2, amplitude=0.0), 50, 0.2)
    assert not np.any(m.matrix)
    assert op_norm(m).value == 0.0


def test_op_norm_diagonal_and_rank_one():
    d = np.diag([0.5, 3.0, -2.0, 1.0])
    assert abs(op_norm(d, tol=1e-12).value - 3.0) <= 1e-9
    rng = np.random.default_rng(2)
    u = rng.normal(size=7) + 1j * rng.normal(size=7)
    v = rng.normal(size=5) + 1j * rng.normal(size=5)
    r = op_norm(np.outer(u, v.conj()))
    assert r.converged
    assert abs(r.value - np.linalg.norm(u) * np.linalg.norm(v)) <= 1e-12 * r.value


def test_op_norm_matches_svd_small():
    m = assemble(EUC, CutoffProfile(0.3), 40, 0.3, n_min=12)
    assert m.shape[0] <= 500 and m.shape[1] <= 500
    assert abs(op_norm(m, tol=1e-14, max_iter=20000).value - svd_norm(m)) <= 1e-8 * svd_norm(m)


def test_control_phase_halves():
    ctl = ModelPhase(metric="control")
    cut = CutoffProfile(0.5, t_gap=0.0, x2_range=(-0.5, 0.5))
    a, b = (op_norm(assemble(ctl, cut, lam, 0.5)).value for lam in (70, 140))
    assert abs(b / a - 0.5) <= 0.05


@given(st.floats(0.1, 10.0))
@settings(max_examples=10, deadline=None)
def test_norm_linear_in_amplitude(c):
    base = op_norm(assemble(EUC, CutoffProfile(0.3), 40, 0.3, n_min=12), tol=1e-12).value
    scaled = op_norm(assemble(EUC, CutoffProfile(0.3, amplitude=c), 40, 0.3, n_min=12),
                     tol=1e-12).value
    assert abs(scaled - c * base) <= 1e-8 * c * base


def test_loglog_exact_power():
    lam = np.array([50.0, 100, 200, 400])
    s, _, res = loglog_slope(lam, 3.7 / lam)
    assert abs(s + 1) <= 1e-12
    assert np.max(np.abs(res)) <= 1e-12


def test_scaling_fit_needs_four_points():
    with pytest.raises(DomainError):
        scaling_fit(EUC, [50, 100, 200], [0.4, 0.2, 0.1, 0.05])


@pytest.mark.xfail(strict=True, reason="pre-asymptotic: lam theta^2 stays below ~32 on desk sizes")
def test_lambda_and_theta_slopes_euclidean():
    fl, ft = scaling_fit(EUC, [50, 100, 200, 400], [0.4, 0.2, 0.1, 0.05])
    assert abs(fl.slope + 1.0) <= 0.1
    assert abs(ft.slope + 0.5) <= 0.15


def test_phase_degenerate_directions():
    d = phase_derivatives(EUC, 0.1)
    assert abs(d["d_x2_d_s"]) <= 1e-8
    assert abs(d["d_x2_d_t"]) <= 1e-8
    assert abs(d["d_x1"]) <= 1e-8
    assert abs(d["d_x1_d_s"]) >= 0.1


@pytest.mark.parametrize("phase", [EUC, ModelPhase(metric="radial", eta=0.05)])
def test_support_derivative_proxies(phase):
    b = support_derivative_bounds(phase, CutoffProfile(0.2), n=5)
    assert b["c"] > 0
    assert math.isfinite(b["C"])


def test_kernel_coincident_trivial_bound():
    cut = CutoffProfile(0.2)
    st_ = np.array([[0.01, 0.1], [-0.05, 0.12]])
    other = st_ + np.array([[0.02, 0.01], [0.0, -0.03]])
    span = 0.05
    K = np.abs(kernel_values(EUC, cut, 100, st_, other, span=span))
    diag = np.abs(kernel_values(EUC, cut, 100, st_, st_, span=span))
    # Cauchy-Schwarz on the shared quadrature rule
    bb = np.sqrt(diag * np.abs(kernel_values(EUC, cut, 100, other, other, span=span)))
    assert np.all(K <= bb * (1 + 1e-12))
    rep = kernel_envelope_check(EUC, cut, 100, n_samples=16)
    assert rep.coincident_ok


def test_kernel_envelope_regime_guard():
    with pytest.raises(DomainError):
        kernel_envelope_check(EUC, CutoffProfile(0.05), 100)


def _envelope_spread(lam, seed):
    cut = CutoffProfile(0.2)
    a = kernel_envelope_check(EUC, cut, lam, n_samples=16, seed=seed).constants[3]
    b = kernel_envelope_check(EUC, cut, 2 * lam, n_samples=16, seed=seed).constants[3]
    return max(a, b) / min(a, b)


def test_envelope_constant_stable():
    assert _envelope_spread(100, 0) <= 3


@pytest.mark.xfail(strict=True, reason="degenerate-direction decay rate c theta lam d is still "
                                       "below 1 for the closest sampled pairs")
def test_envelope_constant_stable_next_doubling():
    assert _envelope_spread(200, 0) <= 3
