import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerforge.elliptic import EllipticProblem, kernel_coefficients
from eulerforge.errors import (KernelLeak, NoSaddle, OverlappingWindows, PicardDivergence,
                               ValidationError)
from eulerforge.field_core import ScalarField2D
from eulerforge.forge import (Profile, _mollifier, build_bump_forcing, cellular_base, cellular_forcing,
                              first_order, flatten_profile, forge_cellular, forge_oval, steady_residual)
from eulerforge.neumann_oval import (morse_classify, oval_grid, psi_q_closed_form,
                                     solve_semilinear_lambda)


@functools.lru_cache(maxsize=None)
def lam_base(n=96):
    psi = solve_semilinear_lambda(0.5, 0.1, n=n).psi
    return psi, morse_classify(psi)


def _fd_check(P, t, h=1e-5):
    d1 = (P(t + h) - P(t - h)) / (2 * h)
    d2 = (P(t + h) - 2 * P(t) + P(t - h)) / h**2
    return abs(d1 - P.d1(t)), abs(d2 - P.d2(t))


profiles = [Profile.bump(0.3, 0.2), Profile.tilted_bump(0.5, 0.25, 0.47, 3.0),
            Profile.polynomial([1.0, -2.0, 0.5, 0.25]), Profile.affine(0.2, -2.0)]


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(range(len(profiles))), st.floats(-0.2, 1.0))
def test_profile_derivatives(k, t):
    e1, e2 = _fd_check(profiles[k], t)
    assert e1 < 1e-6 * 40 and e2 < 1e-2


def test_bump_shape():
    b = Profile.bump(0.3, 0.2)
    assert b(0.3) == 1.0
    assert abs(b(0.1)) < 1e-50 and b(0.55) == 0.0
    assert b.support == pytest.approx((0.1, 0.5))


def test_mollifier_has_unit_mass():
    s, w, K, K1, K2 = _mollifier(0.01)
    assert abs(np.sum(w * K) - 1) < 1e-13
    assert abs(np.sum(w * K1)) < 1e-10
    assert abs(np.sum(w * s * K)) < 1e-15


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1))
def test_flatten_keeps_affine(a, b, t):
    F = Profile.affine(a, b)
    Fl = flatten_profile(F, [0.0, 0.5], 0.1)
    assert abs(Fl(t) - F(t)) < 1e-12 * (1 + abs(a) + abs(b))
    assert abs(Fl.d1(t) - b) < 1e-10 * (1 + abs(b))


def test_flatten_kills_curvature_near_critical_values():
    F = Profile.polynomial([0.0, 1.0, 3.0, -2.0])
    d = 0.1
    Fl = flatten_profile(F, [0.0, 0.6], d)
    inner = np.concatenate([np.linspace(-d + d * d, d - d * d, 21),
                            0.6 + np.linspace(-d + d * d, d - d * d, 21)])
    assert np.max(np.abs(Fl.d2(inner))) < 1e-10
    far = np.array([0.3, -0.5, 1.0])
    assert np.max(np.abs(Fl(far) - F(far))) < 5 * d**4
    with pytest.raises(OverlappingWindows):
        flatten_profile(F, [0.0, 0.15], d)
    with pytest.raises(ValidationError):
        flatten_profile(F, [0.0], 0.0)


def test_flatten_continues_linearly_outside_range():
    F = Profile.polynomial([0.0, 0.0, 1.0])
    Fl = flatten_profile(F, [0.0], 0.1, value_range=(-1.0, 1.0))
    t = np.array([2.0, 3.0, 4.0])
    assert np.max(np.abs(np.diff(Fl(t), 2))) < 1e-12


def test_cellular_forcing_is_admissible():
    psi0 = cellular_base(64)
    forc = cellular_forcing(psi0)
    g = psi0.grid
    eta = forc.eta.values
    assert abs(np.sum(eta)) < 1e-10 * np.sum(np.abs(eta))
    assert abs(forc.eta.max_abs() - 1) < 1e-12
    assert np.array_equal(eta, np.roll(eta, g.nx // 2, axis=1))
    assert max(abs(v) for v in kernel_coefficients(forc.eta).values()) < 1e-12
    # support stays in the upper half-plane
    X, Y = g.mesh()
    assert not np.any(eta[Y < 0])


def test_first_order_refuses_kernel_data():
    psi0 = cellular_base(32)
    with pytest.raises(KernelLeak):
        first_order(psi0, -2.0, psi0)


def test_first_order_oval_solves_linearised_problem():
    psi0, morse = lam_base()
    forc = build_bump_forcing(psi0, morse, tube_margin=0.8)
    psi1 = first_order(psi0, -0.1, forc.eta)
    g = psi0.grid
    r = EllipticProblem(g, -0.1).apply(psi1).values - forc.eta.values
    assert np.max(np.abs(r[g.interior])) < 1e-9


def test_bump_forcing_geometry():
    psi0, morse = lam_base()
    forc = build_bump_forcing(psi0, morse, tube_margin=0.8)
    assert forc.saddle_value < forc.level < forc.center_value or \
        forc.center_value < forc.level < forc.saddle_value
    assert forc.eps0 == pytest.approx(abs(forc.saddle_value - forc.center_value) / 4)
    assert np.max(forc.eta.values) <= 1.0 + 1e-12
    mask, _, _ = forc.tube.node_coordinates()
    assert not np.any(forc.eta.values[~mask])
    # x0 sits between the extremum and the saddle
    assert 0 < forc.x0[0] / forc.center[0] < 1
    with pytest.raises(ValidationError):
        build_bump_forcing(psi0, morse, eps0=forc.eps0 * 3)


def test_bump_forcing_needs_saddle():
    g = oval_grid(0.3, 64)
    psi = psi_q_closed_form(0.3, g)
    with pytest.raises(NoSaddle):
        build_bump_forcing(psi, morse_classify(psi))


def test_steady_residual_of_base_is_small():
    psi0, _ = lam_base()
    rep = steady_residual(psi0)
    assert rep.linf < 1e-6
    assert not np.any(rep.field.values[psi0.grid.boundary_distance() < 2 * psi0.grid.hx])


def test_forge_cellular_converges_small_grid():
    res = forge_cellular(1e-2, n=64)
    assert res.eps == 1e-2
    assert res.trace[-1] < 1e-10
    assert res.diagnostics["kernel_leak"] < 1e-6


def test_forge_oval_gives_up_after_halvings():
    with pytest.raises(PicardDivergence):
        forge_oval(eps=2.0, n=64, max_iter=3)
