import numpy as np
import pytest
import scipy.special as ss

from eulerforge.elliptic import (EllipticProblem, invertibility_probe, kernel_coefficients,
                                 kernel_mode_count, kernel_projection, solve_dirichlet,
                                 torus_helmholtz_apply, torus_helmholtz_solve)
from eulerforge.errors import GridError, SolverBreakdown
from eulerforge.field_core import Grid2D, ScalarField2D
from eulerforge.neumann_oval import oval_grid


def _disk_error(n):
    g = Grid2D.disk(n)
    u = solve_dirichlet(EllipticProblem(g), np.full(g.shape, -4.0))
    X, Y = g.mesh()
    return np.max(np.abs(u.values - (1 - X * X - Y * Y))[g.interior])


def test_disk_poisson_is_exact_on_quadratic():
    # linear ghost extrapolation is exact up to the O(h^2) boundary position error
    e1, e2 = _disk_error(32), _disk_error(64)
    assert e2 < 5e-3 and e1 / e2 > 1.8


def test_mapped_solve_converges():
    # Delta psi = 1 on the oval has a closed form
    from eulerforge.neumann_oval import psi_q_closed_form
    errs = []
    for n in (64, 128):
        g = oval_grid(0.5, n)
        u = solve_dirichlet(EllipticProblem(g), np.ones(g.shape))
        errs.append(np.max(np.abs(u.values - psi_q_closed_form(0.5, g).values)))
    assert errs[1] < errs[0] / 2.5


def test_operator_is_symmetric():
    g = oval_grid(0.3, 32)
    K = EllipticProblem(g, potential=-1.5).operator()
    assert abs(K - K.T).max() < 1e-12


def test_apply_inverts_solve(rng):
    g = oval_grid(0.5, 48)
    prob = EllipticProblem(g, potential=0.7)
    rhs = np.where(g.interior, rng.standard_normal(g.shape), 0.0)
    u = solve_dirichlet(prob, rhs)
    assert np.allclose(prob.apply(u).values[g.interior], rhs[g.interior], atol=1e-8)


def test_probe_finds_first_dirichlet_eigenvalue():
    j01 = ss.jn_zeros(0, 1)[0]
    pr = invertibility_probe(EllipticProblem(Grid2D.disk(96)))
    assert pr.invertible
    assert abs(pr.eigenvalue + j01**2) < 2e-2


def test_probe_flags_resonant_shift():
    g = Grid2D.disk(48)
    lam = invertibility_probe(EllipticProblem(g)).eigenvalue
    pr = invertibility_probe(EllipticProblem(g, potential=lam), floor_factor=1e-6)
    assert not pr.invertible


def test_solver_rejects_bad_input():
    g = Grid2D.disk(32)
    bad = np.full(g.shape, np.nan)
    with pytest.raises(SolverBreakdown):
        solve_dirichlet(EllipticProblem(g), bad)
    with pytest.raises(GridError):
        solve_dirichlet(EllipticProblem(Grid2D.torus(32)), np.zeros((32, 32)))
    with pytest.raises(GridError):
        EllipticProblem(g, bc="neumann")


def test_zero_rhs_gives_zero():
    g = Grid2D.disk(32)
    u = solve_dirichlet(EllipticProblem(g), np.zeros(g.shape))
    assert not np.any(u.values)


def test_torus_kernel_has_four_modes():
    g = Grid2D.torus(32)
    assert kernel_mode_count(g) == 4
    X, Y = g.mesh()
    f = ScalarField2D(g, np.sin(X) * np.cos(Y) + 0.3 * np.cos(3 * X))
    P = kernel_projection(f)
    assert np.allclose(P.values, np.sin(X) * np.cos(Y), atol=1e-12)
    assert np.allclose(kernel_projection(P).values, P.values)
    c = kernel_coefficients(f)
    assert abs(c["sin x cos y"] - 1) < 1e-12 and abs(c["cos x cos y"]) < 1e-12


def test_torus_helmholtz_round_trip(rng):
    g = Grid2D.torus(32)
    u = ScalarField2D(g, rng.standard_normal(g.shape))
    u_perp = u - kernel_projection(u)
    back = torus_helmholtz_solve(torus_helmholtz_apply(u))
    assert np.allclose(back.values, u_perp.values, atol=1e-10)
    # the solve annihilates kernel content of the data
    k = kernel_projection(torus_helmholtz_solve(u))
    assert np.max(np.abs(k.values)) < 1e-12


def test_torus_probe_sees_kernel():
    pr = invertibility_probe(EllipticProblem(Grid2D.torus(32), potential=-2.0))
    assert not pr.invertible and pr.near_kernel_dim == 4
