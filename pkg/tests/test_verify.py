import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerforge.errors import ArnoldViolation, AsymmetricGrid, CFLViolation, CollinearityViolation, SymmetryViolation
from eulerforge.field_core import Grid2D, ScalarField2D
from eulerforge.neumann_oval import solve_semilinear_lambda
from eulerforge.transport import trace_orbit
from eulerforge.verify import (_Poisson, arnold_ratio, casimir_bounds, casimir_form, cell_period_table,
                               cfl_limit, collinearity_check, evolve_linearized, fill_ratio, hardy_check,
                               log_fit, reflect, semilinear_violation, symmetry_defects, symmetry_split)


@functools.lru_cache(maxsize=None)
def torus(n=128):
    g = Grid2D.torus(n)
    X, Y = g.mesh()
    return g, X, Y, np.sin(X) * np.sin(Y)


@functools.lru_cache(maxsize=None)
def lam_base(n=48):
    return solve_semilinear_lambda(0.5, 0.1, n=n).psi


def _smooth_vorticity(g):
    X, Y = g.mesh()
    w = np.exp(-((X - 0.3) ** 2 + (Y + 0.1) ** 2) / 0.05)
    return ScalarField2D(g, np.where(g.interior, w, 0.0), 0.0)


def test_cellular_flow_is_semilinear():
    g, X, Y, s = torus()
    rep = semilinear_violation(ScalarField2D(g, s), [0.3, 0.5, 0.7])
    assert rep.verdict == "semilinear"
    assert all(p.n_components == 2 for p in rep.probes)
    assert rep.scatter.shape[1] == 2
    assert rep.as_dict()["verdict"] == "semilinear"


def test_lopsided_flow_is_multivalued():
    # a bump on one lobe separates the vorticity on the two lobes of each level
    g, X, Y, s = torus()
    b = 0.15 * np.exp(-((X - np.pi / 2) ** 2 + (Y - np.pi / 2) ** 2) / 0.3)
    rep = semilinear_violation(ScalarField2D(g, s + b), [0.3, 0.5, 0.7])
    assert rep.verdict == "multivalued"
    assert rep.max_gap > rep.threshold


def test_oval_base_is_semilinear():
    assert semilinear_violation(lam_base(64), [-0.05]).verdict == "semilinear"


def test_arnold_ratio_of_eigenfunction():
    g, _, _, s = torus()
    rep = arnold_ratio(ScalarField2D(g, s))
    assert rep.min == pytest.approx(-2, abs=1e-8) and rep.max == pytest.approx(-2, abs=1e-8)
    assert not rep.verdict
    assert collinearity_check(ScalarField2D(g, s)).max < 1e-8


def test_arnold_ratio_of_oval_base():
    rep = arnold_ratio(lam_base(64))
    assert rep.verdict
    assert rep.min == pytest.approx(0.1, abs=1e-6) and rep.max == pytest.approx(0.1, abs=1e-6)
    filled = fill_ratio(rep)
    assert np.allclose(filled, 0.1, atol=1e-6)


def test_arnold_ratio_needs_collinear_gradients():
    g, X, _, s = torus()
    with pytest.raises(CollinearityViolation):
        arnold_ratio(ScalarField2D(g, s + 0.5 * np.sin(2 * X)))
    rep = arnold_ratio(ScalarField2D(g, s + 0.5 * np.sin(2 * X)), collinearity_tol=None)
    assert rep.collinearity > 0.25


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 3.0))
def test_casimir_form_is_coercive(seed, scale):
    psi0 = lam_base()
    g = psi0.grid
    w = ScalarField2D(g, np.where(g.interior, np.random.default_rng(seed).standard_normal(g.shape), 0), 0.0)
    P = _Poisson(g)
    c, C = casimir_bounds(psi0, 0.1, poisson=P)
    J = casimir_form(psi0, w, 0.1, poisson=P)
    n2 = float(np.sum(g.cell_weights() * w.values ** 2))
    assert c * n2 <= J * (1 + 1e-12) and J <= C * n2 * (1 + 1e-12)
    assert casimir_form(psi0, scale * w, 0.1, poisson=P) == pytest.approx(scale**2 * J, rel=1e-10)


def test_casimir_form_needs_positive_ratio():
    psi0 = lam_base()
    w = _smooth_vorticity(psi0.grid)
    with pytest.raises(ArnoldViolation):
        casimir_form(psi0, w, -1.0)
    assert casimir_form(psi0, 0 * w, -1.0) == 0.0


def test_linearised_evolution_conserves_casimir():
    psi0 = lam_base()
    w0 = _smooth_vorticity(psi0.grid)
    dt = 0.5 * cfl_limit(psi0)
    tr = evolve_linearized(psi0, w0, 50 * dt, dt, ratio=0.1, sample_every=10)
    assert tr.drift < 1e-9
    assert len(tr.to_rows()) == 6
    assert np.all(tr.norms > 0)
    with pytest.raises(CFLViolation):
        evolve_linearized(psi0, w0, 1.0, 2 * cfl_limit(psi0), ratio=0.1)
    with pytest.raises(NotImplementedError):
        g, _, _, s = torus(32)
        evolve_linearized(ScalarField2D(g, s), ScalarField2D(g, s), 0.1, 1e-3, ratio=1.0)


@pytest.mark.parametrize("kind", ["diag", "anti", "x", "y", "point"])
def test_reflections_are_involutions(kind, rng):
    g = Grid2D.torus(32)
    v = rng.standard_normal(g.shape)
    assert np.array_equal(reflect(reflect(v, g, kind), g, kind), v)


def test_reflections_match_formulas():
    g, X, Y, _ = torus(32)
    f = np.sin(X) + 2 * np.cos(Y) + np.sin(X - 2 * Y)
    ref = {"diag": (Y, X), "anti": (-Y, -X), "x": (-X, Y), "y": (X, -Y), "point": (-X, -Y)}
    for kind, (a, b) in ref.items():
        assert np.allclose(reflect(f, g, kind), np.sin(a) + 2 * np.cos(b) + np.sin(a - 2 * b), atol=1e-12)


def test_reflection_needs_square_torus():
    with pytest.raises(AsymmetricGrid):
        reflect(np.zeros((33, 33)), Grid2D.box(33), "x")


def test_symmetry_split(rng):
    g = Grid2D.torus(32)
    v = ScalarField2D(g, rng.standard_normal(g.shape))
    sp = symmetry_split(v)
    assert sp.norms["reconstruction"] < 1e-14
    for kind in ("diag", "anti", "point"):
        assert np.allclose(reflect(sp.ee.values, g, kind), sp.ee.values)
    _, _, _, s = torus(32)
    cell = symmetry_split(ScalarField2D(g, s))
    assert cell.norms["oo"] < 1e-14
    d = symmetry_defects(ScalarField2D(g, s))
    assert max(d.values()) < 1e-14


def test_period_table_matches_trace():
    g, _, _, s = torus(64)
    H = ScalarField2D(g, s)
    tab = cell_period_table(H, n_levels=32, n_angle=2048)
    o = trace_orbit(H, (np.pi / 2 + 1.0, np.pi / 2))
    assert tab(o.level) == pytest.approx(o.period, rel=1e-3)
    # the table is reused on the negative cells through |H|
    assert tab(-o.level) == tab(o.level)


def test_hardy_check_parity_and_vacuous_case():
    g, X, Y, s = torus(64)
    H = ScalarField2D(g, s)
    table = lambda h: np.ones_like(h)
    with pytest.raises(SymmetryViolation):
        hardy_check(H, ScalarField2D(g, np.sin(X)), table)
    rep = hardy_check(H, ScalarField2D(g, np.zeros(g.shape)), table)
    assert rep.vacuous and rep.excluded_measure > 0
    f = np.sin(X) * np.sin(Y) * np.sin(X - Y)
    assert hardy_check(H, ScalarField2D(g, f), table).ratio > 0


def test_log_fit_recovers_coefficients():
    h = np.geomspace(1e-3, 0.5, 20)
    a, b = log_fit(h, 1.5 + 4.0 * np.abs(np.log(h)))
    assert a == pytest.approx(1.5) and b == pytest.approx(4.0)
