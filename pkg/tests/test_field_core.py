import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerforge.errors import EmptyLevel, GridError, IntegrityError, NearCriticalLevel
from eulerforge.field_core import (BOUNDARY, EXTERIOR, INTERIOR, Grid2D, ScalarField2D, bracket,
                                   divergence, dump_field, export_csv, extract_level_components,
                                   gradient, interpolant, laplacian, load_values, perp_gradient,
                                   points_in_polygon)
from eulerforge.neumann_oval import oval_grid


def test_grid_kinds_and_sizes():
    with pytest.raises(GridError):
        Grid2D.torus(8)
    with pytest.raises(GridError):
        Grid2D("disk-polar", np.zeros(32), np.zeros(32), np.zeros((32, 32)))
    g = Grid2D.disk(64)
    assert g.kind == "cartesian-masked"
    assert {INTERIOR, BOUNDARY, EXTERIOR} <= set(np.unique(g.mask))
    t = Grid2D.torus(32)
    assert t.periodic and t.interior.all()
    assert np.isclose(t.x[0], -np.pi) and np.isclose(t.hx, 2 * np.pi / 32)


def test_disk_arms_are_fractions():
    g = Grid2D.disk(64)
    for arm in g.arms.values():
        a = arm[g.interior]
        assert np.all((a > 0) & (a <= 1))
    # a node with an exterior neighbour has at least one short arm
    ext = ~g.interior
    near = g.interior & (np.roll(ext, 1, 0) | np.roll(ext, -1, 0) | np.roll(ext, 1, 1) | np.roll(ext, -1, 1))
    short = np.minimum.reduce([g.arms[k] for k in "EWNS"])
    assert np.all(short[near] < 1)


def test_boundary_value_fills_outside():
    g = Grid2D.disk(32)
    f = ScalarField2D(g, np.ones(g.shape), 0.0)
    assert np.all(f.values[~g.interior] == 0)
    assert np.all(f.values[g.interior] == 1)


def test_field_is_immutable():
    g = Grid2D.torus(16)
    f = ScalarField2D(g, np.zeros(g.shape))
    with pytest.raises((ValueError, TypeError)):
        f.values[0, 0] = 1.0


def test_torus_operators_are_spectral():
    g = Grid2D.torus(32)
    f = ScalarField2D.from_function(g, lambda x, y: np.sin(x) * np.cos(2 * y))
    X, Y = g.mesh()
    gr = gradient(f)
    assert np.allclose(gr.u, np.cos(X) * np.cos(2 * Y), atol=1e-12)
    assert np.allclose(gr.v, -2 * np.sin(X) * np.sin(2 * Y), atol=1e-12)
    assert np.allclose(laplacian(f).values, -5 * f.values, atol=1e-11)
    pg = perp_gradient(f)
    assert np.allclose(divergence(pg).values, 0, atol=1e-11)


def test_laplacian_exact_on_quadratics_in_box():
    g = Grid2D.box(33)
    f = ScalarField2D.from_function(g, lambda x, y: x * x + 3 * y * y)
    L = laplacian(f)
    assert np.allclose(L.values[g.interior], 8.0)


def test_laplacian_of_oval_closed_form_is_one():
    from eulerforge.neumann_oval import psi_q_closed_form
    errs = []
    for n in (64, 128):
        g = oval_grid(0.5, n)
        L = laplacian(psi_q_closed_form(0.5, g))
        keep = g.interior & (g.boundary_distance() > 3 * g.hx)
        errs.append(np.max(np.abs(L.values[keep] - 1)))
    assert errs[1] < errs[0] and errs[1] < 5e-3


def test_bracket_radial_vanishes():
    # {1-r^2, (1-r^2)^2} = 0; central differences leave an O(h^2) defect
    errs = []
    for n in (64, 128):
        g = Grid2D.disk(n)
        a = ScalarField2D.from_function(g, lambda x, y: 1 - x * x - y * y, 0.0)
        b = ScalarField2D.from_function(g, lambda x, y: (1 - x * x - y * y) ** 2, 0.0)
        errs.append(np.max(np.abs(bracket(a, b).values)))
    assert errs[1] < 2e-3 and errs[0] / errs[1] > 3.5


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(1, 3))
def test_bracket_antisymmetric_and_bilinear(c1, c2, k):
    g = Grid2D.torus(32)
    a = ScalarField2D.from_function(g, lambda x, y: np.sin(k * x + y))
    b = ScalarField2D.from_function(g, lambda x, y: np.cos(x - k * y))
    ab, ba = bracket(a, b), bracket(b, a)
    assert np.allclose(ab.values, -ba.values, atol=1e-12)
    lhs = bracket(c1 * a + c2 * b, b)
    assert np.allclose(lhs.values, c1 * ab.values, atol=1e-10)


def test_mixed_grids_rejected():
    a = ScalarField2D(Grid2D.torus(16), np.zeros((16, 16)))
    b = ScalarField2D(Grid2D.torus(32), np.zeros((32, 32)))
    with pytest.raises(GridError):
        bracket(a, b)


def test_level_components_count_on_torus():
    g = Grid2D.torus(64)
    f = ScalarField2D.from_function(g, lambda x, y: np.sin(x) * np.sin(y))
    comps = extract_level_components(f, 0.5)
    assert len(comps) == 2
    for c in comps:
        assert c.closed
        # area of {sin x sin y > 1/2} in one cell
        assert abs(abs(c.enclosed_area) - 3.6437) < 2e-2


def test_level_component_circle_geometry():
    g = Grid2D.box(129)
    f = ScalarField2D.from_function(g, lambda x, y: x * x + y * y)
    (c,) = extract_level_components(f, 0.25)
    assert abs(c.length - np.pi) < 1e-3
    assert abs(abs(c.enclosed_area) - np.pi / 4) < 1e-3
    assert np.allclose(c.centroid(), 0, atol=1e-6)


def test_level_errors():
    g = Grid2D.box(33)
    f = ScalarField2D.from_function(g, lambda x, y: x * x + y * y)
    with pytest.raises(EmptyLevel):
        extract_level_components(f, 10.0)
    t = Grid2D.torus(64)
    s = ScalarField2D.from_function(t, lambda x, y: np.sin(x) * np.sin(y))
    with pytest.raises(NearCriticalLevel):
        extract_level_components(s, 0.0)


def test_dump_round_trip(tmp_path):
    g = oval_grid(0.5, 32)
    f = ScalarField2D.from_function(g, lambda x, y: x + 2 * y, 0.0)
    jp, bp = dump_field(f, tmp_path / "f")
    head, vals = load_values(jp)
    assert head["dtype"] == "<f8" and head["params"]["q"] == 0.5
    assert np.array_equal(vals, f.values)
    bp.write_bytes(bp.read_bytes()[:-8])
    with pytest.raises(IntegrityError):
        load_values(jp)


def test_export_csv(tmp_path):
    g = Grid2D.disk(32)
    f = ScalarField2D.from_function(g, lambda x, y: x, 0.0)
    p = export_csv(f, tmp_path / "f.csv")
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (int(g.interior.sum()), 3)
    assert np.allclose(data[:, 0], data[:, 2])


def test_interpolant_reproduces_smooth_data():
    g = Grid2D.torus(64)
    f = ScalarField2D.from_function(g, lambda x, y: np.sin(x) * np.cos(y))
    ev = interpolant(f)
    px = np.array([0.1, 3.0, -2.5])
    py = np.array([0.7, -1.0, 3.1])
    assert np.allclose(ev(px, py), np.sin(px) * np.cos(py), atol=1e-5)
    assert np.allclose(ev(px, py, dx=1), np.cos(px) * np.cos(py), atol=1e-3)


def test_points_in_polygon_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    inside = points_in_polygon(np.array([0.5, 1.5, 0.2]), np.array([0.5, 0.5, 0.9]), sq)
    assert inside.tolist() == [True, False, True]


def test_header_is_json():
    g = oval_grid(0.5, 32)
    json.dumps(g.header())
