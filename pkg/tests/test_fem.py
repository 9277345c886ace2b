import math

import numpy as np
import pytest

from walllaw import fem
from walllaw import geometry as g


def unit_square(n=16):
    # width 2*pi*eps = 1
    return g.build_mesh(g.smooth_cell(1 / (2 * np.pi), segments=n, max_aspect=1.0))


def all_dirichlet():
    return [fem.dirichlet(t) for t in (g.SMOOTH_BOTTOM, g.TOP, g.PERIODIC_LEFT, g.PERIODIC_RIGHT)]


@pytest.mark.parametrize("degree", range(1, 9))
def test_triangle_quadrature_monomials(degree):
    p, w = fem.triangle_quadrature(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert (w * p[:, 0] ** a * p[:, 1] ** b).sum() == pytest.approx(exact, abs=1e-15)


def square_center_series(terms=200):
    """u(1/2, 1/2) for -lap u = 1 on the unit square, zero on the boundary."""
    s = 0.0
    for m in range(1, terms, 2):
        for n in range(1, terms, 2):
            s += 16 / (np.pi**4 * m * n * (m * m + n * n)) * np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2)
    return s


def test_unit_square_center_value():
    ref = square_center_series()
    assert ref == pytest.approx(0.07367, abs=1e-5)
    u = fem.solve_poisson(g.refine(unit_square(16)), 2, 1.0, all_dirichlet())
    assert u.evaluate([[0.5, 0.5]])[0] == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("order", [1, 2])
def test_patch_test_linear_field(order):
    mesh = g.build_mesh(g.rough_cell(g.cosine_profile(), 0.3, segments=16))
    exact = lambda x: 1 + 2 * x[:, 0] - 3 * x[:, 1]
    bcs = [fem.dirichlet(t, exact) for t in (g.ROUGH_BOTTOM, g.TOP, g.PERIODIC_LEFT, g.PERIODIC_RIGHT)]
    u = fem.solve_poisson(mesh, order, 0.0, bcs)
    assert np.abs(u.dofs - exact(u.coordinates)).max() < 1e-11


def test_p2_reproduces_quadratic_with_periodic_sides():
    mesh = g.build_mesh(g.smooth_cell(0.3, segments=16))
    u = fem.solve_poisson(mesh, 2, 2.0, [fem.dirichlet(g.SMOOTH_BOTTOM), fem.dirichlet(g.TOP)])
    x2 = u.coordinates[:, 1]
    assert np.abs(u.dofs - x2 * (1 - x2)).max() < 1e-12


def test_norm_of_closed_form():
    mesh = unit_square(8)
    f = lambda x: 0.5 * x[:, 1] * (1 - x[:, 1])
    assert fem.norm(f, mesh) == pytest.approx(1 / (2 * math.sqrt(30)), rel=1e-12)


def test_h1_seminorm_of_interpolant():
    mesh = unit_square(8)
    u = fem.interpolate(mesh, 2, lambda x: x[:, 0] * x[:, 1])
    # int (y^2 + x^2) over the unit square = 2/3
    assert fem.norm(u, mesh, "H1semi") == pytest.approx(math.sqrt(2 / 3), rel=1e-12)


def test_uncovered_tag_rejected():
    mesh = unit_square(8)
    with pytest.raises(fem.ConfigurationError, match="not covered"):
        fem.assemble_poisson(mesh, 2, 1.0, [fem.dirichlet(g.TOP)])


def test_negative_robin_rejected():
    mesh = unit_square(8)
    with pytest.raises(fem.CoercivityError):
        fem.assemble_poisson(mesh, 2, 1.0, [fem.robin(g.SMOOTH_BOTTOM, -0.1), fem.dirichlet(g.TOP)])


def test_indefinite_wentzell_detected():
    mesh = g.build_mesh(g.smooth_cell(0.3, segments=32))
    with pytest.raises(fem.IndefiniteFormError):
        fem.solve(fem.assemble_wentzell(mesh, 2, 1.0, 0.3, 0.43, 5.0))


def test_cg_matches_direct():
    mesh = g.build_mesh(g.rough_cell(g.cosine_profile(), 0.3, segments=16))
    bcs = [fem.dirichlet(g.ROUGH_BOTTOM), fem.dirichlet(g.TOP)]
    system = fem.assemble_poisson(mesh, 2, 1.0, bcs)
    a = fem.solve(system, method="direct")
    b = fem.solve(system, method="cg", tol=1e-13)
    assert np.abs(a.dofs - b.dofs).max() < 1e-10


def test_evaluate_outside_mesh_raises():
    u = fem.interpolate(unit_square(8), 1, 1.0)
    with pytest.raises(fem.EvaluationError):
        u.evaluate([[0.5, 1.5]])


def test_gradient_of_interpolated_quadratic():
    mesh = unit_square(8)
    u = fem.interpolate(mesh, 2, lambda x: x[:, 0] ** 2 + x[:, 0] * x[:, 1])
    pts = np.array([[0.3, 0.7], [0.11, 0.42]])
    exact = np.column_stack([2 * pts[:, 0] + pts[:, 1], pts[:, 0]])
    assert np.allclose(u.gradient(pts), exact, atol=1e-12)


def test_field_roundtrip_and_checksum(tmp_path):
    mesh = unit_square(8)
    u = fem.interpolate(mesh, 2, lambda x: np.sin(x[:, 0]))
    path = tmp_path / "u.field"
    fem.export_field(u, path)
    back = fem.import_field(path, mesh)
    assert np.array_equal(back.dofs, u.dofs)
    with pytest.raises(fem.FieldFormatError, match="checksum"):
        fem.import_field(path, unit_square(10))


@pytest.mark.parametrize("order,target", [(1, 2.0), (2, 3.0)])
def test_manufactured_order(order, target):
    exact = lambda x: np.sin(x[:, 0]) * np.sin(np.pi * x[:, 1])
    src = lambda x: (1 + np.pi**2) * exact(x)
    mesh = g.build_mesh(g.smooth_cell(1.0, segments=16, max_aspect=1.0))
    errs = []
    for _ in range(3):
        u = fem.solve_poisson(mesh, order, src, [fem.dirichlet(g.SMOOTH_BOTTOM), fem.dirichlet(g.TOP)])
        errs.append(fem.norm(fem.Difference(u, exact), mesh))
        mesh = g.refine(mesh)
    rate = math.log2(errs[-2] / errs[-1])
    assert rate == pytest.approx(target, abs=0.1)
