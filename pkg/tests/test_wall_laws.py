import numpy as np
import pytest

from walllaw import cells, fem
from walllaw import geometry as g
from walllaw import wall_laws as wl

BB, GB = 0.43215, -0.29795


def smooth(eps, n=32):
    return g.build_mesh(g.smooth_cell(eps, segments=n))


def test_poiseuille_values():
    p = wl.poiseuille_profile(1.0)
    assert p([[0.0, 0.5]])[0] == pytest.approx(0.125)
    assert np.allclose(p([[0, 0.0], [0, 1.0]]), 0)
    x = np.linspace(0, 1, 2001)
    assert np.trapezoid(p(np.column_stack([0 * x, x])), x) == pytest.approx(1 / 12, rel=1e-6)


def test_robin_slip_value_and_limit():
    p = wl.robin_profile(1.0, 0.1, BB)
    assert p([[0, 0.0]])[0] == pytest.approx(0.1 * BB / (2 * (1 + 0.1 * BB)))
    # the wall law holds: u(0) = eps*bbar*u'(0)
    assert p.c == pytest.approx(0.1 * BB * p.derivative(0.0))
    q = wl.robin_profile(1.0, 0.0, BB)
    assert (q.a, q.b, q.c) == pytest.approx((-0.5, 0.5, 0.0))


def test_wentzell_condition_holds():
    eps = 0.2
    p = wl.wentzell_profile(1.0, eps, BB, GB)
    assert p.c == pytest.approx(eps * BB * p.derivative(0.0) + 0.5 * eps**2 * GB * p.second_derivative)
    assert p.second_derivative == -1.0
    assert p([[0, 1.0]])[0] == pytest.approx(0.0, abs=1e-15)
    q = wl.wentzell_profile(1.0, eps, BB, 0.0)
    r = wl.robin_profile(1.0, eps, BB)
    assert (q.a, q.b, q.c) == pytest.approx((r.a, r.b, r.c))


@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_fem_matches_closed_forms(eps):
    mesh = smooth(eps)
    x = fem.dof_coordinates(mesh, 2)
    u1 = wl.averaged_first(1.0, eps, BB, mesh, "fem")
    u2 = wl.averaged_second(1.0, eps, BB, GB, mesh, "fem")
    assert np.abs(u1.field.dofs - u1.closed_form(x)).max() <= 1e-9
    assert np.abs(u2.field.dofs - u2.closed_form(x)).max() <= 1e-9


def test_positive_gamma_is_indefinite_at_this_resolution():
    with pytest.raises(fem.IndefiniteFormError, match="epsilon"):
        wl.averaged_second(1.0, 0.1, BB, -GB, smooth(0.1), "fem")


def test_nonpositive_beta_bar_rejected():
    with pytest.raises(fem.CoercivityError):
        wl.averaged_first(1.0, 0.1, 0.0)


def test_u2_minus_u1_is_second_order():
    def dist(eps):
        mesh = smooth(eps, 16)
        d = fem.Difference(wl.wentzell_profile(1, eps, BB, GB), wl.robin_profile(1, eps, BB))
        return fem.norm(d, mesh) / np.sqrt(2 * np.pi * eps)

    assert 3.5 <= dist(0.2) / dist(0.1) <= 4.5


def test_explicit_first_flat_profile():
    eps, delta = 0.2, 0.05
    beta = cells.solve_cell_first(g.flat_profile(delta), resolution=cells.CellResolution(segments=32))
    mesh = smooth(eps, 16)
    sol = wl.explicit_ms_first(1.0, eps, beta, mesh)
    # constant slip s at x2 = 0: u = -x2^2/2 + (1/2 - s) x2 + s
    s = eps * delta * wl.robin_profile(1.0, eps, delta).derivative(0.0)
    x2 = sol.field.coordinates[:, 1]
    assert np.abs(sol.field.dofs - (-0.5 * x2**2 + (0.5 - s) * x2 + s)).max() < 1e-12


def test_explicit_first_mean_slip(cell_pair):
    eps = 0.2
    mesh = smooth(eps)
    sol = wl.explicit_ms_first(1.0, eps, cell_pair.beta, mesh)
    x1 = 2 * np.pi * eps * np.arange(512) / 512
    mean = sol(np.column_stack([x1, 0 * x1])).mean()
    target = eps * cell_pair.beta_bar * wl.robin_profile(1.0, eps, cell_pair.beta_bar).derivative(0.0)
    assert mean == pytest.approx(target, rel=1e-3)


def test_implicit_with_constant_trace_is_robin(cell_pair):
    eps = 0.2
    mesh = smooth(eps)
    b = cell_pair.beta
    const = cells.CellSolution(b.field, b.order_tag, b.trace_points, np.full_like(b.trace_on_gamma, BB), BB, b.fourier_coeffs, 10.0)
    w = wl.implicit_ms_first(1.0, eps, const, mesh)
    u1 = wl.averaged_first(1.0, eps, BB, mesh, "fem")
    assert np.abs(w.field.dofs - u1.field.dofs).max() <= 1e-10


def test_implicit_slip_oscillates(cell_pair):
    eps = 0.2
    w = wl.implicit_ms_first(1.0, eps, cell_pair.beta, smooth(eps))
    x1 = 2 * np.pi * eps * np.arange(256) / 256
    c = cells.fourier_coefficients(w(np.column_stack([x1, 0 * x1])), 4)
    assert abs(c[1]) > 1e-4


def test_implicit_rejects_nonpositive_trace(cell_pair):
    b = cell_pair.beta
    bad = cells.CellSolution(b.field, b.order_tag, b.trace_points, b.trace_on_gamma - 1.0, b.average - 1, b.fourier_coeffs, 10.0)
    with pytest.raises(fem.CoercivityError):
        wl.implicit_ms_first(1.0, 0.2, bad, smooth(0.2, 16))


def test_family_ordering_at_small_eps(experiment):
    e = {f: experiment.error(f, 0.1) for f in ("U0", "U1_fem", "ImplicitMS1", "ExplicitMS1", "ExplicitMS2")}
    assert e["U0"] > e["U1_fem"] > e["ImplicitMS1"] > e["ExplicitMS1"] > e["ExplicitMS2"]


def test_wall_law_roundtrip(tmp_path, cell_pair):
    sol = wl.explicit_ms_second(1.0, 0.2, cell_pair.beta, cell_pair.gamma, smooth(0.2, 16))
    wl.export_wall_law(sol, tmp_path / "ems2.field")
    back = wl.import_wall_law(tmp_path / "ems2.field", sol.field.mesh)
    assert back.family is wl.WallLawFamily.EXPLICIT_MS2
    assert back.inputs_digest["gamma_bar"] == cell_pair.gamma_bar
    assert back.inputs_digest["beta_trace"] == sol.inputs_digest["beta_trace"]
