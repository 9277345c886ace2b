import numpy as np
import pytest

from walllaw import cells
from walllaw import geometry as g

COARSE = cells.CellResolution(segments=32)


def test_fourier_single_mode():
    pts = np.array([[0.3, 0.0], [1.2, 0.7], [4.0, 2.5]])
    v = cells.harmonic_extension_fourier(np.array([0.0, 0.5]), pts)
    assert np.allclose(v, np.cos(pts[:, 0]) * np.exp(-pts[:, 1]))


def test_fourier_constant_mode():
    v = cells.harmonic_extension_fourier(np.array([0.7]), [[1.0, 3.0], [2.0, 0.0]])
    assert np.allclose(v, 0.7)


def test_fourier_coefficients_normalization():
    y = 2 * np.pi * np.arange(64) / 64
    c = cells.fourier_coefficients(0.2 + np.cos(y) + 0.5 * np.sin(3 * y), 8)
    assert c[0] == pytest.approx(0.2)
    assert c[1] == pytest.approx(0.5)
    assert c[3] == pytest.approx(-0.25j)


def test_extension_below_interface_rejected():
    with pytest.raises(ValueError):
        cells.harmonic_extension_fourier(np.array([1.0]), [[0.0, -0.5]])


def test_flat_profile_oracles():
    flat = g.flat_profile(0.05)
    b = cells.solve_cell_first(flat, resolution=COARSE)
    c = cells.solve_cell_second(flat, resolution=COARSE)
    assert b.average == pytest.approx(0.05, abs=1e-12)
    assert c.average == pytest.approx(-0.0025, abs=1e-12)
    assert np.abs(b.field.dofs - 0.05).max() < 1e-12
    assert np.abs(b.fourier_coeffs[1:]).max() < 1e-12


def test_cosine_averages(cell_pair):
    assert cell_pair.beta_bar == pytest.approx(0.43215, rel=0.02)
    assert abs(cell_pair.gamma_bar) == pytest.approx(0.29795, rel=0.02)
    assert cell_pair.gamma_bar < 0


def test_average_is_mean_of_trace(cell_pair):
    b = cell_pair.beta
    assert b.average == pytest.approx(b.trace_on_gamma.mean(), abs=1e-15)
    assert b.fourier_coeffs[0].real == pytest.approx(b.average, abs=1e-14)


def test_trace_peaks_over_deepest_groove(cell_pair):
    b = cell_pair.beta
    # the cosine profile is deepest at y1 = 0
    assert b.trace_points[np.argmax(b.trace_on_gamma)] == pytest.approx(0.0)
    assert b.trace_points[np.argmin(b.trace_on_gamma)] == pytest.approx(np.pi)


def test_maximum_principle(cell_pair, profile):
    d = cell_pair.beta.field.dofs
    assert d.min() >= -1e-3 and d.max() <= 1.05 + 1e-3


def test_linearity(profile):
    one = cells.solve_cell(profile, cells.SECOND, resolution=COARSE)
    two = cells.solve_cell(profile, cells.SECOND, resolution=COARSE, scale=2.0)
    assert np.abs(two.field.dofs - 2 * one.field.dofs).max() < 1e-12


def test_fourier_tail_matches_field(cell_pair):
    b = cell_pair.beta
    y1 = 2 * np.pi * np.arange(256) / 256
    pts = np.column_stack([y1, np.ones(256)])
    d = b.field(pts) - cells.harmonic_extension_fourier(b.fourier_coeffs, pts)
    assert np.sqrt(2 * np.pi * np.mean(d**2)) <= 1e-3


def test_decay_report(cell_pair):
    rep = cells.decay_report(cell_pair.beta)
    assert rep.monotone
    assert rep.fitted_rate == pytest.approx(1.0, rel=0.05)
    d1 = rep.deviation[list(rep.heights).index(1.0)]
    d5 = rep.deviation[list(rep.heights).index(5.0)]
    assert d5 / d1 <= np.exp(-3.5)


def test_decay_report_flat():
    rep = cells.decay_report(cells.solve_cell_first(g.flat_profile(), resolution=COARSE))
    assert rep.deviation.max() <= 1e-12


def test_truncation_sensitivity(profile):
    table = dict(cells.truncation_sensitivity(profile, [4, 6, 8, 10]))
    assert abs(table[10] - table[8]) <= 1e-6
    assert abs(table[10] - table[4]) >= abs(table[10] - table[8])


def test_low_height_rejected(profile):
    with pytest.raises(g.MeshError):
        cells.solve_cell_first(profile, H=3.0)


def test_steklov_poincare_agrees(cell_pair, profile):
    sp = cells.steklov_poincare_solve(profile)
    assert abs(sp.average - cell_pair.beta_bar) <= 5e-3
    d = sp.trace_on_gamma - cell_pair.beta.trace_on_gamma
    assert np.sqrt(2 * np.pi * np.mean(d**2)) <= 1e-3
    assert all(b <= a for a, b in zip(sp.residuals[1:], sp.residuals[2:])) or sp.residuals[-1] < 1e-10


def test_steklov_poincare_flat_converges_immediately():
    sp = cells.steklov_poincare_solve(g.flat_profile(0.05), resolution=COARSE)
    assert sp.iterations <= 2
    assert sp.average == pytest.approx(0.05, abs=1e-12)


def test_cell_roundtrip(tmp_path, cell_pair):
    b = cell_pair.beta
    cells.export_cell(b, tmp_path / "beta.field")
    back = cells.import_cell(tmp_path / "beta.field", b.mesh)
    assert back.average == b.average
    assert np.array_equal(back.fourier_coeffs, b.fourier_coeffs)
    assert np.array_equal(back.trace_on_gamma, b.trace_on_gamma)
    assert back.order_tag == cells.FIRST
