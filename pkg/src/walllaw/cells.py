"""Microscopic cell problems on the truncated periodic strip.

Both correctors are harmonic in the strip ``f(y1) < y2 < H``, periodic in ``y1``,
have zero normal derivative at the cut ``y2 = H`` and prescribed Dirichlet data
on the rough graph: ``beta = -y2`` for the first-order problem and
``gamma = -y2**2`` for the second-order one. Their traces on ``y2 = 0`` are
summarized by averages and Fourier coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import fem
from .geometry import (
    INTERFACE,
    NEUMANN_TOP,
    ROUGH_BOTTOM,
    MeshError,
    RoughnessProfile,
    TriangularMesh,
    _atomic_write,
    build_mesh,
    micro_strip,
    submesh,
)

logger = logging.getLogger(__name__)

FIRST = "First"
SECOND = "Second"
ORDER_TAGS = (FIRST, SECOND)

TRACE_SAMPLES = 256
K_MAX = 32
MIN_HEIGHT = 5.0


class CellFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CellResolution:
    """Strip mesh parameters: boundary segments per period and vertical grading."""

    segments: int = 128
    growth: float = 1.08
    max_aspect: float = 4.0
    element_order: int = 2


def boundary_data(order_tag: str):
    if order_tag == FIRST:
        return lambda p: -p[:, 1]
    if order_tag == SECOND:
        return lambda p: -p[:, 1] ** 2
    raise ValueError(f"order tag must be {FIRST!r} or {SECOND!r}, got {order_tag!r}")


def fourier_coefficients(samples: np.ndarray, k_max: int = K_MAX) -> np.ndarray:
    """Coefficients ``eta_k, k = 0..k_max`` of a real periodic trace on equispaced samples.

    Normalized so that the trace equals ``sum_k eta_k exp(i k y1)`` over
    ``k = -k_max..k_max`` with ``eta_{-k} = conj(eta_k)``; ``eta_0`` is the mean.
    """
    c = np.fft.rfft(np.asarray(samples, dtype=float)) / len(samples)
    out = np.zeros(k_max + 1, dtype=complex)
    m = min(k_max + 1, len(c))
    out[:m] = c[:m]
    if len(samples) % 2 == 0 and k_max >= len(samples) // 2:
        # the Nyquist mode is shared between +k and -k
        out[len(samples) // 2] *= 0.5
    return out


def harmonic_extension_fourier(coeffs: np.ndarray, points) -> np.ndarray:
    """Evaluate ``sum_k eta_k exp(-|k| y2 + i k y1)`` (real part) at points with ``y2 >= 0``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    y1, y2 = points[:, 0], points[:, 1]
    if np.any(y2 < -1e-12):
        raise ValueError("harmonic extension is only defined for y2 >= 0")
    coeffs = np.asarray(coeffs, dtype=complex)
    k = np.arange(1, len(coeffs))
    phase = np.exp(1j * np.outer(y1, k) - np.outer(y2, k))
    return coeffs[0].real + 2.0 * (phase @ coeffs[1:]).real


def _dirichlet_to_neumann(coeffs: np.ndarray, y1: np.ndarray) -> np.ndarray:
    """``d/dy2`` at ``y2 = 0+`` of the decaying harmonic extension."""
    k = np.arange(1, len(coeffs))
    return 2.0 * (np.exp(1j * np.outer(y1, k)) @ (-k * coeffs[1:])).real


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Solved corrector together with its trace on ``y2 = 0``."""

    field: fem.FiniteElementField
    order_tag: str
    trace_points: np.ndarray  # y1 samples
    trace_on_gamma: np.ndarray
    average: float
    fourier_coeffs: np.ndarray
    truncation_height: float
    iterations: int = 0
    residuals: tuple = ()

    @property
    def mesh(self) -> TriangularMesh:
        return self.field.mesh

    @property
    def k_max(self) -> int:
        return len(self.fourier_coeffs) - 1

    def trace_spline(self) -> CubicSpline:
        """Periodic cubic spline of the trace on one period."""
        y = np.append(self.trace_points, 2 * np.pi)
        v = np.append(self.trace_on_gamma, self.trace_on_gamma[0])
        return CubicSpline(y, v, bc_type="periodic")

    def trace(self, y1) -> np.ndarray:
        return self.trace_spline()(np.mod(np.asarray(y1, dtype=float), 2 * np.pi))

    def evaluate(self, points) -> np.ndarray:
        """Corrector at microscopic points: the FEM field below ``H - 1``, the decaying
        Fourier extension of the trace above (where the strip has been cut)."""
        points = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        points[:, 0] = np.mod(points[:, 0], 2 * np.pi)
        out = np.empty(len(points))
        far = points[:, 1] > self.truncation_height - 1.0
        if (~far).any():
            out[~far] = self.field.evaluate(points[~far])
        if far.any():
            out[far] = harmonic_extension_fourier(self.fourier_coeffs, points[far])
        return out

    __call__ = evaluate

    def gradient(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        points[:, 0] = np.mod(points[:, 0], 2 * np.pi)
        out = np.empty((len(points), 2))
        far = points[:, 1] > self.truncation_height - 1.0
        if (~far).any():
            out[~far] = self.field.gradient(points[~far])
        if far.any():
            p = points[far]
            k = np.arange(1, len(self.fourier_coeffs))
            e = np.exp(1j * np.outer(p[:, 0], k) - np.outer(p[:, 1], k)) * self.fourier_coeffs[1:]
            out[far, 0] = 2.0 * (e @ (1j * k)).real
            out[far, 1] = 2.0 * (e @ (-k.astype(complex))).real
        return out


def _sample_trace(field: fem.FiniteElementField, n: int = TRACE_SAMPLES):
    y1 = 2 * np.pi * np.arange(n) / n
    return y1, field.evaluate(np.column_stack([y1, np.zeros(n)]))


def _package(field, order_tag, height, k_max, iterations=0, residuals=()) -> CellSolution:
    y1, tr = _sample_trace(field)
    coeffs = fourier_coefficients(tr, k_max)
    return CellSolution(
        field=field,
        order_tag=order_tag,
        trace_points=y1,
        trace_on_gamma=tr,
        average=float(tr.mean()),  # trapezoid rule on a periodic grid
        fourier_coeffs=coeffs,
        truncation_height=float(height),
        iterations=iterations,
        residuals=tuple(residuals),
    )


def strip_mesh(profile: RoughnessProfile, height: float, resolution: CellResolution) -> TriangularMesh:
    return build_mesh(
        micro_strip(
            profile,
            height=height,
            segments=resolution.segments,
            growth=resolution.growth,
            max_aspect=resolution.max_aspect,
        )
    )


def solve_cell(
    profile: RoughnessProfile,
    order_tag: str = FIRST,
    H: float = 10.0,
    resolution: CellResolution | None = None,
    k_max: int = K_MAX,
    scale: float = 1.0,
) -> CellSolution:
    """Solve one corrector problem by finite elements on the truncated strip.

    ``scale`` multiplies the boundary data (the problem is linear).
    """
    if not H >= MIN_HEIGHT:
        raise MeshError(f"truncation height must be at least {MIN_HEIGHT}, got {H}")
    return _solve_strip(profile, order_tag, H, resolution, k_max, scale)


def _solve_strip(profile, order_tag, H, resolution=None, k_max=K_MAX, scale=1.0) -> CellSolution:
    resolution = resolution or CellResolution()
    mesh = strip_mesh(profile, H, resolution)
    g = boundary_data(order_tag)
    field = fem.solve_poisson(
        mesh,
        resolution.element_order,
        0.0,
        [fem.dirichlet(ROUGH_BOTTOM, lambda p: scale * g(p)), fem.neumann(NEUMANN_TOP, 0.0)],
    )
    sol = _package(field, order_tag, H, k_max)
    logger.info("cell %s: average %.8f (H=%g, %d dofs)", order_tag, sol.average, H, len(field.dofs))
    return sol


def solve_cell_first(profile, H=10.0, resolution=None, k_max=K_MAX) -> CellSolution:
    return solve_cell(profile, FIRST, H, resolution, k_max)


def solve_cell_second(profile, H=10.0, resolution=None, k_max=K_MAX) -> CellSolution:
    return solve_cell(profile, SECOND, H, resolution, k_max)


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class DecayReport:
    heights: np.ndarray
    deviation: np.ndarray
    fitted_rate: float
    monotone: bool


def level_deviation(sol, heights, samples: int = TRACE_SAMPLES) -> np.ndarray:
    """Per level, the L2 norm over one period of ``field - average``."""
    y1 = 2 * np.pi * np.arange(samples) / samples
    out = []
    for h in heights:
        v = sol(np.column_stack([y1, np.full(samples, h)]))
        out.append(math.sqrt(2 * np.pi * np.mean((v - sol.average) ** 2)))
    return np.asarray(out)


def decay_report(sol: CellSolution, heights=None, floor: float = 1e-12) -> DecayReport:
    """Exponential decay of the oscillating part of the corrector above the roughness.

    The rate is the least-squares slope of ``-log(deviation)`` over the levels
    whose deviation is above ``floor``.
    """
    if heights is None:
        top = min(sol.truncation_height - 2.0, 6.0)
        heights = np.arange(0.5, top + 1e-9, 0.5)
    heights = np.asarray(heights, dtype=float)
    dev = level_deviation(sol, heights)
    ok = dev > floor
    rate = float("nan")
    if ok.sum() >= 2:
        rate = float(-np.polyfit(heights[ok], np.log(dev[ok]), 1)[0])
    monotone = bool(np.all(np.diff(dev) < floor))
    return DecayReport(heights, dev, rate, monotone)


def truncation_sensitivity(
    profile: RoughnessProfile,
    heights,
    order_tag: str = FIRST,
    resolution: CellResolution | None = None,
) -> list[tuple[float, float]]:
    """Averages for a sequence of truncation heights (low heights are allowed here)."""
    heights = [float(h) for h in heights]
    if len(heights) < 2 or any(b <= a for a, b in zip(heights, heights[1:])):
        raise ValueError("heights must be increasing with at least two entries")
    if heights[0] <= 1.0:
        raise ValueError("truncation heights must exceed 1")
    return [(h, _solve_strip(profile, order_tag, h, resolution).average) for h in heights]


# ---------------------------------------------------------------- interface solve


def steklov_poincare_solve(
    profile: RoughnessProfile,
    H: float = 10.0,
    resolution: CellResolution | None = None,
    order_tag: str = FIRST,
    theta: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 500,
    k_max: int = K_MAX,
) -> CellSolution:
    """Interface formulation of the corrector problem, solved by Dirichlet-Neumann iteration.

    The strip is split at ``y2 = 0``. Above, the harmonic extension of the
    interface values is known in closed form through its Fourier modes, which
    gives the flux ``-|k| eta_k``. Below, the rough layer is solved by finite
    elements with that flux as Neumann data. The new interface trace is relaxed
    with ``theta`` (halved whenever the update grows).
    """
    resolution = resolution or CellResolution()
    order = resolution.element_order
    mesh = strip_mesh(profile, H, resolution)
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    layer = submesh(mesh, cen[:, 1] < 0.0)
    g = boundary_data(order_tag)
    system = fem.assemble_poisson(layer, order, 0.0, [fem.dirichlet(ROUGH_BOTTOM, g), fem.neumann(INTERFACE, 0.0)])
    factor = fem.SPDFactor(system.matrix)

    coords = fem.dof_coordinates(layer, order)
    iface = np.flatnonzero(np.abs(coords[:, 1]) < 1e-12)
    x_iface = coords[iface, 0]
    keep = x_iface < 2 * np.pi - 1e-9
    iface, x_iface = iface[keep], x_iface[keep]
    perm = np.argsort(x_iface)
    iface, x_iface = iface[perm], x_iface[perm]
    n_if = len(iface)
    if not np.allclose(np.diff(x_iface), 2 * np.pi / n_if):
        raise MeshError("interface dofs are not equispaced")

    def layer_solve(coeffs):
        flux = lambda p: _dirichlet_to_neumann(coeffs, p[:, 0])
        load = fem.boundary_load(layer, order, INTERFACE, flux)
        x = factor.solve(system.rhs + system.reduce(load))
        return system.expand(x)

    u = layer_solve(np.zeros(n_if // 2 + 1, dtype=complex))
    eta = u[iface]
    history: list[float] = []
    previous = np.inf
    for it in range(1, max_iter + 1):
        coeffs = fourier_coefficients(eta, n_if // 2)
        u = layer_solve(coeffs)
        update = u[iface] - eta
        r = float(np.sqrt(np.mean(update**2)))
        history.append(r)
        if r > previous:
            theta *= 0.5
        previous = r
        eta = eta + theta * update
        if r < tol:
            break
    else:
        raise fem.SolverError(f"Dirichlet-Neumann iteration did not converge in {max_iter} iterations", history)

    # assemble a field on the full strip from both sides
    full = fem.dof_coordinates(mesh, order)
    values = np.empty(len(full))
    lower = full[:, 1] <= 1e-12
    layer_field = fem.FiniteElementField(layer, order, u)
    values[lower] = layer_field.evaluate(full[lower])
    coeffs = fourier_coefficients(u[iface], n_if // 2)
    values[~lower] = harmonic_extension_fourier(coeffs, full[~lower])
    field = fem.FiniteElementField(mesh, order, values)
    sol = _package(field, order_tag, H, k_max, iterations=len(history), residuals=history)
    logger.info("interface solve %s: average %.8f after %d iterations", order_tag, sol.average, len(history))
    return sol


# ---------------------------------------------------------------- files


def export_cell(sol: CellSolution, path) -> None:
    """Write the field file ``path`` and the sidecar ``path.cell``."""
    path = Path(path)
    fem.export_field(sol.field, path)
    lines = [
        "walllaw-cell v1",
        f"order_tag {sol.order_tag}",
        f"H {sol.truncation_height:.17g}",
        f"average {sol.average:.17g}",
        f"K_max {sol.k_max}",
    ]
    lines += [f"{k} {c.real:.17g} {c.imag:.17g}" for k, c in enumerate(sol.fourier_coeffs)]
    lines.append(f"trace {len(sol.trace_on_gamma)}")
    lines += [f"{v:.17g}" for v in sol.trace_on_gamma.tolist()]
    _atomic_write(path.with_name(path.name + ".cell"), "\n".join(lines) + "\n")


def import_cell(path, mesh: TriangularMesh) -> CellSolution:
    path = Path(path)
    field = fem.import_field(path, mesh)
    lines = path.with_name(path.name + ".cell").read_text().splitlines()
    if not lines or lines[0].strip() != "walllaw-cell v1":
        raise CellFormatError("line 1: no header")
    try:
        kv = {}
        for ln in lines[1:5]:
            key, val = ln.split()
            kv[key] = val
        order_tag, H, avg, kmax = kv["order_tag"], float(kv["H"]), float(kv["average"]), int(kv["K_max"])
        coeffs = np.zeros(kmax + 1, dtype=complex)
        for ln in lines[5 : 6 + kmax]:
            k, re, im = ln.split()
            coeffs[int(k)] = complex(float(re), float(im))
        n = int(lines[6 + kmax].split()[1])
        trace = np.array([float(v) for v in lines[7 + kmax : 7 + kmax + n]])
    except (KeyError, ValueError, IndexError) as exc:
        raise CellFormatError(f"malformed cell sidecar: {exc}") from None
    if order_tag not in ORDER_TAGS or len(trace) != n:
        raise CellFormatError("malformed cell sidecar")
    return CellSolution(field, order_tag, 2 * np.pi * np.arange(n) / n, trace, avg, coeffs, H)


@dataclass
class CellPair:
    """The two correctors needed by the wall laws."""

    beta: CellSolution
    gamma: CellSolution
    profile: RoughnessProfile = field(repr=False, default=None)

    @property
    def beta_bar(self) -> float:
        return self.beta.average

    @property
    def gamma_bar(self) -> float:
        return self.gamma.average


def solve_cells(profile: RoughnessProfile, H: float = 10.0, resolution: CellResolution | None = None) -> CellPair:
    return CellPair(solve_cell_first(profile, H, resolution), solve_cell_second(profile, H, resolution), profile)
