"""Macroscopic approximations on the smooth cell ``0 < x2 < 1``.

Every family solves (or evaluates in closed form) ``-lap u = C`` with ``u = 0``
on the top wall and a wall law on the fictitious wall ``x2 = 0``:

========== ===================================================================
U0         no slip, the Poiseuille profile
U1         averaged Robin law ``u = eps*bbar*du/dx2``
U2         averaged Wentzell law ``u = eps*bbar*du/dx2 + eps^2/2*gbar*d2u/dx2^2``
ExplicitMS1 Dirichlet data ``eps * u1'(0) * beta(x1/eps, 0)``
ExplicitMS2 Dirichlet data ``eps * u2'(0) * beta(x1/eps, 0) - C*eps^2/2 * gamma(x1/eps, 0)``
ImplicitMS1 oscillating Robin law ``w = eps*beta(x1/eps, 0)*dw/dx2``
========== ===================================================================
"""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import fem
from .cells import CellSolution
from .geometry import SMOOTH_BOTTOM, TOP, TriangularMesh, _atomic_write

logger = logging.getLogger(__name__)


class WallLawFamily(str, enum.Enum):
    U0 = "U0"
    U1_ANALYTIC = "U1_analytic"
    U1_FEM = "U1_fem"
    U2_ANALYTIC = "U2_analytic"
    U2_FEM = "U2_fem"
    EXPLICIT_MS1 = "ExplicitMS1"
    EXPLICIT_MS2 = "ExplicitMS2"
    IMPLICIT_MS1 = "ImplicitMS1"


class WallLawFormatError(ValueError):
    pass


# ---------------------------------------------------------------- closed forms


@dataclass(frozen=True)
class QuadraticProfile:
    """``u(x2) = a*x2**2 + b*x2 + c``, independent of ``x1``."""

    a: float
    b: float
    c: float

    def __call__(self, points) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(points, dtype=float))[:, 1]
        return (self.a * x2 + self.b) * x2 + self.c

    def gradient(self, points) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(points, dtype=float))[:, 1]
        return np.column_stack([np.zeros_like(x2), 2 * self.a * x2 + self.b])

    def derivative(self, x2: float = 0.0) -> float:
        return 2 * self.a * x2 + self.b

    @property
    def second_derivative(self) -> float:
        return 2 * self.a


def poiseuille_profile(C: float) -> QuadraticProfile:
    return QuadraticProfile(-C / 2, C / 2, 0.0)


def robin_profile(C: float, epsilon: float, beta_bar: float) -> QuadraticProfile:
    s = 1.0 + epsilon * beta_bar
    return QuadraticProfile(-C / 2, C / (2 * s), C * epsilon * beta_bar / (2 * s))


def wentzell_profile(C: float, epsilon: float, beta_bar: float, gamma_bar: float) -> QuadraticProfile:
    s = 1.0 + epsilon * beta_bar
    return QuadraticProfile(
        -C / 2,
        C * (1 + epsilon**2 * gamma_bar) / (2 * s),
        C * epsilon * (beta_bar - epsilon * gamma_bar) / (2 * s),
    )


# ---------------------------------------------------------------- solutions


@dataclass(frozen=True, eq=False)
class WallLawSolution:
    family: WallLawFamily
    epsilon: float
    C: float
    field: fem.FiniteElementField | None
    closed_form: QuadraticProfile | None = None
    inputs_digest: dict = field(default_factory=dict)

    def __call__(self, points) -> np.ndarray:
        if self.field is not None:
            return self.field.evaluate(points)
        return self.closed_form(points)

    def gradient(self, points) -> np.ndarray:
        if self.field is not None:
            return self.field.gradient(points)
        return self.closed_form.gradient(points)

    @property
    def approximation(self):
        """The object used in error norms: the FEM field if there is one."""
        return self.field if self.field is not None else self.closed_form


def _digest(values) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def _walls(bottom_bc):
    return [bottom_bc, fem.dirichlet(TOP, 0.0)]


def poiseuille(C: float, mesh: TriangularMesh | None = None, order: int = 2) -> WallLawSolution:
    prof = poiseuille_profile(C)
    f = fem.interpolate(mesh, order, prof) if mesh is not None else None
    return WallLawSolution(WallLawFamily.U0, 0.0, C, f, prof)


def averaged_first(
    C: float, epsilon: float, beta_bar: float, mesh: TriangularMesh | None = None, mode: str = "analytic", order: int = 2
) -> WallLawSolution:
    """Averaged Robin wall law; ``analytic`` interpolates the closed form, ``fem`` solves."""
    if not beta_bar > 0:
        raise fem.CoercivityError(f"beta_bar must be positive, got {beta_bar}")
    prof = robin_profile(C, epsilon, beta_bar)
    digest = dict(beta_bar=beta_bar)
    if mode == "analytic":
        f = fem.interpolate(mesh, order, prof) if mesh is not None else None
        return WallLawSolution(WallLawFamily.U1_ANALYTIC, epsilon, C, f, prof, digest)
    if mode != "fem":
        raise fem.ConfigurationError(f"mode must be 'analytic' or 'fem', got {mode!r}")
    if epsilon == 0:
        f = fem.solve_poisson(mesh, order, C, _walls(fem.dirichlet(SMOOTH_BOTTOM, 0.0)))
    else:
        f = fem.solve_poisson(mesh, order, C, _walls(fem.robin(SMOOTH_BOTTOM, epsilon * beta_bar)))
    return WallLawSolution(WallLawFamily.U1_FEM, epsilon, C, f, prof, digest)


def averaged_second(
    C: float,
    epsilon: float,
    beta_bar: float,
    gamma_bar: float,
    mesh: TriangularMesh | None = None,
    mode: str = "analytic",
    order: int = 2,
) -> WallLawSolution:
    """Averaged Wentzell wall law.

    The FEM form is positive definite for ``gamma_bar <= 0``; for positive values
    the assembled matrix is checked and an :class:`~walllaw.fem.IndefiniteFormError`
    is raised when it is not definite.
    """
    if not beta_bar > 0:
        raise fem.CoercivityError(f"beta_bar must be positive, got {beta_bar}")
    prof = wentzell_profile(C, epsilon, beta_bar, gamma_bar)
    digest = dict(beta_bar=beta_bar, gamma_bar=gamma_bar)
    if mode == "analytic":
        f = fem.interpolate(mesh, order, prof) if mesh is not None else None
        return WallLawSolution(WallLawFamily.U2_ANALYTIC, epsilon, C, f, prof, digest)
    if mode != "fem":
        raise fem.ConfigurationError(f"mode must be 'analytic' or 'fem', got {mode!r}")
    try:
        f = fem.solve(fem.assemble_wentzell(mesh, order, C, epsilon, beta_bar, gamma_bar))
    except fem.IndefiniteFormError as exc:
        raise fem.IndefiniteFormError(f"{exc}; epsilon={epsilon:g}") from None
    return WallLawSolution(WallLawFamily.U2_FEM, epsilon, C, f, prof, digest)


def _scaled_trace(cell: CellSolution, epsilon: float) -> Callable[[np.ndarray], np.ndarray]:
    spline = cell.trace_spline()
    period = 2 * np.pi
    return lambda x1: spline(np.mod(np.asarray(x1) / epsilon, period))


def explicit_ms_first(
    C: float, epsilon: float, beta: CellSolution, mesh: TriangularMesh, order: int = 2
) -> WallLawSolution:
    """Dirichlet data ``eps * u1'(0) * beta(x1/eps, 0)`` on the fictitious wall."""
    slope = robin_profile(C, epsilon, beta.average).derivative(0.0)
    tr = _scaled_trace(beta, epsilon)
    data = lambda p: epsilon * slope * tr(p[:, 0])
    f = fem.solve_poisson(mesh, order, C, _walls(fem.dirichlet(SMOOTH_BOTTOM, data)))
    digest = dict(beta_bar=beta.average, beta_trace=_digest(beta.trace_on_gamma))
    return WallLawSolution(WallLawFamily.EXPLICIT_MS1, epsilon, C, f, None, digest)


def explicit_ms_second(
    C: float, epsilon: float, beta: CellSolution, gamma: CellSolution, mesh: TriangularMesh, order: int = 2
) -> WallLawSolution:
    """Dirichlet data ``eps*u2'(0)*beta(x1/eps,0) + eps^2/2*u2''*gamma(x1/eps,0)``."""
    prof = wentzell_profile(C, epsilon, beta.average, gamma.average)
    slope, curv = prof.derivative(0.0), prof.second_derivative
    tb, tg = _scaled_trace(beta, epsilon), _scaled_trace(gamma, epsilon)
    data = lambda p: epsilon * slope * tb(p[:, 0]) + 0.5 * epsilon**2 * curv * tg(p[:, 0])
    f = fem.solve_poisson(mesh, order, C, _walls(fem.dirichlet(SMOOTH_BOTTOM, data)))
    digest = dict(
        beta_bar=beta.average,
        gamma_bar=gamma.average,
        beta_trace=_digest(beta.trace_on_gamma),
        gamma_trace=_digest(gamma.trace_on_gamma),
    )
    return WallLawSolution(WallLawFamily.EXPLICIT_MS2, epsilon, C, f, None, digest)


def implicit_ms_first(
    C: float,
    epsilon: float,
    beta: CellSolution,
    mesh: TriangularMesh,
    order: int = 2,
    panels_per_period: int = 16,
    min_trace: float | None = None,
) -> WallLawSolution:
    """Oscillating Robin law ``w = eps*beta(x1/eps, 0)*dw/dx2``.

    The coefficient is resolved by boundary quadrature on panels of length
    ``2*pi*eps/panels_per_period``. Traces whose minimum falls below
    ``min_trace`` are rejected.
    """
    lo = float(beta.trace_on_gamma.min())
    if min_trace is not None and lo < min_trace:
        raise fem.CoercivityError(f"trace minimum {lo:.3g} is below {min_trace:.3g}")
    if lo <= 0:
        raise fem.CoercivityError(f"trace must be positive, minimum is {lo:.3g}")
    tr = _scaled_trace(beta, epsilon)
    coef = lambda x1: epsilon * tr(x1)
    f = fem.solve_poisson(
        mesh,
        order,
        C,
        _walls(fem.robin(SMOOTH_BOTTOM, coef)),
        robin_panels=fem.robin_panel_length(epsilon, panels_per_period),
    )
    digest = dict(beta_bar=beta.average, beta_trace=_digest(beta.trace_on_gamma))
    return WallLawSolution(WallLawFamily.IMPLICIT_MS1, epsilon, C, f, None, digest)


# ---------------------------------------------------------------- files


def export_wall_law(sol: WallLawSolution, path) -> None:
    """Field file ``path`` plus sidecar ``path.law``."""
    path = Path(path)
    field = sol.field
    if field is None:
        raise fem.ConfigurationError("closed-form solution without a mesh cannot be exported")
    fem.export_field(field, path)
    lines = [
        "walllaw-law v1",
        f"family {sol.family.value}",
        f"epsilon {sol.epsilon:.17g}",
        f"C {sol.C:.17g}",
    ]
    for key in ("beta_bar", "gamma_bar"):
        if key in sol.inputs_digest:
            lines.append(f"{key} {sol.inputs_digest[key]:.17g}")
    for key in ("beta_trace", "gamma_trace"):
        if key in sol.inputs_digest:
            lines.append(f"{key} {sol.inputs_digest[key]}")
    _atomic_write(path.with_name(path.name + ".law"), "\n".join(lines) + "\n")


def import_wall_law(path, mesh: TriangularMesh) -> WallLawSolution:
    path = Path(path)
    field = fem.import_field(path, mesh)
    lines = path.with_name(path.name + ".law").read_text().splitlines()
    if not lines or lines[0].strip() != "walllaw-law v1":
        raise WallLawFormatError("line 1: no header")
    kv = {}
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise WallLawFormatError(f"line {i}: expected 'key value'")
        kv[parts[0]] = parts[1]
    try:
        family = WallLawFamily(kv.pop("family"))
        eps, C = float(kv.pop("epsilon")), float(kv.pop("C"))
    except (KeyError, ValueError) as exc:
        raise WallLawFormatError(f"malformed sidecar: {exc}") from None
    digest = {k: (float(v) if k.endswith("_bar") else v) for k, v in kv.items()}
    return WallLawSolution(family, eps, C, field, None, digest)
