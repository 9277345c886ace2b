"""Boundary-layer approximations on the rough cell.

The approximations combine a macroscopic profile in ``x2`` with the correctors
evaluated at the fast variable ``y = x/eps``:

* zeroth order: the Poiseuille profile above ``x2 = 0``, continued linearly
  (with the same slope) into the rough layer;
* first order: ``u01 + eps/(1+eps*bbar) * u0'(0) * (beta(x/eps) - bbar*x2)``;
* second order: ``u2 + eps*u2'(0)*(beta(x/eps) - bbar)
  + eps^2/2*u2''*(gamma(x/eps) - gbar)`` with the quadratic ``u2`` continued
  into the rough layer.

Both corrected approximations vanish on the rough wall: the first because
``beta = -y2`` cancels the linear continuation, the second because the
Wentzell condition of ``u2`` at ``x2 = 0`` cancels the constant left over by
``beta = -y2`` and ``gamma = -y2**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem
from .cells import CellSolution
from .geometry import TriangularMesh
from .wall_laws import QuadraticProfile, poiseuille_profile, robin_profile, wentzell_profile

ZEROTH = "Zeroth"
FIRST_FULL = "FirstFull"
SECOND_FULL = "SecondFull"


@dataclass(frozen=True)
class ZerothExtension:
    """``C/2*(1-x2)*x2`` for ``x2 >= 0`` and its tangent line ``C/2*x2`` below (C^1 at 0)."""

    C: float

    def __call__(self, points) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(points, dtype=float))[:, 1]
        return np.where(x2 >= 0, 0.5 * self.C * (1 - x2) * x2, 0.5 * self.C * x2)

    def gradient(self, points) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(points, dtype=float))[:, 1]
        d = np.where(x2 >= 0, 0.5 * self.C * (1 - 2 * x2), 0.5 * self.C)
        return np.column_stack([np.zeros_like(x2), d])


@dataclass(frozen=True, eq=False)
class CompositeApproximation:
    """Macroscopic part plus rescaled corrector terms ``weight * (cell(x/eps) - shift(x))``."""

    order_tag: str
    epsilon: float
    macro_part: Callable
    micro_parts: tuple  # of (weight, CellSolution, shift_kind) with shift_kind 'mean' or 'linear'

    def _micro_args(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts, pts / self.epsilon

    def __call__(self, points) -> np.ndarray:
        pts, y = self._micro_args(points)
        out = np.asarray(self.macro_part(pts), dtype=float).copy()
        for weight, cell, shift in self.micro_parts:
            s = cell.average * (pts[:, 1] if shift == "linear" else 1.0)
            out += weight * (cell(y) - s)
        return out

    evaluate = __call__

    def gradient(self, points) -> np.ndarray:
        pts, y = self._micro_args(points)
        out = np.asarray(self.macro_part.gradient(pts), dtype=float).copy()
        for weight, cell, shift in self.micro_parts:
            out += weight * cell.gradient(y) / self.epsilon
            if shift == "linear":
                out[:, 1] -= weight * cell.average
        return out

    def top_residual(self, samples: int = 256) -> float:
        """Largest value on the top wall ``x2 = 1`` (the data the approximation violates there)."""
        x1 = 2 * np.pi * self.epsilon * np.arange(samples) / samples
        return float(np.abs(self(np.column_stack([x1, np.ones(samples)]))).max())

    def wall_residual(self, bottom: Callable, samples: int = 256) -> float:
        """Largest value on the rough wall ``x2 = bottom(x1)``."""
        x1 = 2 * np.pi * self.epsilon * np.arange(samples) / samples
        return float(np.abs(self(np.column_stack([x1, bottom(x1)]))).max())


def build_zeroth(C: float, epsilon: float) -> CompositeApproximation:
    return CompositeApproximation(ZEROTH, epsilon, ZerothExtension(C), ())


def build_first_full(C: float, epsilon: float, beta: CellSolution) -> CompositeApproximation:
    """First-order approximation written with the zeroth-order extension."""
    bb = beta.average
    weight = epsilon / (1 + epsilon * bb) * poiseuille_profile(C).derivative(0.0)
    return CompositeApproximation(FIRST_FULL, epsilon, ZerothExtension(C), ((weight, beta, "linear"),))


def first_full_compact(C: float, epsilon: float, beta: CellSolution) -> CompositeApproximation:
    """Same approximation written around the Robin profile; only valid for ``x2 >= 0``."""
    prof = robin_profile(C, epsilon, beta.average)
    return CompositeApproximation(FIRST_FULL, epsilon, prof, ((epsilon * prof.derivative(0.0), beta, "mean"),))


def build_second_full(C: float, epsilon: float, beta: CellSolution, gamma: CellSolution) -> CompositeApproximation:
    prof: QuadraticProfile = wentzell_profile(C, epsilon, beta.average, gamma.average)
    parts = (
        (epsilon * prof.derivative(0.0), beta, "mean"),
        (0.5 * epsilon**2 * prof.second_derivative, gamma, "mean"),
    )
    return CompositeApproximation(SECOND_FULL, epsilon, prof, parts)


def g_epsilon(approx: CompositeApproximation, samples: int = 256) -> float:
    """Size of the corrector contribution left on the top wall."""
    return approx.top_residual(samples)


def error_decomposition(
    u_eps: fem.FiniteElementField, approx, smooth_mesh: TriangularMesh, h1: bool = True, quad_degree: int = 6
) -> dict:
    """L2 and H1-seminorm of ``u_eps - approx`` over the smooth cell.

    ``u_eps`` lives on a different (rough-cell) mesh and is evaluated at the
    quadrature points of ``smooth_mesh``.
    """
    diff = fem.Difference(u_eps, approx)
    out = {"l2": fem.norm(diff, smooth_mesh, "L2", quad_degree)}
    if h1:
        out["h1semi"] = fem.norm(diff, smooth_mesh, "H1semi", quad_degree)
    return out
