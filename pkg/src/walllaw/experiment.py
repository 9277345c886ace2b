"""Convergence study: rough-channel reference solutions against every approximation.

For each ``eps`` the rough cell is solved on a once-refined mesh, every
approximation is built on the smooth cell, and the L2 (and H1-seminorm) error
over the smooth cell is computed by evaluating the reference at smooth-mesh
quadrature points. Errors are reported for a channel of length
``channel_length``: the single-cell norm is multiplied by
``sqrt(channel_length / (2*pi*eps))``, the number of periods in the channel.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import boundary_layers as bl
from . import fem
from . import wall_laws as wl
from .cells import K_MAX, TRACE_SAMPLES, CellPair, CellResolution, solve_cells
from .geometry import (
    ROUGH_BOTTOM,
    SMOOTH_BOTTOM,
    TOP,
    RoughnessProfile,
    _atomic_write,
    build_mesh,
    cosine_profile,
    refine,
    rough_cell,
    smooth_cell,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = (0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.125, 0.1)
TABLE_FAMILIES = ("U0", "U1_fem", "U2_fem", "ExplicitMS1", "ImplicitMS1", "ExplicitMS2")
COMPOSITE_FAMILIES = (bl.ZEROTH, bl.FIRST_FULL, bl.SECOND_FULL)
ALIASES = {"U1": "U1_fem", "U2": "U2_fem", "EMS1": "ExplicitMS1", "EMS2": "ExplicitMS2", "IMS1": "ImplicitMS1"}
ALL_FAMILIES = tuple(f.value for f in wl.WallLawFamily) + COMPOSITE_FAMILIES


class PlanError(ValueError):
    pass


def canonical_family(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in ALL_FAMILIES:
        raise PlanError(f"unknown family {name!r}; choose from {', '.join(ALL_FAMILIES)}")
    return name


@dataclass(frozen=True)
class ExperimentPlan:
    profile: RoughnessProfile = field(default_factory=cosine_profile)
    C: float = 1.0
    epsilons: tuple = DEFAULT_EPSILONS
    families: tuple = TABLE_FAMILIES
    segments: int = 32
    reference_refinements: int = 1
    element_order: int = 2
    quad_degree: int = 6
    robin_panels_per_period: int = 16
    channel_length: float = 10.0
    cell_height: float = 10.0
    cell_resolution: CellResolution = field(default_factory=CellResolution)
    jobs: int = 1
    h1: bool = True

    def validate(self) -> "ExperimentPlan":
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 4:
            raise PlanError(f"need at least 4 epsilon values for a meaningful fit, got {len(eps)}")
        if any(not 0 < e <= 1 for e in eps):
            raise PlanError("epsilon values must lie in (0, 1]")
        if len(set(eps)) != len(eps):
            raise PlanError("epsilon values must be distinct")
        fams = tuple(canonical_family(f) for f in self.families)
        if not fams:
            raise PlanError("no families requested")
        if self.element_order not in (1, 2):
            raise PlanError("element order must be 1 or 2")
        if self.segments < 8:
            raise PlanError("segments must be at least 8")
        if self.reference_refinements < 0:
            raise PlanError("reference_refinements must be nonnegative")
        if not self.C > 0:
            raise PlanError("C must be positive")
        if not self.channel_length > 0:
            raise PlanError("channel_length must be positive")
        if self.cell_height < 5:
            raise PlanError("cell height must be at least 5")
        if self.jobs < 1:
            raise PlanError("jobs must be at least 1")
        self.profile.validate()
        return replace(self, epsilons=tuple(sorted(eps, reverse=True)), families=fams)

    def channel_factor(self, epsilon: float) -> float:
        return math.sqrt(self.channel_length / (2 * math.pi * epsilon))


@dataclass
class ConvergenceRecord:
    family: str
    epsilons: list
    l2_errors: list
    h1_errors: list
    alpha: float = float("nan")
    fit_residual: float = float("nan")
    status: str = "ok"


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    cells: CellPair
    records: list
    rows: list  # (family, eps, l2, h1) in plan order
    failures: dict  # (family, eps) -> message
    mesh_checksums: dict
    timings: dict

    def record(self, family: str) -> ConvergenceRecord:
        family = canonical_family(family)
        for r in self.records:
            if r.family == family:
                return r
        raise KeyError(family)

    def error(self, family: str, epsilon: float) -> float:
        r = self.record(family)
        return r.l2_errors[r.epsilons.index(epsilon)]

    @property
    def ok(self) -> bool:
        return not self.failures and all(r.status == "ok" for r in self.records)


def fit_order(errors) -> tuple[float, float]:
    """Least-squares slope of ``log e`` against ``log eps`` and the RMS deviation of the fit."""
    data = np.asarray(list(errors), dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise ValueError("need at least 3 (epsilon, error) pairs")
    eps, e = data[:, 0], data[:, 1]
    if np.any(e <= 0) or np.any(eps <= 0):
        raise ValueError("errors and epsilons must be positive")
    x, y = np.log(eps), np.log(e)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


# ---------------------------------------------------------------- per-eps pipeline


def reference_mesh(plan: ExperimentPlan, epsilon: float, extra_refinements: int = 0):
    mesh = build_mesh(rough_cell(plan.profile, epsilon, segments=plan.segments))
    for _ in range(plan.reference_refinements + extra_refinements):
        mesh = refine(mesh)
    return mesh


def solve_reference(plan: ExperimentPlan, epsilon: float, extra_refinements: int = 0) -> fem.FiniteElementField:
    """Rough-cell solution: source C, zero on both walls, periodic sides."""
    mesh = reference_mesh(plan, epsilon, extra_refinements)
    return fem.solve_poisson(
        mesh, plan.element_order, plan.C, [fem.dirichlet(ROUGH_BOTTOM, 0.0), fem.dirichlet(TOP, 0.0)]
    )


def family_mesh(plan: ExperimentPlan, epsilon: float):
    return build_mesh(smooth_cell(epsilon, segments=plan.segments))


def build_family(plan: ExperimentPlan, family: str, epsilon: float, cells: CellPair, mesh):
    """Approximation object (field or evaluator) for one family at one epsilon."""
    C, k = plan.C, plan.element_order
    b, g = cells.beta, cells.gamma
    if family == "U0":
        return wl.poiseuille(C, mesh, k).approximation
    if family == "U1_analytic":
        return wl.averaged_first(C, epsilon, b.average, mesh, "analytic", k).closed_form
    if family == "U1_fem":
        return wl.averaged_first(C, epsilon, b.average, mesh, "fem", k).approximation
    if family == "U2_analytic":
        return wl.averaged_second(C, epsilon, b.average, g.average, mesh, "analytic", k).closed_form
    if family == "U2_fem":
        return wl.averaged_second(C, epsilon, b.average, g.average, mesh, "fem", k).approximation
    if family == "ExplicitMS1":
        return wl.explicit_ms_first(C, epsilon, b, mesh, k).approximation
    if family == "ExplicitMS2":
        return wl.explicit_ms_second(C, epsilon, b, g, mesh, k).approximation
    if family == "ImplicitMS1":
        return wl.implicit_ms_first(C, epsilon, b, mesh, k, plan.robin_panels_per_period).approximation
    if family == bl.ZEROTH:
        return bl.build_zeroth(C, epsilon)
    if family == bl.FIRST_FULL:
        return bl.build_first_full(C, epsilon, b)
    if family == bl.SECOND_FULL:
        return bl.build_second_full(C, epsilon, b, g)
    raise PlanError(f"unknown family {family!r}")


def _run_epsilon(plan: ExperimentPlan, epsilon: float, cells: CellPair):
    t0 = time.perf_counter()
    out, failures = {}, {}
    ref = solve_reference(plan, epsilon)
    mesh = family_mesh(plan, epsilon)
    scale = plan.channel_factor(epsilon)
    for fam in plan.families:
        try:
            approx = build_family(plan, fam, epsilon, cells, mesh)
            err = bl.error_decomposition(ref, approx, mesh, h1=plan.h1, quad_degree=plan.quad_degree)
            out[fam] = (scale * err["l2"], scale * err.get("h1semi", float("nan")))
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            failures[(fam, epsilon)] = f"{type(exc).__name__}: {exc}"
            logger.warning("family %s at eps=%g failed: %s", fam, epsilon, exc)
    checks = {"reference": ref.mesh.checksum, "family": mesh.checksum}
    return epsilon, out, failures, checks, time.perf_counter() - t0


def run_experiment(plan: ExperimentPlan, cells: CellPair | None = None) -> ExperimentResult:
    plan = plan.validate()
    t0 = time.perf_counter()
    if cells is None:
        cells = solve_cells(plan.profile, plan.cell_height, plan.cell_resolution)
    timings = {"cells": time.perf_counter() - t0}
    logger.info("beta_bar=%.6f gamma_bar=%.6f", cells.beta_bar, cells.gamma_bar)

    if plan.jobs > 1:
        with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
            results = list(pool.map(lambda e: _run_epsilon(plan, e, cells), plan.epsilons))
    else:
        results = [_run_epsilon(plan, e, cells) for e in plan.epsilons]

    rows, failures, checksums = [], {}, {}
    per_family = {f: ConvergenceRecord(f, [], [], []) for f in plan.families}
    for eps, out, fail, checks, dt in results:
        failures.update(fail)
        checksums[eps] = checks
        timings[f"eps={eps:g}"] = dt
        for fam in plan.families:
            if fam in out:
                l2, h1 = out[fam]
                rows.append((fam, eps, l2, h1))
                rec = per_family[fam]
                rec.epsilons.append(eps)
                rec.l2_errors.append(l2)
                rec.h1_errors.append(h1)
    rows.sort(key=lambda r: (plan.families.index(r[0]), -r[1]))
    records = []
    for fam in plan.families:
        rec = per_family[fam]
        if len(rec.epsilons) < len(plan.epsilons):
            rec.status = "incomplete"
        try:
            rec.alpha, rec.fit_residual = fit_order(zip(rec.epsilons, rec.l2_errors))
        except ValueError as exc:
            rec.status = f"fit failed: {exc}"
        records.append(rec)
    timings["total"] = time.perf_counter() - t0
    return ExperimentResult(plan, cells, records, rows, failures, checksums, timings)


def reference_self_convergence(plan: ExperimentPlan, epsilon: float) -> float:
    """L2 distance over the smooth cell between the reference and a once-refined reference."""
    plan = plan.validate()
    coarse = solve_reference(plan, epsilon)
    fine = solve_reference(plan, epsilon, extra_refinements=1)
    mesh = family_mesh(plan, epsilon)
    return plan.channel_factor(epsilon) * fem.norm(fem.Difference(coarse, fine), mesh, "L2", plan.quad_degree)


# ---------------------------------------------------------------- outputs


def _fmt(x: float) -> str:
    return f"{x:.10e}"


def write_errors_csv(result: ExperimentResult, path) -> None:
    lines = ["family,epsilon,l2_error,h1semi_error"]
    lines += [f"{f},{e:g},{_fmt(l2)},{_fmt(h1)}" for f, e, l2, h1 in result.rows]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def write_orders_csv(result: ExperimentResult, path) -> None:
    lines = ["family,alpha,fit_residual"]
    lines += [f"{r.family},{r.alpha:.6f},{r.fit_residual:.6f}" for r in result.records]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def plan_settings(plan: ExperimentPlan) -> list[tuple[str, str]]:
    """Every knob of the plan and the fixed numerical choices, as (key, value) pairs."""
    res = plan.cell_resolution
    out = [
        ("profile", plan.profile.description),
        ("profile_delta", f"{plan.profile.delta:g}"),
        ("profile_checksum", profile_checksum(plan.profile)),
        ("C", f"{plan.C:g}"),
        ("epsilons", " ".join(f"{e:g}" for e in plan.epsilons)),
        ("families", " ".join(plan.families)),
        ("segments_per_period", str(plan.segments)),
        ("reference_refinements", str(plan.reference_refinements)),
        ("element_order", str(plan.element_order)),
        ("error_quadrature_degree", str(plan.quad_degree)),
        ("assembly_quadrature_degree", str(2 * plan.element_order + 2)),
        ("robin_panels_per_period", str(plan.robin_panels_per_period)),
        ("robin_panel_gauss_points", "6"),
        ("channel_length", f"{plan.channel_length:g}"),
        ("error_normalization", "single-cell norm times sqrt(channel_length/(2*pi*eps))"),
        ("error_domain", "smooth cell 0 < x2 < 1"),
        ("cross_mesh_direction", "reference evaluated at smooth-mesh quadrature points"),
        ("fit_method", "least squares on log(error) vs log(eps), all eps"),
        ("solver", f"sparse LDL^T (SuperLU symmetric mode) below {fem.DIRECT_SOLVER_LIMIT} dofs, Jacobi-PCG above"),
        ("solver_tolerance", "1e-12 relative (PCG)"),
        ("cell_height", f"{plan.cell_height:g}"),
        ("cell_segments", str(res.segments)),
        ("cell_growth", f"{res.growth:g}"),
        ("cell_max_aspect", f"{res.max_aspect:g}"),
        ("cell_element_order", str(res.element_order)),
        ("cell_K_max", str(K_MAX)),
        ("cell_trace_samples", str(TRACE_SAMPLES)),
        ("cell_far_field", "Fourier extension of the trace above y2 = H - 1"),
        ("gamma_sign", "stored as computed (signed)"),
        ("wall_law_derivatives", "closed-form profiles"),
        ("oscillating_dirichlet", "interpolation at boundary dofs of a periodic cubic spline of the trace"),
        ("jobs", str(plan.jobs)),
    ]
    return out


def profile_checksum(profile: RoughnessProfile, samples: int = 1024) -> str:
    y = 2 * np.pi * np.arange(samples) / samples
    v = np.ascontiguousarray(profile(y), dtype="<f8")
    return hashlib.sha256(v.tobytes()).hexdigest()[:16]


def write_manifest(result: ExperimentResult, path, extra: list | None = None) -> None:
    cells = result.cells
    lines = ["walllaw-manifest v1"]
    lines += [f"{k} = {v}" for k, v in plan_settings(result.plan)]
    lines += [
        f"beta_bar = {cells.beta_bar:.12g}",
        f"gamma_bar = {cells.gamma_bar:.12g}",
        f"gamma_bar_abs = {abs(cells.gamma_bar):.12g}",
    ]
    for eps in result.plan.epsilons:
        ch = result.mesh_checksums.get(eps, {})
        lines.append(f"mesh_reference[{eps:g}] = {ch.get('reference', 'missing')}")
        lines.append(f"mesh_family[{eps:g}] = {ch.get('family', 'missing')}")
    for r in result.records:
        lines.append(f"status[{r.family}] = {r.status}")
    for (fam, eps), msg in sorted(result.failures.items()):
        lines.append(f"failure[{fam},{eps:g}] = {msg}")
    lines += [f"{k} = {v}" for k, v in (extra or [])]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def write_error_plot(result: ExperimentResult, directory) -> None:
    """Per-family data files and a gnuplot script for the log-log error curves."""
    directory = Path(directory)
    plots = []
    for r in result.records:
        name = f"errors_{r.family}.dat"
        lines = ["# epsilon l2_error h1semi_error"]
        lines += [f"{e:g} {_fmt(l2)} {_fmt(h1)}" for e, l2, h1 in zip(r.epsilons, r.l2_errors, r.h1_errors)]
        _atomic_write(directory / name, "\n".join(lines) + "\n")
        plots.append(f"'{name}' using 1:2 with linespoints title '{r.family} ({r.alpha:.3f})'")
    script = [
        "set logscale xy",
        "set xlabel 'epsilon'",
        "set ylabel 'L2 error on the smooth cell'",
        "set key left top",
        "set terminal pngcairo size 800,600",
        "set output 'errors.png'",
        "plot " + ", \\\n     ".join(plots),
    ]
    _atomic_write(directory / "plot_errors.gp", "\n".join(script) + "\n")


def write_outputs(result: ExperimentResult, directory, extra_manifest: list | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_errors_csv(result, directory / "errors.csv")
    write_orders_csv(result, directory / "orders.csv")
    write_error_plot(result, directory)
    write_manifest(result, directory / "manifest.txt", extra_manifest)
