"""Command-line front end: ``walllaw {cell,experiment,verify,mesh}``.

Settings come from an INI file (``--config``); every key is optional. Example::

    [profile]
    kind = cosine          ; cosine | flat | tabulated
    delta = 0.05
    ; file = profile.txt   ; two columns y1 f(y1) for kind = tabulated

    [physics]
    C = 1

    [cell]
    height = 10
    segments = 128
    growth = 1.08
    max_aspect = 4
    sensitivity_heights = 4, 6, 8, 10

    [experiment]
    epsilons = 0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.125, 0.1
    families = U0, U1_fem, U2_fem, ExplicitMS1, ImplicitMS1, ExplicitMS2
    segments = 32
    reference_refinements = 1
    channel_length = 10
    jobs = 1

    [mesh]
    kind = rough_cell      ; rough_cell | smooth_cell | micro_strip
    epsilon = 0.1
    segments = 32
    refinements = 0
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cells as cp
from . import fem
from .experiment import PlanError, ExperimentPlan, plan_settings, run_experiment, write_outputs
from .geometry import (
    MeshError,
    MeshFormatError,
    ProfileError,
    _atomic_write,
    build_mesh,
    cosine_profile,
    export_mesh,
    flat_profile,
    micro_strip,
    refine,
    rough_cell,
    smooth_cell,
    tabulated_profile,
)

logger = logging.getLogger("walllaw")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    plan: ExperimentPlan
    sensitivity_heights: tuple = (4.0, 6.0, 8.0, 10.0)
    mesh_kind: str = "rough_cell"
    mesh_epsilon: float = 0.1
    mesh_segments: int = 32
    mesh_refinements: int = 0
    source: str = "defaults"
    raw: dict = field(default_factory=dict)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from None


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def load_config(path: str | None, jobs: int | None = None) -> Config:
    """Parse and validate a configuration; fails before any solve starts."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    known = {"profile", "physics", "cell", "experiment", "mesh"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; expected {sorted(known)}")

    kind = _get(parser, "profile", "kind", str, "cosine")
    delta = _get(parser, "profile", "delta", float, 0.05)
    if kind == "cosine":
        profile = cosine_profile(delta)
    elif kind == "flat":
        profile = flat_profile(delta)
    elif kind == "tabulated":
        fname = _get(parser, "profile", "file", str, None)
        if not fname:
            raise ConfigError("[profile] kind = tabulated needs file = <path>")
        fpath = Path(fname)
        if not fpath.is_absolute() and path is not None:
            fpath = Path(path).parent / fpath
        try:
            data = np.loadtxt(fpath, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read profile samples {fpath}: {exc}") from None
        if data.shape[1] != 2:
            raise ConfigError("profile samples need two columns: y1 f(y1)")
        profile = tabulated_profile(data[:, 0], data[:, 1], delta)
    else:
        raise ConfigError(f"[profile] kind must be cosine, flat or tabulated, got {kind!r}")

    res = cp.CellResolution(
        segments=_get(parser, "cell", "segments", int, 128),
        growth=_get(parser, "cell", "growth", float, 1.08),
        max_aspect=_get(parser, "cell", "max_aspect", float, 4.0),
    )
    families = _get(parser, "experiment", "families", str, None)
    plan = ExperimentPlan(
        profile=profile,
        C=_get(parser, "physics", "C", float, 1.0),
        segments=_get(parser, "experiment", "segments", int, 32),
        reference_refinements=_get(parser, "experiment", "reference_refinements", int, 1),
        channel_length=_get(parser, "experiment", "channel_length", float, 10.0),
        cell_height=_get(parser, "cell", "height", float, 10.0),
        cell_resolution=res,
        jobs=_get(parser, "experiment", "jobs", int, 1),
    )
    if parser.has_option("experiment", "epsilons"):
        plan = replace(plan, epsilons=_floats(parser.get("experiment", "epsilons")))
    if families:
        plan = replace(plan, families=tuple(f.strip() for f in families.replace(",", " ").split()))
    if jobs is not None:
        plan = replace(plan, jobs=jobs)
    if res.segments < 8 or res.growth < 1 or res.max_aspect <= 0:
        raise ConfigError("[cell] needs segments >= 8, growth >= 1, max_aspect > 0")
    try:
        plan = plan.validate()
    except (PlanError, ProfileError) as exc:
        raise ConfigError(str(exc)) from None

    heights = _floats(_get(parser, "cell", "sensitivity_heights", str, "4, 6, 8, 10"))
    if len(heights) < 2 or any(b <= a for a, b in zip(heights, heights[1:])):
        raise ConfigError("[cell] sensitivity_heights must be increasing with at least two entries")
    cfg = Config(
        plan=plan,
        sensitivity_heights=heights,
        mesh_kind=_get(parser, "mesh", "kind", str, "rough_cell"),
        mesh_epsilon=_get(parser, "mesh", "epsilon", float, 0.1),
        mesh_segments=_get(parser, "mesh", "segments", int, 32),
        mesh_refinements=_get(parser, "mesh", "refinements", int, 0),
        source=str(path) if path else "defaults",
        raw={s: dict(parser.items(s)) for s in parser.sections()},
    )
    if cfg.mesh_kind not in ("rough_cell", "smooth_cell", "micro_strip"):
        raise ConfigError(f"[mesh] kind must be rough_cell, smooth_cell or micro_strip, got {cfg.mesh_kind!r}")
    if not 0 < cfg.mesh_epsilon <= 1 or cfg.mesh_refinements < 0:
        raise ConfigError("[mesh] needs 0 < epsilon <= 1 and refinements >= 0")
    return cfg


# ---------------------------------------------------------------- commands


def _write_traces(beta, gamma, out: Path) -> None:
    lines = ["# y1 beta(y1,0) gamma(y1,0)"]
    lines += [f"{y:.10g} {b:.10e} {g:.10e}" for y, b, g in zip(beta.trace_points, beta.trace_on_gamma, gamma.trace_on_gamma)]
    _atomic_write(out / "traces.dat", "\n".join(lines) + "\n")
    script = [
        "set xlabel 'y1'",
        "set ylabel 'trace on y2 = 0'",
        "set xrange [0:2*pi]",
        "set terminal pngcairo size 800,600",
        "set output 'traces.png'",
        "plot 'traces.dat' using 1:2 with lines title 'beta', \\",
        "     'traces.dat' using 1:3 with lines title 'gamma'",
    ]
    _atomic_write(out / "plot_traces.gp", "\n".join(script) + "\n")


def cmd_cell(cfg: Config, out: Path) -> int:
    plan = cfg.plan
    pair = cp.solve_cells(plan.profile, plan.cell_height, plan.cell_resolution)
    beta, gamma = pair.beta, pair.gamma
    print(f"beta_bar={beta.average:.8f}")
    print(f"gamma_bar={gamma.average:.8f}")
    print(f"gamma_bar_abs={abs(gamma.average):.8f}")

    sp_sol = cp.steklov_poincare_solve(plan.profile, plan.cell_height, plan.cell_resolution)
    diff = float(np.sqrt(2 * np.pi * np.mean((sp_sol.trace_on_gamma - beta.trace_on_gamma) ** 2)))
    print(f"interface_solve beta_bar={sp_sol.average:.8f} iterations={sp_sol.iterations} trace_l2_difference={diff:.3e}")

    rep = cp.decay_report(beta)
    print(f"decay fitted_rate={rep.fitted_rate:.5f} monotone={rep.monotone}")
    table = cp.truncation_sensitivity(plan.profile, cfg.sensitivity_heights, cp.FIRST, plan.cell_resolution)
    print("truncation H beta_bar")
    for h, b in table:
        print(f"  {h:g} {b:.10f}")

    out.mkdir(parents=True, exist_ok=True)
    cp.export_cell(beta, out / "beta.field")
    cp.export_cell(gamma, out / "gamma.field")
    export_mesh(beta.mesh, out / "strip.mesh")
    _write_traces(beta, gamma, out)
    lines = ["# y2 deviation"] + [f"{h:g} {d:.10e}" for h, d in zip(rep.heights, rep.deviation)]
    _atomic_write(out / "decay.dat", "\n".join(lines) + "\n")
    lines = ["# H beta_bar"] + [f"{h:g} {b:.12g}" for h, b in table]
    _atomic_write(out / "truncation.dat", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_experiment(cfg: Config, out: Path) -> int:
    result = run_experiment(cfg.plan)
    write_outputs(result, out, [("config", cfg.source)])
    print(f"beta_bar={result.cells.beta_bar:.8f} gamma_bar={result.cells.gamma_bar:.8f}")
    print("family alpha fit_residual status")
    for r in result.records:
        print(f"  {r.family} {r.alpha:.4f} {r.fit_residual:.4f} {r.status}")
    for (fam, eps), msg in sorted(result.failures.items()):
        print(f"failed {fam} eps={eps:g}: {msg}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_SOLVER


def cmd_verify(cfg: Config, out: Path) -> int:
    from .verification import run_checks

    checks, pair, result = run_checks(cfg.plan)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name.ljust(width)}  {c.detail}")
    print(f"gamma_bar sign: {'negative' if pair.gamma_bar < 0 else 'nonnegative'} ({pair.gamma_bar:.6f}); reported, not asserted")
    out.mkdir(parents=True, exist_ok=True)
    lines = ["check,passed,detail"] + [f"{c.name},{int(c.passed)},\"{c.detail}\"" for c in checks]
    _atomic_write(out / "verify.csv", "\n".join(lines) + "\n")
    write_outputs(result, out, [("config", cfg.source)])
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ACCEPTANCE


def cmd_mesh(cfg: Config, out: Path) -> int:
    p = cfg.plan
    if cfg.mesh_kind == "rough_cell":
        spec = rough_cell(p.profile, cfg.mesh_epsilon, segments=cfg.mesh_segments)
    elif cfg.mesh_kind == "smooth_cell":
        spec = smooth_cell(cfg.mesh_epsilon, segments=cfg.mesh_segments)
    else:
        spec = micro_strip(
            p.profile,
            height=p.cell_height,
            segments=cfg.mesh_segments,
            growth=p.cell_resolution.growth,
            max_aspect=p.cell_resolution.max_aspect,
        )
    mesh = build_mesh(spec)
    for _ in range(cfg.mesh_refinements):
        mesh = refine(mesh)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.mesh_kind}.mesh"
    export_mesh(mesh, path)
    print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, checksum {mesh.checksum}")
    return EXIT_OK


COMMANDS = {"cell": cmd_cell, "experiment": cmd_experiment, "verify": cmd_verify, "mesh": cmd_mesh}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="walllaw", description="Wall laws for rough-channel Poisson flow.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cell": "solve the two cell problems and their diagnostics",
        "experiment": "run the convergence study and write CSV files",
        "verify": "run the check suite and print a pass/fail matrix",
        "mesh": "export a mesh file",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--out", default="walllaw-out", help="output directory (default: %(default)s)")
        p.add_argument("--jobs", type=int, help="number of worker threads (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, args.jobs)
        logger.info("settings: %s", dict(plan_settings(cfg.plan)))
        return COMMANDS[args.command](cfg, Path(args.out))
    except (ConfigError, PlanError, ProfileError, MeshError, MeshFormatError, fem.ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (fem.SolverError, fem.IndefiniteFormError, fem.CoercivityError, fem.EvaluationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
