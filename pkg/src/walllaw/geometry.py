"""Roughness profiles and structured triangular meshes of rough/smooth channel cells.

Three domain kinds are supported, all periodic in the horizontal direction:

* ``rough_cell``  -- one roughness period of the rough channel,
  ``x1 in [0, 2*pi*eps]``, ``x2 in [eps*f(x1/eps), 1]``;
* ``smooth_cell`` -- the same period cut at the fictitious wall, ``x2 in [0, 1]``;
* ``micro_strip`` -- the truncated microscopic cell, ``y1 in [0, 2*pi]``,
  ``y2 in [f(y1), H]``.

Meshes are built by mapping a structured grid onto the domain. Domains with a
rough bottom are split in two blocks at the line ``x2 = 0``: a thin layer that
follows the graph of the profile and a flat block above it. The flat block of a
rough cell is therefore identical to the smooth-cell mesh built with the same
resolution, which keeps cross-mesh comparisons on the smooth part exact.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

ROUGH_BOTTOM = "RoughBottom"
SMOOTH_BOTTOM = "SmoothBottom"
TOP = "Top"
NEUMANN_TOP = "NeumannTop"
PERIODIC_LEFT = "PeriodicLeft"
PERIODIC_RIGHT = "PeriodicRight"
INTERFACE = "Interface"

TAGS = (ROUGH_BOTTOM, SMOOTH_BOTTOM, TOP, NEUMANN_TOP, PERIODIC_LEFT, PERIODIC_RIGHT, INTERFACE)

MAX_ASPECT_RATIO = 8.0
MIN_SEGMENTS = 8


class ProfileError(ValueError):
    """The roughness profile is not an admissible negative periodic graph."""


class MeshError(ValueError):
    pass


class MeshFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class RoughnessProfile:
    """A ``2*pi``-periodic roughness graph ``y2 = f(y1)`` lying below ``-delta``."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    delta: float
    description: str = ""

    def __call__(self, y1):
        return np.asarray(self.evaluate(np.asarray(y1, dtype=float)), dtype=float)

    def validate(self, samples: int = 2048) -> None:
        if not self.delta > 0:
            raise ProfileError(f"delta must be positive, got {self.delta}")
        y1 = np.linspace(0.0, 2 * np.pi, samples + 1)
        f = self(y1)
        if not np.all(np.isfinite(f)):
            raise ProfileError("profile is not finite on [0, 2pi]")
        if abs(f[0] - f[-1]) > 1e-10 * max(1.0, abs(f[0])):
            raise ProfileError(f"profile is not periodic: f(0)={f[0]!r}, f(2pi)={f[-1]!r}")
        worst = int(np.argmax(f))
        if f[worst] > -self.delta + 1e-12:
            raise ProfileError(
                f"profile must stay below -delta={-self.delta}: f({y1[worst]:.6g}) = {f[worst]:.6g}"
            )
        slopes = np.abs(np.diff(f)) / np.diff(y1)
        if slopes.max() > 1e3:
            raise ProfileError(f"profile is not Lipschitz on the sampled grid (slope {slopes.max():.3g})")

    @cached_property
    def depth_range(self) -> tuple[float, float]:
        f = self(np.linspace(0.0, 2 * np.pi, 2049))
        return float(-f.max()), float(-f.min())


def cosine_profile(delta: float = 5e-2) -> RoughnessProfile:
    """Single-cosine roughness ``f(y1) = -(1 + cos y1)/2 - delta``."""
    return RoughnessProfile(
        evaluate=lambda y1: -(1.0 + np.cos(y1)) / 2.0 - delta,
        delta=delta,
        description=f"cosine, delta={delta:g}",
    )


def flat_profile(delta: float = 5e-2) -> RoughnessProfile:
    return RoughnessProfile(
        evaluate=lambda y1: np.full_like(np.asarray(y1, dtype=float), -delta),
        delta=delta,
        description=f"flat, delta={delta:g}",
    )


def tabulated_profile(y1: np.ndarray, f: np.ndarray, delta: float | None = None) -> RoughnessProfile:
    """Periodic cubic-spline profile through samples ``(y1_i, f_i)`` covering one period."""
    from scipy.interpolate import CubicSpline

    y1 = np.asarray(y1, dtype=float)
    f = np.asarray(f, dtype=float)
    if y1[-1] < 2 * np.pi - 1e-12:
        y1 = np.append(y1, 2 * np.pi)
        f = np.append(f, f[0])
    spline = CubicSpline(y1, f, bc_type="periodic")
    if delta is None:
        delta = float(-f.max())
    return RoughnessProfile(
        evaluate=lambda t: spline(np.mod(t, 2 * np.pi)),
        delta=delta,
        description=f"tabulated ({len(y1)} samples)",
    )


@dataclass(frozen=True, eq=False)
class TriangularMesh:
    """Conforming triangulation with tagged boundary edges and periodic vertex pairs.

    ``bottom`` is the graph ``x2 = bottom(x1)`` of the rough boundary, kept so that
    refinement can project new boundary vertices onto it. It is not serialized.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    periodic_pairs: np.ndarray
    bottom: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "boundary_tags", "periodic_pairs"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge i is opposite local vertex i
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        keys = np.sort(local, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Global edge ids of vertex pairs (any orientation)."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        n = self.n_vertices
        keys = self.edges[:, 0].astype(np.int64) * n + self.edges[:, 1]
        query = pairs[:, 0] * n + pairs[:, 1]
        idx = np.searchsorted(keys, query)
        idx = np.minimum(idx, len(keys) - 1)
        if not np.all(keys[idx] == query):
            raise MeshError("vertex pair is not a mesh edge")
        return idx

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def h_max(self) -> float:
        e = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((e**2).sum(axis=1)).max())

    @cached_property
    def aspect_ratios(self) -> np.ndarray:
        """Circumradius over inradius for every triangle (2 for equilateral)."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        area = np.abs(self.areas)
        s = 0.5 * (a + b + c)
        return a * b * c * s / (4.0 * area**2)

    @cached_property
    def min_angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cos = (u * v).sum(axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return np.min(angles, axis=0)

    def tagged_edges(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def tagged_vertices(self, tag: str) -> np.ndarray:
        return np.unique(self.tagged_edges(tag))

    @property
    def tags(self) -> set[str]:
        return set(self.boundary_tags.tolist())

    @cached_property
    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()

    @cached_property
    def width(self) -> float:
        return float(self.vertices[:, 0].max() - self.vertices[:, 0].min())

    def check(self) -> None:
        """Raise MeshError if a structural invariant is violated."""
        if np.any(self.areas <= 0):
            raise MeshError(f"{int((self.areas <= 0).sum())} triangles with nonpositive area")
        edges, tri_edges = self._edge_data
        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("non-manifold edge")
        bnd = self.edge_index(self.boundary_edges)
        if np.any(counts[bnd] != 1):
            raise MeshError("a tagged boundary edge is shared by two triangles")
        n_boundary = int((counts == 1).sum())
        if n_boundary != len(self.boundary_edges):
            raise MeshError(f"{n_boundary} boundary edges but {len(self.boundary_edges)} tagged")
        if len(self.periodic_pairs):
            left, right = self.periodic_pairs.T
            dy = np.abs(self.vertices[left, 1] - self.vertices[right, 1])
            if dy.max() > 1e-12 * self.width:
                raise MeshError(f"periodic pair mismatch {dy.max():.3g}")


@dataclass(frozen=True)
class DomainSpec:
    """What to mesh and at which resolution.

    ``segments`` is the number of boundary segments per roughness period (the
    resolution knob); ``target_h`` overrides it with ``ceil(width/target_h)``.
    Rows above the rough layer start at the column width, grow by ``growth`` and
    are capped at ``max_aspect`` column widths.
    """

    kind: str
    profile: RoughnessProfile | None = None
    epsilon: float = 1.0
    height: float = 1.0
    segments: int = 32
    target_h: float | None = None
    growth: float = 1.0
    max_aspect: float = 4.0

    @property
    def width(self) -> float:
        return 2 * np.pi if self.kind == "micro_strip" else 2 * np.pi * self.epsilon

    @property
    def n_segments(self) -> int:
        if self.target_h is not None:
            if not self.target_h > 0:
                raise MeshError(f"target_h must be positive, got {self.target_h}")
            return int(math.ceil(self.width / self.target_h - 1e-9))
        return int(self.segments)

    def bottom(self) -> Callable[[np.ndarray], np.ndarray] | None:
        if self.kind == "rough_cell":
            eps, prof = self.epsilon, self.profile
            return lambda x1: eps * prof(np.asarray(x1) / eps)
        if self.kind == "micro_strip":
            return self.profile
        return None


def rough_cell(profile: RoughnessProfile, epsilon: float, segments: int = 32, **kw) -> DomainSpec:
    return DomainSpec("rough_cell", profile, epsilon=epsilon, segments=segments, **kw)


def smooth_cell(epsilon: float, segments: int = 32, height: float = 1.0, **kw) -> DomainSpec:
    return DomainSpec("smooth_cell", None, epsilon=epsilon, height=height, segments=segments, **kw)


def micro_strip(profile: RoughnessProfile, height: float = 10.0, segments: int = 128, **kw) -> DomainSpec:
    kw.setdefault("growth", 1.08)
    return DomainSpec("micro_strip", profile, height=height, segments=segments, **kw)


def row_levels(top: float, first: float, growth: float = 1.0, cap: float | None = None) -> np.ndarray:
    """Row levels ``0 = z_0 < ... < z_m = top``.

    The sequence of row heights does not depend on ``top`` except for the last one
    or two rows, so strips of different heights share their lower rows exactly.
    """
    cap = np.inf if cap is None else cap
    levels = [0.0]
    h = first
    while True:
        z = levels[-1]
        step = min(h, cap)
        if z + step >= top - 1e-12 * max(1.0, top):
            levels.append(top)
            break
        if top - (z + step) < 0.5 * min(h * growth, cap):
            levels.append(top)
            break
        levels.append(z + step)
        h *= growth
    return np.asarray(levels)


def _layer_rows(profile_depths: tuple[float, float], width: float) -> int:
    dmin, dmax = profile_depths
    return max(1, int(round(math.sqrt(dmin * dmax) / width)))


def build_mesh(spec: DomainSpec) -> TriangularMesh:
    """Structured mapped triangulation of the domain described by ``spec``."""
    if spec.kind not in ("rough_cell", "smooth_cell", "micro_strip"):
        raise MeshError(f"unknown domain kind {spec.kind!r}")
    n = spec.n_segments
    if n < MIN_SEGMENTS:
        raise MeshError(
            f"resolution too coarse: {n} segments per roughness period (need >= {MIN_SEGMENTS})"
        )
    if spec.kind != "smooth_cell":
        if spec.profile is None:
            raise MeshError(f"{spec.kind} needs a roughness profile")
        spec.profile.validate()
    if spec.kind in ("rough_cell", "smooth_cell") and not spec.epsilon > 0:
        raise MeshError(f"epsilon must be positive, got {spec.epsilon}")

    width = spec.width
    w = width / n
    x1 = np.linspace(0.0, width, n + 1)
    x1[-1] = width

    if spec.kind == "micro_strip":
        top = float(spec.height)
        if not top > 0:
            raise MeshError("strip height must be positive")
        scale = 1.0
    else:
        top = float(spec.height)
        scale = spec.epsilon

    rows: list[np.ndarray] = []
    bottom = spec.bottom()
    if bottom is not None:
        b = bottom(x1)
        b[-1] = b[0]
        dmin, dmax = spec.profile.depth_range
        k = _layer_rows((dmin * scale, dmax * scale), w)
        for i in range(k):
            rows.append(b * (1.0 - i / k))
    levels = row_levels(top, w, spec.growth, spec.max_aspect * w)
    for z in levels:
        rows.append(np.full(n + 1, z))

    m = len(rows) - 1
    X = np.repeat(x1[None, :], m + 1, axis=0)
    Y = np.stack(rows)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    I, J = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    I, J = I.ravel(), J.ravel()
    p00, p01, p10, p11 = vid(I, J), vid(I, J + 1), vid(I + 1, J), vid(I + 1, J + 1)
    d1 = np.linalg.norm(vertices[p11] - vertices[p00], axis=1)
    d2 = np.linalg.norm(vertices[p10] - vertices[p01], axis=1)
    use_main = d1 <= d2
    t1 = np.where(use_main[:, None], np.column_stack([p00, p01, p11]), np.column_stack([p00, p01, p10]))
    t2 = np.where(use_main[:, None], np.column_stack([p00, p11, p10]), np.column_stack([p01, p11, p10]))
    triangles = np.concatenate([t1, t2])

    jj = np.arange(n)
    ii = np.arange(m)
    bottom_tag = ROUGH_BOTTOM if bottom is not None else SMOOTH_BOTTOM
    top_tag = NEUMANN_TOP if spec.kind == "micro_strip" else TOP
    bedges = [
        np.column_stack([vid(0, jj), vid(0, jj + 1)]),
        np.column_stack([vid(m, jj), vid(m, jj + 1)]),
        np.column_stack([vid(ii, 0), vid(ii + 1, 0)]),
        np.column_stack([vid(ii, n), vid(ii + 1, n)]),
    ]
    btags = [
        np.full(n, bottom_tag),
        np.full(n, top_tag),
        np.full(m, PERIODIC_LEFT),
        np.full(m, PERIODIC_RIGHT),
    ]
    ia = np.arange(m + 1)
    pairs = np.column_stack([vid(ia, 0), vid(ia, n)])

    mesh = TriangularMesh(
        vertices=vertices,
        triangles=triangles.astype(np.int64),
        boundary_edges=np.concatenate(bedges).astype(np.int64),
        boundary_tags=np.concatenate(btags).astype(object),
        periodic_pairs=pairs.astype(np.int64),
        bottom=bottom,
    )
    worst = float(mesh.aspect_ratios.max())
    if worst > MAX_ASPECT_RATIO:
        logger.warning("mesh aspect ratio %.2f exceeds %.1f", worst, MAX_ASPECT_RATIO)
    return mesh


def refine(mesh: TriangularMesh) -> TriangularMesh:
    """Uniform red refinement; new rough-boundary vertices are projected onto the graph."""
    nv = mesh.n_vertices
    edges = mesh.edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    if mesh.bottom is not None:
        rough = mesh.tagged_edges(ROUGH_BOTTOM)
        if len(rough):
            ids = mesh.edge_index(rough)
            mids[ids, 1] = mesh.bottom(mids[ids, 0])
    vertices = np.concatenate([mesh.vertices, mids])

    t = mesh.triangles
    e = mesh.triangle_edges + nv  # e[:, i] is the midpoint opposite vertex i
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    m_bc, m_ca, m_ab = e[:, 0], e[:, 1], e[:, 2]
    triangles = np.concatenate(
        [
            np.column_stack([a, m_ab, m_ca]),
            np.column_stack([m_ab, b, m_bc]),
            np.column_stack([m_ca, m_bc, c]),
            np.column_stack([m_ab, m_bc, m_ca]),
        ]
    )

    be = mesh.boundary_edges
    bm = mesh.edge_index(be) + nv
    boundary_edges = np.concatenate([np.column_stack([be[:, 0], bm]), np.column_stack([bm, be[:, 1]])])
    boundary_tags = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])

    pairs = [mesh.periodic_pairs]
    if len(mesh.periodic_pairs):
        partner = dict(zip(mesh.periodic_pairs[:, 0].tolist(), mesh.periodic_pairs[:, 1].tolist()))
        left = mesh.tagged_edges(PERIODIC_LEFT)
        if len(left):
            right_pairs = np.array([[partner[u], partner[v]] for u, v in left.tolist()])
            pairs.append(np.column_stack([mesh.edge_index(left), mesh.edge_index(right_pairs)]) + nv)
    return TriangularMesh(
        vertices=vertices,
        triangles=triangles.astype(np.int64),
        boundary_edges=boundary_edges.astype(np.int64),
        boundary_tags=boundary_tags.astype(object),
        periodic_pairs=np.concatenate(pairs).astype(np.int64),
        bottom=mesh.bottom,
    )


def submesh(mesh: TriangularMesh, keep: np.ndarray, new_tag: str = INTERFACE) -> TriangularMesh:
    """Restrict to the triangles flagged in ``keep``; cut edges get ``new_tag``."""
    tris = mesh.triangles[keep]
    used = np.unique(tris)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))

    edges, tri_edges = mesh._edge_data
    counts = np.bincount(tri_edges[keep].ravel(), minlength=len(edges))
    boundary_ids = np.flatnonzero(counts == 1)
    old_ids = mesh.edge_index(mesh.boundary_edges)
    old_tag = dict(zip(old_ids.tolist(), mesh.boundary_tags.tolist()))
    # orient boundary edges as they appear in the kept triangles
    local = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1).reshape(-1, 2)
    flat_ids = tri_edges[keep].ravel()
    oriented = {}
    for eid, pair in zip(flat_ids.tolist(), local.tolist()):
        oriented[eid] = pair
    bedges = np.array([oriented[i] for i in boundary_ids.tolist()], dtype=np.int64)
    btags = np.array([old_tag.get(i, new_tag) for i in boundary_ids.tolist()], dtype=object)

    pairs = mesh.periodic_pairs
    pairs = pairs[(remap[pairs[:, 0]] >= 0) & (remap[pairs[:, 1]] >= 0)]
    return TriangularMesh(
        vertices=mesh.vertices[used].copy(),
        triangles=remap[tris],
        boundary_edges=remap[bedges],
        boundary_tags=btags,
        periodic_pairs=remap[pairs],
        bottom=mesh.bottom,
    )


def export_mesh(mesh: TriangularMesh, path) -> None:
    lines = ["walllaw-mesh v1", f"vertices {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {tag}" for (i, j), tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags)]
    lines.append(f"periodic {len(mesh.periodic_pairs)}")
    lines += [f"{i} {j}" for i, j in mesh.periodic_pairs.tolist()]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def import_mesh(path) -> TriangularMesh:
    text = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(text) and not text[pos].strip():
            pos += 1
        if pos >= len(text):
            raise MeshFormatError("unexpected end of file", pos + 1)
        pos += 1
        return pos, text[pos - 1].split()

    if not any(line.strip() for line in text):
        raise MeshFormatError("no header", 1)
    lineno, header = next_line()
    if header != ["walllaw-mesh", "v1"]:
        raise MeshFormatError(f"bad header {' '.join(header)!r}", lineno)

    def section(name, converters):
        lineno, words = next_line()
        if len(words) != 2 or words[0] != name:
            raise MeshFormatError(f"expected '{name} N'", lineno)
        try:
            count = int(words[1])
        except ValueError:
            raise MeshFormatError(f"bad count {words[1]!r}", lineno) from None
        rows, where = [], []
        for _ in range(count):
            lineno, words = next_line()
            if len(words) != len(converters):
                raise MeshFormatError(f"expected {len(converters)} fields in {name} entry", lineno)
            try:
                rows.append([c(wd) for c, wd in zip(converters, words)])
            except ValueError as exc:
                raise MeshFormatError(f"bad {name} entry: {exc}", lineno) from None
            where.append(lineno)
        return rows, where

    verts, _ = section("vertices", (float, float))
    tris, tri_lines = section("triangles", (int, int, int))
    bnd, bnd_lines = section("boundary", (int, int, str))
    per, per_lines = section("periodic", (int, int))
    nv = len(verts)
    for lst, lines_, label in ((tris, tri_lines, "triangle"), (bnd, bnd_lines, "boundary"), (per, per_lines, "periodic")):
        for row, lineno in zip(lst, lines_):
            if any(not 0 <= v < nv for v in row[:3] if isinstance(v, int)):
                raise MeshFormatError(f"{label} index out of range: {row}", lineno)
    return TriangularMesh(
        vertices=np.array(verts, dtype=float).reshape(-1, 2),
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        boundary_edges=np.array([r[:2] for r in bnd], dtype=np.int64).reshape(-1, 2),
        boundary_tags=np.array([r[2] for r in bnd], dtype=object),
        periodic_pairs=np.array(per, dtype=np.int64).reshape(-1, 2),
    )
