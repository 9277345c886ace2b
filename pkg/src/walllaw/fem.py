"""P1/P2 Lagrange finite elements on :class:`~walllaw.geometry.TriangularMesh`.

Assembly is vectorized over elements. Periodic vertex pairs are merged into a
single degree of freedom and Dirichlet values are eliminated, so the reduced
systems stay symmetric positive definite whenever the continuous form is.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree
from scipy.special import roots_jacobi

from .geometry import PERIODIC_LEFT, PERIODIC_RIGHT, SMOOTH_BOTTOM, TOP, TriangularMesh, _atomic_write

logger = logging.getLogger(__name__)

DIRECT_SOLVER_LIMIT = 200_000


class ConfigurationError(ValueError):
    pass


class CoercivityError(ValueError):
    pass


class IndefiniteFormError(ArithmeticError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, residuals: list[float] | None = None):
        super().__init__(message)
        self.residuals = residuals or []


class EvaluationError(ValueError):
    pass


class FieldFormatError(ValueError):
    pass


# ---------------------------------------------------------------- quadrature


@lru_cache(maxsize=None)
def triangle_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Jacobi rule on the reference triangle, exact to ``degree``.

    Returns points ``(q, 2)`` in reference coordinates and weights summing to 1/2.
    """
    n = degree // 2 + 1
    t, wt = roots_jacobi(n, 1.0, 0.0)
    s, ws = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (t + 1.0)
    wu = wt / 4.0
    v = 0.5 * (s + 1.0)
    wv = ws / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def line_quadrature(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1]."""
    s, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w


# ---------------------------------------------------------------- basis


def _barycentric_ref(pts: np.ndarray) -> np.ndarray:
    return np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])


def basis_values(order: int, lam: np.ndarray) -> np.ndarray:
    """Shape functions at barycentric points ``lam (..., 3)`` -> ``(..., nloc)``.

    P2 ordering: three vertex functions, then the edge functions where edge ``i``
    is opposite vertex ``i``.
    """
    if order == 1:
        return lam.copy()
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1],
        axis=-1,
    )


def basis_gradients(order: int, lam: np.ndarray, grad_lam: np.ndarray) -> np.ndarray:
    """Physical gradients of shape functions.

    ``lam`` is ``(M, q, 3)`` and ``grad_lam`` is ``(M, 3, 2)``; returns ``(M, q, nloc, 2)``.
    """
    g = grad_lam[:, None, :, :]
    if order == 1:
        return np.broadcast_to(g, lam.shape[:2] + (3, 2)).copy()
    l = lam[..., None]
    out = [(4 * l[:, :, i] - 1) * g[:, :, i] for i in range(3)]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        out.append(4 * (l[:, :, j] * g[:, :, k] + l[:, :, k] * g[:, :, j]))
    return np.stack(out, axis=2)


def _line_basis(order: int, t: np.ndarray) -> np.ndarray:
    """1D shape functions on an edge ``(a, b)`` -> columns ``a, b[, midpoint]``."""
    if order == 1:
        return np.column_stack([1 - t, t])
    return np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])


def _line_basis_dt(order: int, t: np.ndarray) -> np.ndarray:
    if order == 1:
        return np.column_stack([-np.ones_like(t), np.ones_like(t)])
    return np.column_stack([4 * t - 3, 4 * t - 1, 4 - 8 * t])


@dataclass(frozen=True)
class ElementGeometry:
    jac_det: np.ndarray  # (M,) twice the area
    grad_lam: np.ndarray  # (M, 3, 2)


def element_geometry(mesh: TriangularMesh) -> ElementGeometry:
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # gradients of lambda_1, lambda_2 are the rows of J^{-T}
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return ElementGeometry(det, np.stack([g0, g1, g2], axis=1))


# ---------------------------------------------------------------- dofs


def n_dofs(mesh: TriangularMesh, order: int) -> int:
    return mesh.n_vertices + (mesh.n_edges if order == 2 else 0)


def element_dofs(mesh: TriangularMesh, order: int) -> np.ndarray:
    if order == 1:
        return mesh.triangles
    if order != 2:
        raise ConfigurationError(f"element order must be 1 or 2, got {order}")
    return np.column_stack([mesh.triangles, mesh.triangle_edges + mesh.n_vertices])


def dof_coordinates(mesh: TriangularMesh, order: int) -> np.ndarray:
    if order == 1:
        return mesh.vertices
    e = mesh.edges
    return np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])])


def edge_dofs(mesh: TriangularMesh, order: int, edges: np.ndarray) -> np.ndarray:
    """Dofs of boundary edges ``(a, b)`` in 1D basis order ``a, b[, midpoint]``."""
    edges = np.asarray(edges).reshape(-1, 2)
    if order == 1:
        return edges
    return np.column_stack([edges, mesh.edge_index(edges) + mesh.n_vertices])


def periodic_master(mesh: TriangularMesh, order: int) -> np.ndarray:
    """Map every dof to its representative; right-side dofs point to left-side ones."""
    master = np.arange(n_dofs(mesh, order))
    pairs = mesh.periodic_pairs
    if len(pairs) == 0:
        return master
    master[pairs[:, 1]] = pairs[:, 0]
    if order == 2:
        partner = dict(zip(pairs[:, 0].tolist(), pairs[:, 1].tolist()))
        left = mesh.tagged_edges(PERIODIC_LEFT)
        if len(left):
            right = np.array([[partner[u], partner[v]] for u, v in left.tolist()])
            nv = mesh.n_vertices
            master[mesh.edge_index(right) + nv] = mesh.edge_index(left) + nv
    # chains (corner vertices) collapse in a couple of passes
    for _ in range(3):
        master = master[master]
    return master


# ---------------------------------------------------------------- fields


@dataclass(frozen=True, eq=False)
class FiniteElementField:
    """Scalar P1/P2 field: vertex values first, then edge-midpoint values (P2)."""

    mesh: TriangularMesh
    order: int
    dofs: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        expected = n_dofs(self.mesh, self.order)
        if len(self.dofs) != expected:
            raise ValueError(f"expected {expected} dofs, got {len(self.dofs)}")

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = locate(self.mesh, points)
        return self._evaluate_local(tri, lam)

    def _evaluate_local(self, tri: np.ndarray, lam: np.ndarray) -> np.ndarray:
        phi = basis_values(self.order, lam)
        return np.einsum("qa,qa->q", phi, self.dofs[element_dofs(self.mesh, self.order)[tri]])

    def gradient(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri, lam = locate(self.mesh, points)
        return self._gradient_local(tri, lam)

    def _gradient_local(self, tri: np.ndarray, lam: np.ndarray) -> np.ndarray:
        geo = _geometry(self.mesh)
        dphi = basis_gradients(self.order, lam[:, None, :], geo.grad_lam[tri])[:, 0]
        coeffs = self.dofs[element_dofs(self.mesh, self.order)[tri]]
        return np.einsum("qad,qa->qd", dphi, coeffs)

    @property
    def coordinates(self) -> np.ndarray:
        return dof_coordinates(self.mesh, self.order)


def interpolate(mesh: TriangularMesh, order: int, func: Callable[[np.ndarray], np.ndarray] | float) -> FiniteElementField:
    coords = dof_coordinates(mesh, order)
    values = func(coords) if callable(func) else np.full(len(coords), float(func))
    return FiniteElementField(mesh, order, np.asarray(values, dtype=float))


_GEOMETRY_CACHE: dict[int, tuple[TriangularMesh, ElementGeometry]] = {}


def _geometry(mesh: TriangularMesh) -> ElementGeometry:
    hit = _GEOMETRY_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    geo = element_geometry(mesh)
    if len(_GEOMETRY_CACHE) > 64:
        _GEOMETRY_CACHE.clear()
    _GEOMETRY_CACHE[id(mesh)] = (mesh, geo)
    return geo


# ---------------------------------------------------------------- point location


class _Locator:
    def __init__(self, mesh: TriangularMesh):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        geo = _geometry(mesh)
        self.grad_lam = geo.grad_lam
        self.tree = cKDTree(p.mean(axis=1))
        self.h = np.linalg.norm(p - p.mean(axis=1, keepdims=True), axis=2).max(axis=1)

    def barycentric(self, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
        d = pts - self.origin[tri]
        g = self.grad_lam[tri]
        l1 = (g[:, 1] * d).sum(axis=1)
        l2 = (g[:, 2] * d).sum(axis=1)
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate(self, pts: np.ndarray, tol: float = 1e-10, k: int = 8):
        n = len(pts)
        tri = np.full(n, -1)
        lam = np.zeros((n, 3))
        best = np.full(n, -np.inf)
        k = min(k, self.mesh.n_triangles)
        _, cand = self.tree.query(pts, k=k)
        cand = cand.reshape(n, k)
        for c in range(k):
            t = cand[:, c]
            todo = best < 0
            if not todo.any():
                break
            lc = self.barycentric(t[todo], pts[todo])
            score = lc.min(axis=1)
            idx = np.flatnonzero(todo)
            better = score > best[idx]
            sel = idx[better]
            tri[sel] = t[todo][better]
            lam[sel] = lc[better]
            best[sel] = score[better]
        miss = np.flatnonzero(best < 0)
        if len(miss):
            self._exhaustive(pts, miss, tri, lam, best)
        dist = -np.minimum(best, 0.0) * self.h[tri]
        bad = dist > tol * max(1.0, self.mesh.width)
        if bad.any():
            where = pts[bad][:5]
            raise EvaluationError(f"{int(bad.sum())} point(s) outside the mesh, e.g. {where.tolist()}")
        return tri, lam

    def _exhaustive(self, pts, idx, tri, lam, best, chunk=256):
        all_t = np.arange(self.mesh.n_triangles)
        for start in range(0, len(idx), chunk):
            sub = idx[start : start + chunk]
            d = pts[sub][:, None, :] - self.origin[None, :, :]
            l1 = (self.grad_lam[None, :, 1] * d).sum(axis=2)
            l2 = (self.grad_lam[None, :, 2] * d).sum(axis=2)
            l0 = 1.0 - l1 - l2
            score = np.minimum(np.minimum(l0, l1), l2)
            j = score.argmax(axis=1)
            r = np.arange(len(sub))
            better = score[r, j] > best[sub]
            s = sub[better]
            tri[s] = all_t[j[better]]
            lam[s] = np.column_stack([l0[r, j], l1[r, j], l2[r, j]])[better]
            best[s] = score[r, j][better]


_LOCATORS: dict[int, _Locator] = {}


def locate(mesh: TriangularMesh, points: np.ndarray, tol: float = 1e-10):
    """Containing triangle and barycentric coordinates for every point.

    Candidates come from a KD-tree on triangle centroids; points not resolved by
    the candidates fall back to an exhaustive search.
    """
    loc = _LOCATORS.get(id(mesh))
    if loc is None or loc.mesh is not mesh:
        if len(_LOCATORS) > 32:
            _LOCATORS.clear()
        loc = _Locator(mesh)
        _LOCATORS[id(mesh)] = loc
    return loc.locate(np.asarray(points, dtype=float), tol=tol)


def evaluate(field: FiniteElementField, points) -> np.ndarray:
    return field.evaluate(points)


# ---------------------------------------------------------------- boundary conditions


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary data attached to a tag.

    ``kind`` is one of ``dirichlet``, ``robin``, ``neumann``, ``periodic`` and
    ``wentzell``. Dirichlet values are constants or callables of the point array;
    Robin coefficients ``a`` (condition ``u = a du/dn_in``) are constants or
    callables of ``x1``; Neumann data ``g = du/dn_out`` are constants or callables
    of the point array.
    """

    tag: str
    kind: str
    value: Any = 0.0
    params: dict = field(default_factory=dict)


def dirichlet(tag: str, value: float | Callable = 0.0) -> BoundaryCondition:
    return BoundaryCondition(tag, "dirichlet", value)


def robin(tag: str, coef: float | Callable) -> BoundaryCondition:
    return BoundaryCondition(tag, "robin", coef)


def neumann(tag: str, flux: float | Callable = 0.0) -> BoundaryCondition:
    return BoundaryCondition(tag, "neumann", flux)


def periodic(tag: str) -> BoundaryCondition:
    return BoundaryCondition(tag, "periodic")


def wentzell(tag: str, epsilon: float, beta_bar: float, gamma_bar: float, C: float) -> BoundaryCondition:
    """``u = eps*bbar*du/dx2 + eps^2/2*gbar*d2u/dx2^2`` in symmetrized weak form."""
    return BoundaryCondition(
        tag, "wentzell", params=dict(epsilon=epsilon, beta_bar=beta_bar, gamma_bar=gamma_bar, C=C)
    )


@dataclass(frozen=True, eq=False)
class LinearSystem:
    matrix: sp.csr_matrix  # reduced to free dofs
    rhs: np.ndarray
    mesh: TriangularMesh
    order: int
    master: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    full_matrix: sp.csr_matrix = field(repr=False, default=None)
    note: str = ""

    @property
    def n_free(self) -> int:
        return len(self.free)

    def reduce(self, load: np.ndarray) -> np.ndarray:
        """Restrict an extra full-numbering load vector to the free dofs."""
        return np.bincount(self.master, weights=load, minlength=len(self.master))[self.free]

    def expand(self, x: np.ndarray) -> np.ndarray:
        u = np.zeros(len(self.master))
        u[self.free] = x
        u[self.fixed] = self.fixed_values
        return u[self.master]


def _values_at(value, points: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(points), dtype=float).reshape(len(points))
    return np.full(len(points), float(value))


def _edge_quadrature(mesh, edges, npts, panels=1):
    """Quadrature on boundary edges: parameters (E, q), points (E, q, 2), weights (E, q)."""
    t, w = line_quadrature(npts)
    if np.ndim(panels) == 0:
        panels = np.full(len(edges), int(panels))
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    pmax = int(panels.max()) if len(panels) else 1
    # pad every edge to pmax panels; surplus panels get zero weight
    k = np.arange(pmax)
    ts = (k[None, :, None] + t[None, None, :]) / panels[:, None, None]
    ws = np.broadcast_to(w[None, None, :], ts.shape) / panels[:, None, None]
    ws = np.where(k[None, :, None] < panels[:, None, None], ws, 0.0)
    ts = np.where(k[None, :, None] < panels[:, None, None], ts, 0.0)
    ts = ts.reshape(len(edges), -1)
    ws = ws.reshape(len(edges), -1) * length[:, None]
    pts = a[:, None, :] + ts[:, :, None] * (b - a)[:, None, :]
    return ts, pts, ws, length


def boundary_load(mesh: TriangularMesh, order: int, tag: str, flux, npts: int | None = None) -> np.ndarray:
    """Load vector ``(g, v)`` over the edges tagged ``tag`` (full dof numbering)."""
    b = np.zeros(n_dofs(mesh, order))
    edges = mesh.tagged_edges(tag)
    if len(edges) == 0:
        return b
    dofs = edge_dofs(mesh, order, edges)
    ts, pts, ws, _ = _edge_quadrature(mesh, edges, npts or 2 * order + 2)
    g = _values_at(flux, pts.reshape(-1, 2)).reshape(ts.shape)
    phi_b = _line_basis(order, ts.ravel()).reshape(ts.shape + (-1,))
    np.add.at(b, dofs.ravel(), np.einsum("eq,eq,eqa->ea", ws, g, phi_b).ravel())
    return b


def _scatter(I, J, V, master, n):
    return sp.coo_matrix((V.ravel(), (master[I.ravel()], master[J.ravel()])), shape=(n, n)).tocsr()


def assemble_poisson(
    mesh: TriangularMesh,
    order: int = 2,
    source: float | Callable = 0.0,
    bcs: list[BoundaryCondition] = (),
    quad_degree: int | None = None,
    robin_panels: float | None = None,
) -> LinearSystem:
    """Assemble ``-lap u = source`` with the given boundary conditions.

    Every boundary tag of the mesh must be covered by exactly one condition, except
    the periodic side tags, which are identified automatically unless a condition
    other than ``periodic`` is attached to them. ``robin_panels`` is the target
    panel length for Robin and Wentzell boundary quadrature (one panel per edge if
    None).
    """
    if order not in (1, 2):
        raise ConfigurationError(f"element order must be 1 or 2, got {order}")
    by_tag: dict[str, BoundaryCondition] = {}
    for bc in bcs:
        if bc.tag in by_tag:
            raise ConfigurationError(f"tag {bc.tag} has more than one boundary condition")
        if bc.kind not in ("dirichlet", "robin", "neumann", "periodic", "wentzell"):
            raise ConfigurationError(f"unknown boundary condition kind {bc.kind!r}")
        by_tag[bc.tag] = bc
    use_periodic = len(mesh.periodic_pairs) > 0 and all(
        by_tag.get(t, periodic(t)).kind == "periodic" for t in (PERIODIC_LEFT, PERIODIC_RIGHT)
    )
    for tag in mesh.tags:
        if tag in (PERIODIC_LEFT, PERIODIC_RIGHT) and use_periodic:
            continue
        if tag not in by_tag:
            raise ConfigurationError(f"boundary tag {tag} is not covered by a boundary condition")
    for tag, bc in by_tag.items():
        if bc.kind == "periodic" and not use_periodic:
            raise ConfigurationError(f"periodic condition on {tag} but the mesh has no periodic pairs")

    ndof = n_dofs(mesh, order)
    master = periodic_master(mesh, order) if use_periodic else np.arange(ndof)
    geo = _geometry(mesh)
    edofs = element_dofs(mesh, order)
    nloc = edofs.shape[1]

    # interior terms
    qdeg = quad_degree if quad_degree is not None else 2 * order + 2
    qp, qw = triangle_quadrature(qdeg)
    lam_ref = _barycentric_ref(qp)
    M = mesh.n_triangles
    lam = np.broadcast_to(lam_ref, (M,) + lam_ref.shape)
    dphi = basis_gradients(order, lam, geo.grad_lam)  # (M, q, a, 2)
    phi = basis_values(order, lam_ref)  # (q, a)
    absdet = np.abs(geo.jac_det)
    wq = qw[None, :] * absdet[:, None]
    Ke = np.einsum("mq,mqad,mqbd->mab", wq, dphi, dphi)
    rows = np.repeat(edofs[:, :, None], nloc, axis=2)
    cols = np.repeat(edofs[:, None, :], nloc, axis=1)
    I_list, J_list, V_list = [rows.ravel()], [cols.ravel()], [Ke.ravel()]

    b = np.zeros(ndof)
    p = mesh.vertices[mesh.triangles]
    xq = np.einsum("qk,mkd->mqd", lam_ref, p)
    if callable(source):
        fq = np.asarray(source(xq.reshape(-1, 2)), dtype=float).reshape(M, -1)
    else:
        fq = np.full((M, len(qw)), float(source))
    be = np.einsum("mq,mq,qa->ma", wq, fq, phi)
    np.add.at(b, edofs.ravel(), be.ravel())

    # boundary terms
    fixed_dofs, fixed_vals = [], []
    coords = dof_coordinates(mesh, order)
    npts = 2 * order + 2
    note = ""
    for tag, bc in by_tag.items():
        edges = mesh.tagged_edges(tag)
        if len(edges) == 0 or bc.kind == "periodic":
            continue
        dofs = edge_dofs(mesh, order, edges)
        if bc.kind == "dirichlet":
            d = np.unique(dofs)
            fixed_dofs.append(d)
            fixed_vals.append(_values_at(bc.value, coords[d]))
            continue
        if bc.kind == "neumann":
            if callable(bc.value) or float(bc.value) != 0.0:
                b += boundary_load(mesh, order, tag, bc.value)
            continue

        panels = 1
        if robin_panels is not None:
            length = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
            panels = np.maximum(1, np.ceil(length / robin_panels - 1e-12)).astype(int)
        ts, pts, ws, length = _edge_quadrature(mesh, edges, 6 if bc.kind == "robin" else npts, panels)
        phi_b = _line_basis(order, ts.ravel()).reshape(ts.shape + (-1,))
        nb = phi_b.shape[-1]
        if bc.kind == "robin":
            coef = bc.value
            a = coef(pts[..., 0].ravel()) if callable(coef) else np.full(pts[..., 0].size, float(coef))
            a = np.asarray(a, dtype=float).reshape(ts.shape)
            active = ws > 0
            if np.any(a[active] <= 0):
                raise CoercivityError(
                    f"Robin coefficient on {tag} must be positive; min {a[active].min():.3g}"
                )
            inv = np.where(active, 1.0 / np.where(active, a, 1.0), 0.0)
            Kb = np.einsum("eq,eq,eqa,eqb->eab", ws, inv, phi_b, phi_b)
        else:  # wentzell
            prm = bc.params
            eps, bb, gb, C = prm["epsilon"], prm["beta_bar"], prm["gamma_bar"], prm["C"]
            if not bb > 0:
                raise CoercivityError(f"Wentzell condition needs beta_bar > 0, got {bb}")
            tang = eps * gb / (2.0 * bb)
            dphi_b = _line_basis_dt(order, ts.ravel()).reshape(ts.shape + (-1,)) / length[:, None, None]
            Kb = np.einsum("eq,eqa,eqb->eab", ws, phi_b, phi_b) / (eps * bb)
            Kb -= tang * np.einsum("eq,eqa,eqb->eab", ws, dphi_b, dphi_b)
            fb = -tang * C * np.einsum("eq,eqa->ea", ws, phi_b)
            np.add.at(b, dofs.ravel(), fb.ravel())
            note = f"wentzell eps={eps:g} beta_bar={bb:g} gamma_bar={gb:g}"
        I_list.append(np.repeat(dofs[:, :, None], nb, axis=2).ravel())
        J_list.append(np.repeat(dofs[:, None, :], nb, axis=1).ravel())
        V_list.append(Kb.ravel())

    A = _scatter(np.concatenate(I_list), np.concatenate(J_list), np.concatenate(V_list), master, ndof)
    rhs = np.bincount(master, weights=b, minlength=ndof)

    if fixed_dofs:
        fd = master[np.concatenate(fixed_dofs)]
        fv = np.concatenate(fixed_vals)
        fixed, first = np.unique(fd, return_index=True)
        fixed_values = fv[first]
    else:
        fixed = np.zeros(0, dtype=np.int64)
        fixed_values = np.zeros(0)
    reps = np.unique(master)
    free = np.setdiff1d(reps, fixed)
    A_ff = A[free][:, free].tocsr()
    b_f = rhs[free] - A[free][:, fixed] @ fixed_values if len(fixed) else rhs[free]
    return LinearSystem(
        matrix=A_ff,
        rhs=np.asarray(b_f),
        mesh=mesh,
        order=order,
        master=master,
        free=free,
        fixed=fixed,
        fixed_values=fixed_values,
        full_matrix=A,
        note=note,
    )


def assemble_wentzell(
    mesh: TriangularMesh,
    order: int,
    C: float,
    epsilon: float,
    beta_bar: float,
    gamma_bar: float,
    wall_tag: str = SMOOTH_BOTTOM,
    top_tag: str = TOP,
) -> LinearSystem:
    """Symmetrized second-order wall law on the smooth cell, zero on the top wall."""
    return assemble_poisson(
        mesh,
        order,
        C,
        [wentzell(wall_tag, epsilon, beta_bar, gamma_bar, C), dirichlet(top_tag, 0.0)],
    )


# ---------------------------------------------------------------- solvers


class SPDFactor:
    """Sparse LDL^T factorization (SuperLU without row pivoting, symmetric ordering).

    All pivots positive is equivalent to the matrix being positive definite.
    """

    def __init__(self, A: sp.spmatrix):
        A = sp.csc_matrix(A)
        try:
            self.lu = spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True)
            )
        except RuntimeError as exc:
            raise IndefiniteFormError(f"factorization failed: {exc}") from exc
        if not np.array_equal(self.lu.perm_r, self.lu.perm_c):
            raise SolverError("symmetric factorization pivoted off the diagonal")
        piv = self.lu.U.diagonal()
        self.n_negative = int((piv <= 0).sum())
        self.min_pivot = float(piv.min()) if len(piv) else 1.0

    @property
    def positive_definite(self) -> bool:
        return self.n_negative == 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.lu.solve(b)


def solve(system: LinearSystem, tol: float = 1e-12, method: str = "auto") -> FiniteElementField:
    """Solve an assembled system and re-expand periodic and Dirichlet dofs."""
    A, b = system.matrix, system.rhs
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if A.shape[0] == 0:
        return FiniteElementField(system.mesh, system.order, system.expand(np.zeros(0)))
    if method == "auto":
        method = "direct" if A.shape[0] < DIRECT_SOLVER_LIMIT else "cg"
    if method == "direct":
        fac = SPDFactor(A)
        if not fac.positive_definite:
            extra = f" ({system.note})" if system.note else ""
            raise IndefiniteFormError(
                f"assembled form is not positive definite: {fac.n_negative} nonpositive pivots{extra}"
            )
        x = fac.solve(b)
        # one step of iterative refinement
        r = b - A @ x
        x = x + fac.solve(r)
    elif method == "cg":
        x = _pcg(A, b, tol)
    else:
        raise ConfigurationError(f"unknown solver method {method!r}")
    bnorm = np.linalg.norm(b)
    res = float(np.linalg.norm(b - A @ x) / bnorm) if bnorm > 0 else 0.0
    return FiniteElementField(system.mesh, system.order, system.expand(x), residual=res)


def _pcg(A, b, tol):
    d = A.diagonal()
    if np.any(d <= 0):
        raise IndefiniteFormError("nonpositive diagonal entry; matrix is not SPD")
    Minv = sp.diags(1.0 / d)
    history: list[float] = []
    bnorm = np.linalg.norm(b) or 1.0

    def cb(xk):
        history.append(float(np.linalg.norm(b - A @ xk) / bnorm))

    maxiter = 20 * A.shape[0]
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=Minv, callback=cb)
    if info != 0:
        raise SolverError(f"CG did not converge in {maxiter} iterations", history)
    return x


def solve_poisson(mesh, order=2, source=0.0, bcs=(), **kw) -> FiniteElementField:
    return solve(assemble_poisson(mesh, order, source, list(bcs), **kw))


# ---------------------------------------------------------------- norms


@dataclass(frozen=True)
class Difference:
    """Pointwise difference of two evaluable functions."""

    a: Any
    b: Any

    def __call__(self, points):
        return _eval_any(self.a, points) - _eval_any(self.b, points)

    def gradient(self, points):
        return _grad_any(self.a, points) - _grad_any(self.b, points)


def _eval_any(f, points, local=None):
    if isinstance(f, FiniteElementField):
        if local is not None and f.mesh is local[0]:
            return f._evaluate_local(local[1], local[2])
        return f.evaluate(points)
    if isinstance(f, Difference):
        return _eval_any(f.a, points, local) - _eval_any(f.b, points, local)
    if callable(f):
        return np.asarray(f(points), dtype=float).reshape(len(points))
    return np.full(len(points), float(f))


def _grad_any(f, points, local=None):
    if isinstance(f, FiniteElementField):
        if local is not None and f.mesh is local[0]:
            return f._gradient_local(local[1], local[2])
        return f.gradient(points)
    if isinstance(f, Difference):
        return _grad_any(f.a, points, local) - _grad_any(f.b, points, local)
    if hasattr(f, "gradient"):
        return np.asarray(f.gradient(points), dtype=float).reshape(len(points), 2)
    if callable(f):
        raise ConfigurationError("H1 seminorm needs an object with a gradient() method")
    return np.zeros((len(points), 2))


def quadrature_points(mesh: TriangularMesh, degree: int):
    """Physical quadrature points, weights and their (triangle, barycentric) labels."""
    qp, qw = triangle_quadrature(degree)
    lam_ref = _barycentric_ref(qp)
    p = mesh.vertices[mesh.triangles]
    x = np.einsum("qk,mkd->mqd", lam_ref, p).reshape(-1, 2)
    w = (np.abs(mesh.areas)[:, None] * 2.0 * qw[None, :]).ravel()
    tri = np.repeat(np.arange(mesh.n_triangles), len(qw))
    lam = np.tile(lam_ref, (mesh.n_triangles, 1))
    return x, w, tri, lam


def norm(f, mesh: TriangularMesh, kind: str = "L2", quad_degree: int | None = None) -> float:
    """L2 norm or H1 seminorm of ``f`` over ``mesh`` by Gaussian quadrature.

    ``f`` may be a field, a :class:`Difference`, a callable of points or a constant.
    Fields living on ``mesh`` itself are evaluated element-locally.
    """
    if quad_degree is None:
        quad_degree = 6
    x, w, tri, lam = quadrature_points(mesh, quad_degree)
    local = (mesh, tri, lam)
    if kind == "L2":
        v = _eval_any(f, x, local)
        return float(np.sqrt(np.dot(w, v * v)))
    if kind == "H1semi":
        g = _grad_any(f, x, local)
        return float(np.sqrt(np.dot(w, (g * g).sum(axis=1))))
    raise ConfigurationError(f"unknown norm kind {kind!r}")


def energy(field: FiniteElementField) -> float:
    return norm(field, field.mesh, "H1semi")


# ---------------------------------------------------------------- field files


def export_field(field: FiniteElementField, path) -> None:
    lines = [
        "walllaw-field v1",
        f"mesh {field.mesh.checksum}",
        f"order {field.order}",
        f"dofs {len(field.dofs)}",
    ]
    lines += [f"{v:.17g}" for v in field.dofs.tolist()]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def import_field(path, mesh: TriangularMesh) -> FiniteElementField:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "walllaw-field v1":
        raise FieldFormatError("line 1: no header")
    try:
        _, checksum = lines[1].split()
        order = int(lines[2].split()[1])
        count = int(lines[3].split()[1])
    except (IndexError, ValueError) as exc:
        raise FieldFormatError(f"malformed field preamble: {exc}") from None
    if checksum != mesh.checksum:
        raise FieldFormatError("mesh checksum mismatch: field was written for a different mesh")
    try:
        values = np.array([float(s) for s in lines[4 : 4 + count]])
    except ValueError as exc:
        raise FieldFormatError(f"bad dof value: {exc}") from None
    if len(values) != count or count != n_dofs(mesh, order):
        raise FieldFormatError(f"expected {n_dofs(mesh, order)} dof values, found {len(values)}")
    return FiniteElementField(mesh, order, values)


def robin_panel_length(epsilon: float, per_period: int = 16) -> float:
    """Boundary quadrature panel length resolving one oscillation period ``2*pi*eps``."""
    return 2 * math.pi * epsilon / per_period
