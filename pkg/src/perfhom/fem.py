"""P1 finite element plumbing shared by the cell, macro and fine solvers."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import TriangulatedDomain

log = logging.getLogger(__name__)

# interior 3-point rule (degree 2), barycentric coordinates per point
QP_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
QW = np.full(3, 1 / 3)
# 2-point Gauss on an edge, parameter t in [0, 1]
GAUSS_T = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
EDGE_PHI = np.column_stack([1.0 - GAUSS_T, GAUSS_T])


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(eq=False)
class ElementData:
    triangles: np.ndarray
    area: np.ndarray
    grad: np.ndarray  # (nt, 3, 2) basis gradients
    x_q: np.ndarray  # (nt, 3, 2) physical quadrature points
    y_q: np.ndarray  # (nt, 3, 2) cell-frame quadrature points
    n: int

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights, shape (nt, 3)."""
        return self.area[:, None] * QW[None, :]


@dataclass(eq=False)
class EdgeQuadrature:
    edges: np.ndarray
    points: np.ndarray  # (ne, 2, 2)
    ref_points: np.ndarray  # (ne, 2, 2)
    weights: np.ndarray  # (ne, 2)
    normals: np.ndarray  # (ne, 2) outward unit normals

    @property
    def n(self) -> int:
        return len(self.edges)


@functools.lru_cache(maxsize=64)
def element_data(mesh: TriangulatedDomain) -> ElementData:
    tri = mesh.triangles
    p = mesh.vertices[tri]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = np.empty((len(tri), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    # gradients of barycentric coordinates: rows of inv for lambda_1, lambda_2
    g1 = inv[:, 0, :]
    g2 = inv[:, 1, :]
    grad = np.stack([-(g1 + g2), g1, g2], axis=1)
    x_q = np.einsum("qk,tkd->tqd", QP_BARY, p)
    y_q = np.einsum("qk,tkd->tqd", QP_BARY, mesh.ref_vertices())
    return ElementData(tri, 0.5 * det, grad, x_q, y_q, mesh.n_vertices)


def _edge_quad(vertices, edges, ref, scale) -> EdgeQuadrature:
    if len(edges) == 0:
        z = np.zeros((0, 2, 2))
        return EdgeQuadrature(np.zeros((0, 2), dtype=np.int64), z, z, np.zeros((0, 2)),
                              np.zeros((0, 2)))
    a = vertices[edges[:, 0]]
    b = vertices[edges[:, 1]]
    pts = a[:, None, :] + GAUSS_T[None, :, None] * (b - a)[:, None, :]
    ra, rb = ref[:, 0], ref[:, 1]
    rpts = ra[:, None, :] + GAUSS_T[None, :, None] * (rb - ra)[:, None, :]
    ref_len = np.linalg.norm(rb - ra, axis=1)
    w = np.repeat((0.5 * scale * ref_len)[:, None], 2, axis=1)
    d = b - a
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    return EdgeQuadrature(edges, pts, rpts, w, normals)


@functools.lru_cache(maxsize=64)
def hole_quadrature(mesh: TriangulatedDomain) -> EdgeQuadrature:
    """Quadrature on the hole boundary; weights are ``scale`` times cell-frame lengths."""
    ref = mesh.hole_ref if mesh.hole_ref is not None else mesh.vertices[mesh.hole_edges]
    return _edge_quad(mesh.vertices, mesh.hole_edges, ref, mesh.scale)


@functools.lru_cache(maxsize=64)
def outer_quadrature(mesh: TriangulatedDomain) -> EdgeQuadrature:
    e = mesh.outer_edges
    return _edge_quad(mesh.vertices, e, mesh.vertices[e], 1.0)


# ----------------------------------------------------------------------------
# assembly


def assemble_vector(ed: ElementData, local: np.ndarray) -> np.ndarray:
    return np.bincount(ed.triangles.ravel(), weights=local.ravel(), minlength=ed.n)


def assemble_matrix(ed: ElementData, local: np.ndarray) -> sp.csr_matrix:
    tri = ed.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(ed.n, ed.n))


def edge_vector(q: EdgeQuadrature, local: np.ndarray, n: int) -> np.ndarray:
    if q.n == 0:
        return np.zeros(n)
    return np.bincount(q.edges.ravel(), weights=local.ravel(), minlength=n)


def edge_matrix(q: EdgeQuadrature, local: np.ndarray, n: int) -> sp.csr_matrix:
    if q.n == 0:
        return sp.csr_matrix((n, n))
    rows = np.repeat(q.edges, 2, axis=1).ravel()
    cols = np.tile(q.edges, (1, 2)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def gradients(ed: ElementData, u: np.ndarray) -> np.ndarray:
    """Element-constant gradient of a nodal field, shape (nt, 2)."""
    return np.einsum("tk,tkd->td", u[ed.triangles], ed.grad)


def at_qp(ed: ElementData, u: np.ndarray) -> np.ndarray:
    return u[ed.triangles] @ QP_BARY.T


def at_edge_qp(q: EdgeQuadrature, u: np.ndarray) -> np.ndarray:
    return u[q.edges] @ EDGE_PHI.T


def mass_matrix(ed: ElementData) -> sp.csr_matrix:
    local = (ed.area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    return assemble_matrix(ed, local)


def stiffness_matrix(ed: ElementData, coeff_q: np.ndarray | None = None) -> sp.csr_matrix:
    """``int K grad phi_j . grad phi_i`` with ``K`` given at the three quadrature points."""
    if coeff_q is None:
        k_mean = np.broadcast_to(np.eye(2), (len(ed.area), 2, 2))
    else:
        k_mean = coeff_q.mean(axis=1)
    local = ed.area[:, None, None] * np.einsum("tid,tde,tje->tij", ed.grad, k_mean, ed.grad)
    return assemble_matrix(ed, local)


def integral(ed: ElementData, u: np.ndarray) -> float:
    return float(np.sum(ed.area * u[ed.triangles].mean(axis=1)))


def l2_norm(ed: ElementData, u: np.ndarray) -> float:
    return float(np.sqrt(max(u @ (mass_matrix(ed) @ u), 0.0)))


def h1_seminorm(ed: ElementData, u: np.ndarray) -> float:
    g = gradients(ed, u)
    return float(np.sqrt(np.sum(ed.area * np.sum(g * g, axis=1))))


# ----------------------------------------------------------------------------
# damped Newton


@dataclass
class NewtonResult:
    x: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)  # (iter, residual, damping)


def newton(
    residual,
    system,
    x0: np.ndarray,
    tol: float,
    solve=None,
    picard=None,
    max_iter: int = 60,
    max_halvings: int = 10,
    label: str = "newton",
) -> NewtonResult:
    """Damped Newton iteration with Armijo backtracking.

    ``system(x)`` returns ``(r, J)``; ``residual(x)`` returns ``r`` only.
    ``picard(x)`` (optional) returns a frozen-coefficient update used when
    backtracking fails to reduce the residual.
    """
    solve = solve or (lambda J, r: spla.spsolve(J.tocsc(), r))
    x = np.array(x0, dtype=float)
    r, J = system(x)
    norm = float(np.linalg.norm(r))
    history = [(0, norm, 1.0)]
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NonConvergenceError(
                f"{label}: no convergence after {max_iter} iterations (residual {norm:.3e})",
                history,
            )
        it += 1
        dx = -solve(J, r)
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            x_new = x + t * dx
            r_new = residual(x_new)
            n_new = float(np.linalg.norm(r_new))
            if np.isfinite(n_new) and n_new <= (1.0 - 1e-4 * t) * norm:
                accepted = True
                break
            t *= 0.5
        if not accepted and picard is not None:
            x_new = picard(x)
            r_new = residual(x_new)
            n_new = float(np.linalg.norm(r_new))
            accepted = np.isfinite(n_new) and n_new < norm
            t = 0.0
        if not accepted:
            if norm < 1e3 * tol and n_new <= 2.0 * norm:
                # rounding floor reached just above tol
                log.debug("%s: stopping at rounding floor %.3e", label, norm)
                break
            raise NonConvergenceError(
                f"{label}: stagnation at iteration {it} (residual {norm:.3e})", history
            )
        x = x_new
        r, J = system(x)
        norm = float(np.linalg.norm(r))
        history.append((it, norm, t))
    return NewtonResult(x, norm, it, history)
