"""Direct solves on the tiled perforated domain and two-scale diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem
from .cell import IncompatibilityError, fit_lower_bound
from .fem import EDGE_PHI, QP_BARY, NonConvergenceError
from .geometry import TriangulatedDomain
from .macro import DiscreteField
from .models import BoundaryFluxModel, FluxModel

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FineProblem:
    mesh: TriangulatedDomain
    flux: FluxModel
    g: BoundaryFluxModel
    f: Callable
    lam: float = 50.0
    u_init: Callable | np.ndarray | None = None
    T: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if self.mesh.cell_index is None:
            raise ValueError("fine problems need a tiled mesh")
        n = self.mesh.n_cells
        if abs(self.mesh.scale * n - 1.0) > 1e-14:
            raise ValueError("eps * n must equal 1")
        if len(self.mesh.hole_cell) and not self.mesh.perforated[self.mesh.hole_cell].all():
            raise ValueError("hole edge outside a perforated cell")

    @property
    def eps(self) -> float:
        return self.mesh.scale


def check_surface_mean(mesh: TriangulatedDomain, values_q: np.ndarray, tol: float = 1e-10):
    hq = fem.hole_quadrature(mesh)
    if hq.n == 0:
        return
    per_cell = np.bincount(mesh.hole_cell, weights=(hq.weights * values_q).sum(axis=1))
    worst = float(np.max(np.abs(per_cell))) / mesh.scale
    if worst > tol:
        raise IncompatibilityError(f"surface data is not mean-zero per hole ({worst:.3e})")


class _FineAssembler:
    def __init__(self, p: FineProblem, shift: float, rhs_q: np.ndarray):
        self.p = p
        self.ed = fem.element_data(p.mesh)
        self.hq = fem.hole_quadrature(p.mesh)
        self.shift = shift
        self.rhs_q = rhs_q
        self.n = p.mesh.n_vertices

    def residual(self, u, with_jac: bool = False):
        ed, hq, p = self.ed, self.hq, self.p
        grad = fem.gradients(ed, u)
        grad_q = np.broadcast_to(grad[:, None, :], ed.y_q.shape)
        a = p.flux.flux(grad_q, ed.y_q)
        uq = fem.at_qp(ed, u)
        wq = ed.weights
        local = np.einsum("tq,tqd,tid->ti", wq, a, ed.grad)
        local += (wq * (self.shift * uq - self.rhs_q)) @ QP_BARY
        R = fem.assemble_vector(ed, local)
        if hq.n:
            ue = fem.at_edge_qp(hq, u)
            R -= fem.edge_vector(hq, (hq.weights * p.g.value(ue, hq.ref_points)) @ EDGE_PHI,
                                 self.n)
        if not with_jac:
            return R
        K = fem.stiffness_matrix(ed, p.flux.jacobian(grad_q, ed.y_q))
        M = np.einsum("tq,qi,qj->tij", wq, QP_BARY, QP_BARY) * self.shift
        J = K + fem.assemble_matrix(ed, M)
        if hq.n:
            dg = hq.weights * p.g.du(ue, hq.ref_points)
            Ke = np.einsum("eq,qi,qj->eij", dg, EDGE_PHI, EDGE_PHI)
            J = J - fem.edge_matrix(hq, Ke, self.n)
        return R, J.tocsr()


def _source_q(p: FineProblem, ed, t):
    return np.asarray(p.f(ed.x_q, t), dtype=float) * np.ones(ed.x_q.shape[:2])


def _initial(p: FineProblem, guess):
    if guess is None:
        return np.zeros(p.mesh.n_vertices)
    if callable(guess):
        return np.asarray(guess(p.mesh.vertices), dtype=float)
    return np.asarray(guess, dtype=float).copy()


@dataclass
class FineResult:
    field: DiscreteField
    residual: float
    iterations: int
    history: list


def solve_fine_elliptic(p: FineProblem, tol: float = 1e-10, initial_guess=None) -> FineResult:
    """``int a(Du, x/eps).Dv + lambda u v - int_{S_eps} g(u, x/eps) v = int f v``."""
    if p.lam <= 0:
        raise ValueError("the fine elliptic problem needs lambda > 0")
    hq = fem.hole_quadrature(p.mesh)
    if hq.n:
        check_surface_mean(p.mesh, p.g.value(0.0, hq.ref_points))
        check_surface_mean(p.mesh, p.g.beta(hq.ref_points))
    ed = fem.element_data(p.mesh)
    asm = _FineAssembler(p, p.lam, _source_q(p, ed, 0.0))
    try:
        res = fem.newton(asm.residual, lambda u: asm.residual(u, True),
                         _initial(p, initial_guess), tol, label="fine elliptic")
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"{exc}; try a larger lambda", exc.history) from exc
    return FineResult(DiscreteField(p.mesh, res.x, {"lambda": p.lam, "eps": p.eps}),
                      res.residual, res.iterations, res.history)


def fine_residual(p: FineProblem, u: np.ndarray) -> np.ndarray:
    ed = fem.element_data(p.mesh)
    return _FineAssembler(p, p.lam, _source_q(p, ed, 0.0)).residual(np.asarray(u, float))


def solve_fine_parabolic(p: FineProblem, tol: float = 1e-10,
                         snapshot_times=None) -> list[DiscreteField]:
    """Implicit Euler for ``du/dt + A(u) - G(u) + lambda u = f``.

    Each step is the elliptic problem with the zeroth-order shift
    ``lambda + 1/dt``, which keeps the step operator strongly monotone.
    """
    ed = fem.element_data(p.mesh)
    steps = int(round(p.T / p.dt))
    if abs(steps * p.dt - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError("T must be a multiple of dt")
    u = _initial(p, p.u_init)
    want = None if snapshot_times is None else [float(t) for t in snapshot_times]
    out = []

    def keep(k, t, u, iters):
        if want is None or any(abs(t - s) < 1e-9 for s in want):
            out.append(DiscreteField(p.mesh, u.copy(), {"time": t, "step": k,
                                                        "newton_iters": iters}))

    keep(0, 0.0, u, 0)
    for k in range(1, steps + 1):
        t = k * p.dt
        rhs = _source_q(p, ed, t) + fem.at_qp(ed, u) / p.dt
        asm = _FineAssembler(p, p.lam + 1.0 / p.dt, rhs)
        try:
            res = fem.newton(asm.residual, lambda v: asm.residual(v, True), u, tol,
                             label=f"fine step {k}")
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                f"implicit Euler step {k} (t={t:.6g}) failed: {exc}; try a smaller dt",
                exc.history) from exc
        u = res.x
        keep(k, t, u, res.iterations)
    return out


def mass(mesh: TriangulatedDomain, u: np.ndarray) -> float:
    return fem.integral(fem.element_data(mesh), u)


# ----------------------------------------------------------------------------
# cell averages and the surface functional


@dataclass
class CellAverage:
    cells: np.ndarray  # (n*n,) averages
    on_triangles: np.ndarray  # (nt,)


def cell_average(mesh: TriangulatedDomain, values: np.ndarray,
                 element: bool | None = None) -> CellAverage:
    """Per-cell mean over the solid part of each lattice cell.

    ``values`` may be nodal (one per vertex) or element-constant (one per
    triangle); ``element`` settles the case of equal counts.
    """
    if mesh.cell_index is None:
        raise ValueError("mesh has no cell index")
    ed = fem.element_data(mesh)
    values = np.asarray(values, dtype=float)
    nt = len(ed.area)
    if element is None:
        element = values.shape == (nt,) and values.shape != (mesh.n_vertices,)
    if element and values.shape == (nt,):
        tri_mean = values
    elif not element and values.shape == (mesh.n_vertices,):
        tri_mean = values[ed.triangles].mean(axis=1)
    else:
        raise ValueError("values must be nodal or element-constant")
    nc = mesh.n_cells**2
    ci = mesh.cell_index
    num = np.bincount(ci, weights=ed.area * tri_mean, minlength=nc)
    den = np.bincount(ci, weights=ed.area, minlength=nc)
    cells = num / den
    # element-constant input that is already constant per cell is returned as is
    if element:
        lo = np.full(nc, np.inf)
        hi = np.full(nc, -np.inf)
        np.minimum.at(lo, ci, tri_mean)
        np.maximum.at(hi, ci, tri_mean)
        same = lo == hi
        cells[same] = lo[same]
    return CellAverage(cells, cells[ci])


def surface_functional(q: BoundaryFluxModel, w: np.ndarray, mesh: TriangulatedDomain,
                       x_factor: Callable | None = None) -> float:
    """``b_eps w = int_{S_eps} q(x, x/eps) (w - w_bar) dsigma``.

    The ``y`` profile is ``q.alpha`` (mean-zeroed on the cell mesh); the
    optional ``x_factor(x)`` multiplies it.
    """
    hq = fem.hole_quadrature(mesh)
    if hq.n == 0:
        return 0.0
    qy = q.alpha(hq.ref_points)
    cell_mesh = mesh.meta.get("cell_mesh")
    if cell_mesh is not None:
        cq = fem.hole_quadrature(cell_mesh)
        s = math.fsum((cq.weights * q.alpha(cq.ref_points)).ravel())
        if abs(s) > 1e-12:
            raise IncompatibilityError(f"q is not mean-zero on the cell ({s:.3e})")
    qv = qy if x_factor is None else qy * x_factor(hq.points)
    wbar = cell_average(mesh, w, element=False).cells[mesh.hole_cell]
    diff = fem.at_edge_qp(hq, w) - wbar[:, None]
    return float(np.sum(hq.weights * qv * diff))


# ----------------------------------------------------------------------------
# sampled inequalities


def random_fields(mesh: TriangulatedDomain, count: int, seed: int, modes: int = 6,
                  max_freq: float | None = None, noise: float = 0.1):
    """Random nodal fields: random plane waves up to the cell frequency plus noise."""
    rng = np.random.default_rng(seed)
    x = mesh.vertices
    kmax = max_freq if max_freq is not None else 2.0 * math.pi * max(mesh.n_cells, 1)
    out = []
    for _ in range(count):
        v = rng.normal() * np.ones(len(x))
        for _ in range(modes):
            k = rng.uniform(-kmax, kmax, 2)
            v += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * math.pi))
        v += noise * rng.standard_normal(len(x))
        out.append(v * rng.uniform(0.1, 10.0))
    return out


@dataclass
class PoincareProbe:
    n: int
    constant: float
    samples: int


def poincare_probe(mesh: TriangulatedDomain, count: int = 30, seed: int = 0) -> PoincareProbe:
    """Max over random fields of ``int_{S_eps}|v - v_bar|^2 / (eps int |Dv|^2)``."""
    ed = fem.element_data(mesh)
    hq = fem.hole_quadrature(mesh)
    best = 0.0
    for v in random_fields(mesh, count, seed):
        vbar = cell_average(mesh, v, element=False).cells[mesh.hole_cell]
        lhs = float(np.sum(hq.weights * (fem.at_edge_qp(hq, v) - vbar[:, None]) ** 2))
        rhs = mesh.scale * fem.h1_seminorm(ed, v) ** 2
        best = max(best, lhs / rhs)
    return PoincareProbe(mesh.n_cells, best, count)


def w12_norm(mesh: TriangulatedDomain, v: np.ndarray) -> float:
    ed = fem.element_data(mesh)
    return math.hypot(fem.l2_norm(ed, v), fem.h1_seminorm(ed, v))


@dataclass
class CoercivityProbe:
    kappa1: float
    kappa2: float
    samples: int
    min_ratio: float


def coercivity_probe(p: FineProblem, count: int = 100, seed: int = 0) -> CoercivityProbe:
    """Fit ``<A v + lambda v - G(v), v> >= kappa1 ||v||^2_{W^{1,2}} - kappa2``."""
    ed = fem.element_data(p.mesh)
    asm = _FineAssembler(p, p.lam, np.zeros(ed.x_q.shape[:2]))
    lhs, nrm = [], []
    for v in random_fields(p.mesh, count, seed, max_freq=2 * math.pi * 4):
        lhs.append(float(asm.residual(v) @ v))
        nrm.append(w12_norm(p.mesh, v) ** 2)
    lhs, nrm = np.array(lhs), np.array(nrm)
    k1, k2 = fit_lower_bound(nrm, np.ones_like(nrm), lhs)
    return CoercivityProbe(k1, k2, count, float(np.min(lhs / nrm)))


def boundedness_probe(q: BoundaryFluxModel, mesh: TriangulatedDomain, count: int = 30,
                      seed: int = 0) -> float:
    """Max over random fields of ``|b_eps v| / ||v||_{W^{1,2}}``."""
    best = 0.0
    for v in random_fields(mesh, count, seed):
        best = max(best, abs(surface_functional(q, v, mesh)) / w12_norm(mesh, v))
    return best
