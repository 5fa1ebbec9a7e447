"""Homogenized elliptic and parabolic problems on the unperforated macro domain."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fem
from .cell import solve_cell
from .fem import QP_BARY, EDGE_PHI, NonConvergenceError
from .geometry import TriangulatedDomain

log = logging.getLogger(__name__)


@dataclass(eq=False)
class DiscreteField:
    mesh: TriangulatedDomain
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("one value per vertex expected")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite nodal values")


@dataclass(eq=False)
class MacroProblem:
    """Homogenized problem data; ``maps`` is a table or an exact linear split."""

    mesh: TriangulatedDomain
    maps: object
    f: Callable
    lam: float
    y_star: float
    u_init: Callable | np.ndarray | None = None
    T: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.dt <= 0:
            raise ValueError("time step must be positive")


@dataclass
class MacroResult:
    field: DiscreteField
    residual: float
    iterations: int
    history: list
    clamp_events: int = 0


def _source_q(p: MacroProblem, ed: fem.ElementData, t: float) -> np.ndarray:
    return np.asarray(p.f(ed.x_q, t), dtype=float) * np.ones(ed.x_q.shape[:2])


class _Assembler:
    """Residual and Jacobian of the homogenized weak form.

    ``mass_shift`` and ``mass_rhs`` add ``|Y*| int (s U - r) Phi``; the
    elliptic problem uses ``s = lambda`` and ``r = f``, implicit Euler adds
    ``1/dt`` and ``U_prev/dt``.
    """

    def __init__(self, p: MacroProblem, shift: float, rhs_q: np.ndarray):
        self.p = p
        self.ed = fem.element_data(p.mesh)
        self.oq = fem.outer_quadrature(p.mesh)
        self.shift = shift
        self.rhs_q = rhs_q
        self.n = p.mesh.n_vertices

    def _eval(self, U):
        ed = self.ed
        grad = fem.gradients(ed, U)
        uq = fem.at_qp(ed, U)
        nt = len(ed.area)
        xi = np.repeat(grad, 3, axis=0)
        ev = self.p.maps.evaluate(xi, uq.ravel())
        return grad, uq, ev, nt

    def residual(self, U, with_jac: bool = False):
        ed, oq, ys = self.ed, self.oq, self.p.y_star
        grad, uq, ev, nt = self._eval(U)
        wq = ed.weights
        a = ev.a.reshape(nt, 3, 2)
        b = ev.b.reshape(nt, 3)
        zeroth = -b + ys * (self.shift * uq - self.rhs_q)
        local = np.einsum("tq,tqd,tid->ti", wq, a, ed.grad) + (wq * zeroth) @ QP_BARY
        R = fem.assemble_vector(ed, local)
        if oq.n:
            ue = fem.at_edge_qp(oq, U)
            gs, dgs = self.p.maps.g_star(ue.ravel())
            gn = np.sum(gs.reshape(oq.n, 2, 2) * oq.normals[:, None, :], axis=-1)
            R -= fem.edge_vector(oq, (oq.weights * gn) @ EDGE_PHI, self.n)
        if not with_jac:
            return R
        da_dxi = ev.da_dxi.reshape(nt, 3, 2, 2)
        da_du = ev.da_du.reshape(nt, 3, 2)
        db_dxi = ev.db_dxi.reshape(nt, 3, 2)
        db_du = ev.db_du.reshape(nt, 3)
        G = ed.grad
        phi = QP_BARY  # phi[q, i]
        K = np.einsum("tq,tid,tqde,tje->tij", wq, G, da_dxi, G)
        K += np.einsum("tq,tid,tqd,qj->tij", wq, G, da_du, phi)
        K -= np.einsum("tq,qi,tqd,tjd->tij", wq, phi, db_dxi, G)
        K += np.einsum("tq,qi,tq,qj->tij", wq, phi, -db_du + ys * self.shift, phi)
        J = fem.assemble_matrix(ed, K)
        if oq.n:
            dgn = np.sum(dgs.reshape(oq.n, 2, 2) * oq.normals[:, None, :], axis=-1)
            Ke = np.einsum("eq,qi,qj->eij", oq.weights * dgn, EDGE_PHI, EDGE_PHI)
            J = J - fem.edge_matrix(oq, Ke, self.n)
        return R, J.tocsr()


def _newton(asm: _Assembler, U0, tol, label, max_iter=60):
    clamp0 = getattr(asm.p.maps, "clamp_events", 0)
    res = fem.newton(
        asm.residual,
        lambda U: asm.residual(U, with_jac=True),
        U0,
        tol,
        max_iter=max_iter,
        label=label,
    )
    clamps = getattr(asm.p.maps, "clamp_events", 0) - clamp0
    return res, clamps


def _initial(p: MacroProblem, guess) -> np.ndarray:
    if guess is None:
        # the first Newton step from zero is the problem frozen at (xi, u) = (0, 0)
        return np.zeros(p.mesh.n_vertices)
    if callable(guess):
        return np.asarray(guess(p.mesh.vertices), dtype=float)
    return np.asarray(guess, dtype=float).copy()


def solve_homogenized_elliptic(p: MacroProblem, tol: float = 1e-10,
                               initial_guess=None) -> MacroResult:
    """P1 Galerkin solution of the homogenized weak form.

    ``int a*(DU,U).DPhi - int b*(DU,U) Phi - int_{dOmega} g*(U).nu Phi
    + |Y*| int (lambda U - f) Phi = 0``.
    """
    ed = fem.element_data(p.mesh)
    asm = _Assembler(p, p.lam, _source_q(p, ed, 0.0))
    res, clamps = _newton(asm, _initial(p, initial_guess), tol, "macro elliptic")
    fld = DiscreteField(p.mesh, res.x, {"lambda": p.lam})
    return MacroResult(fld, res.residual, res.iterations, res.history, clamps)


def macro_residual(p: MacroProblem, U: np.ndarray) -> np.ndarray:
    ed = fem.element_data(p.mesh)
    return _Assembler(p, p.lam, _source_q(p, ed, 0.0)).residual(np.asarray(U, dtype=float))


def solve_homogenized_parabolic(p: MacroProblem, tol: float = 1e-10,
                                snapshot_times=None) -> list[DiscreteField]:
    """Implicit Euler for ``|Y*| dU/dt - div a* - b* + |Y*| lambda U = |Y*| f``.

    ``lambda`` is ``p.lam`` (0 gives the plain parabolic problem). Returns
    snapshots at ``snapshot_times`` (default: every step, including t=0).
    """
    ed = fem.element_data(p.mesh)
    steps = int(round(p.T / p.dt))
    if abs(steps * p.dt - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError("T must be a multiple of dt")
    U = _initial(p, p.u_init)
    want = None if snapshot_times is None else [float(t) for t in snapshot_times]
    out = []

    def keep(k, t, U, iters):
        if want is None or any(abs(t - s) < 1e-9 for s in want):
            out.append(DiscreteField(p.mesh, U.copy(), {"time": t, "step": k,
                                                        "newton_iters": iters}))

    keep(0, 0.0, U, 0)
    for k in range(1, steps + 1):
        t = k * p.dt
        rhs = _source_q(p, ed, t) + fem.at_qp(ed, U) / p.dt
        asm = _Assembler(p, p.lam + 1.0 / p.dt, rhs)
        try:
            res, _ = _newton(asm, U, tol, f"macro step {k}")
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"implicit Euler step {k} (t={t:.6g}) failed: {exc}",
                                      exc.history) from exc
        U = res.x
        keep(k, t, U, res.iterations)
    return out


@dataclass
class UniquenessReport:
    max_distance: float
    iterations: list
    failures: list
    solutions: list

    @property
    def complete(self) -> bool:
        return not self.failures


def random_starts(mesh: TriangulatedDomain, count: int, seed: int, amplitude: float = 5.0):
    """Smooth random initial guesses: a few random Fourier modes plus noise."""
    rng = np.random.default_rng(seed)
    x = mesh.vertices
    starts = []
    for _ in range(count):
        v = rng.normal(0.0, amplitude) * np.ones(len(x))
        for _ in range(4):
            k1, k2 = rng.integers(0, 4, 2)
            v += rng.normal(0.0, amplitude) * np.cos(np.pi * (k1 * x[:, 0] + k2 * x[:, 1])
                                                     + rng.uniform(0, 2 * np.pi))
        v += 0.1 * amplitude * rng.standard_normal(len(x))
        starts.append(v)
    return starts


def l2_distance(mesh: TriangulatedDomain, u: np.ndarray, v: np.ndarray) -> float:
    return fem.l2_norm(fem.element_data(mesh), u - v)


def uniqueness_probe(p: MacroProblem, starts, tol: float = 1e-10) -> UniquenessReport:
    if not len(starts):
        raise ValueError("need at least one start")
    sols, iters, failures = [], [], []
    for k, s in enumerate(starts):
        try:
            r = solve_homogenized_elliptic(p, tol, initial_guess=s)
            sols.append(r.field.values)
            iters.append(r.iterations)
        except NonConvergenceError as exc:
            failures.append((k, str(exc)))
            iters.append(None)
    dist = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            dist = max(dist, l2_distance(p.mesh, sols[i], sols[j]))
    return UniquenessReport(dist, iters, failures, sols)


# ----------------------------------------------------------------------------
# corrector reconstruction


def element_states(U0: DiscreteField) -> tuple[np.ndarray, np.ndarray]:
    """Element-constant gradient and centroid value of a macro field."""
    ed = fem.element_data(U0.mesh)
    return fem.gradients(ed, U0.values), U0.values[ed.triangles].mean(axis=1)


def locate(mesh: TriangulatedDomain, points: np.ndarray):
    """Containing triangle and barycentric coordinates for each point."""
    from matplotlib.tri import Triangulation

    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    finder = tri.get_trifinder()
    k = np.asarray(finder(points[:, 0], points[:, 1]))
    missing = k < 0
    if missing.any():
        # points on the outer boundary can miss by rounding; nudge them inwards
        c = mesh.vertices.mean(axis=0)
        q = points[missing] + 1e-12 * (c - points[missing])
        k[missing] = finder(q[:, 0], q[:, 1])
    if (k < 0).any():
        raise ValueError("points outside the mesh")
    p = mesh.vertices[mesh.triangles[k]]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    lam12 = np.linalg.solve(T, (points - p[:, 0])[..., None])[..., 0]
    bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
    return k, bary


def sample(fld: DiscreteField, points: np.ndarray) -> np.ndarray:
    k, bary = locate(fld.mesh, points)
    return np.sum(fld.values[fld.mesh.triangles[k]] * bary, axis=1)


def split_corrector(split):
    return lambda xi, u: split.corrector(xi, u)


def solved_corrector(cell_mesh, flux, g, tol: float = 1e-10):
    def corr(xi, u):
        return solve_cell(cell_mesh, None, flux, g, xi, u, tol).w

    return corr


def reconstruct_corrector(U0: DiscreteField, fine_mesh: TriangulatedDomain, corrector,
                          frame_corrector=None, threads: int = 1) -> DiscreteField:
    """``U0(x) + eps w(x/eps; DU0_K, U0_K)`` on the fine mesh.

    ``K`` is the macro element containing the fine vertex; ``(DU0_K, U0_K)``
    are its constant gradient and centroid value. ``corrector(xi, u)``
    returns nodal values on the perforated cell mesh. Vertices of the
    unperforated frame cells use ``frame_corrector`` (nodal values on the
    plain cell mesh), the cell problem of an unperforated cell; ``None``
    leaves the frame uncorrected.
    """
    eps = fine_mesh.scale
    cell_mesh = fine_mesh.meta["cell_mesh"]
    plain = fine_mesh.meta["plain_mesh"]
    grads, cvals = element_states(U0)
    k, bary = locate(U0.mesh, fine_mesh.vertices)
    u_fine = np.sum(U0.values[U0.mesh.triangles[k]] * bary, axis=1)
    on_cell = fine_mesh.vertex_on_hole_cell
    if plain is cell_mesh:
        on_cell = np.ones(fine_mesh.n_vertices, dtype=bool)
    ref = fine_mesh.vertex_ref
    w_val = np.zeros(fine_mesh.n_vertices)
    nk = U0.mesh.triangles.shape[0]

    def gather(fn, mask, size):
        used = np.unique(k[mask])
        if not len(used):
            return
        jobs = [(grads[K], float(cvals[K])) for K in used]
        if threads > 1:
            from joblib import Parallel, delayed

            ws = Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(*a) for a in jobs)
        else:
            ws = [fn(*a) for a in jobs]
        W = np.zeros((nk, size))
        W[used] = np.array(ws)
        w_val[mask] = W[k[mask], ref[mask]]

    gather(corrector, on_cell, cell_mesh.n_vertices)
    if frame_corrector is not None:
        gather(frame_corrector, ~on_cell, plain.n_vertices)
    return DiscreteField(fine_mesh, u_fine + eps * w_val, {"eps": eps, "kind": "corrector"})


def memoized(corrector):
    """Cache corrector evaluations by the exact bytes of ``(xi, u)``."""
    cache: dict = {}

    def fn(xi, u):
        key = (np.asarray(xi, dtype=float).tobytes(), float(u))
        if key not in cache:
            cache[key] = corrector(xi, u)
        return cache[key]

    fn.cache = cache
    return fn
