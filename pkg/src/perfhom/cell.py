"""Periodic cell problems on the perforated cell and the effective maps they induce."""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import NonConvergenceError
from .geometry import PeriodicMap, TriangulatedDomain, periodic_pairing
from .models import GAMMAS, BoundaryFluxModel, FluxModel

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
IDENTITY_FLUX = FluxModel("linear", "identity")


class IncompatibilityError(ValueError):
    """Boundary data with nonzero surface mean: the periodic Neumann problem has no solution."""


class UnsupportedModeError(ValueError):
    pass


class TableError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# folded periodic system


@dataclass(eq=False)
class CellContext:
    mesh: TriangulatedDomain
    pairing: PeriodicMap
    ed: fem.ElementData
    hq: fem.EdgeQuadrature
    ndofs: int
    dof: np.ndarray
    P: sp.csr_matrix  # nodal <- folded
    node_weights: np.ndarray  # integral of each hat function
    area: float

    def fold(self, r: np.ndarray) -> np.ndarray:
        return self.P.T @ r

    def unfold(self, z: np.ndarray) -> np.ndarray:
        return z[self.dof]

    def fold_matrix(self, K: sp.spmatrix) -> sp.csr_matrix:
        return (self.P.T @ K @ self.P).tocsr()

    def grounded_solve(self, J: sp.spmatrix, r: np.ndarray) -> np.ndarray:
        """Solve ``J x = r`` with dof 0 held at zero."""
        J = J.tocsr()
        x = np.zeros(self.ndofs)
        if self.ndofs > 1:
            x[1:] = spla.spsolve(J[1:, 1:].tocsc(), r[1:])
        return x

    def pin_mean(self, w: np.ndarray) -> np.ndarray:
        return w - float(self.node_weights @ w) / self.area

    def mean(self, w: np.ndarray) -> float:
        return float(self.node_weights @ w) / self.area


@functools.lru_cache(maxsize=32)
def _context(mesh: TriangulatedDomain, pairing: PeriodicMap) -> CellContext:
    ed = fem.element_data(mesh)
    ndofs, dof = pairing.dof_map(mesh.n_vertices)
    P = sp.csr_matrix(
        (np.ones(mesh.n_vertices), (np.arange(mesh.n_vertices), dof)),
        shape=(mesh.n_vertices, ndofs),
    )
    weights = fem.assemble_vector(ed, np.repeat((ed.area / 3.0)[:, None], 3, axis=1))
    return CellContext(mesh, pairing, ed, fem.hole_quadrature(mesh), ndofs, dof, P,
                       weights, float(ed.area.sum()))


@functools.lru_cache(maxsize=32)
def _pairing(mesh: TriangulatedDomain) -> PeriodicMap:
    return periodic_pairing(mesh)


def cell_context(mesh: TriangulatedDomain, pairing: PeriodicMap | None = None) -> CellContext:
    return _context(mesh, pairing if pairing is not None else _pairing(mesh))


# ----------------------------------------------------------------------------
# residuals


def surface_load(ctx: CellContext, values_q: np.ndarray) -> np.ndarray:
    """Nodal vector ``int_S h phi_v`` for ``h`` given at the hole quadrature points."""
    local = (ctx.hq.weights * values_q) @ fem.EDGE_PHI
    return fem.edge_vector(ctx.hq, local, ctx.mesh.n_vertices)


def _fluxes(ctx, flux, xi, w):
    eta = np.asarray(xi, dtype=float) + fem.gradients(ctx.ed, w)
    return eta, np.broadcast_to(eta[:, None, :], ctx.ed.y_q.shape)


def volume_residual(ctx: CellContext, flux: FluxModel, xi, w) -> np.ndarray:
    _, eta_q = _fluxes(ctx, flux, xi, w)
    a_mean = flux.flux(eta_q, ctx.ed.y_q).mean(axis=1)
    local = ctx.ed.area[:, None] * np.einsum("tkd,td->tk", ctx.ed.grad, a_mean)
    return fem.assemble_vector(ctx.ed, local)


def volume_jacobian(ctx: CellContext, flux: FluxModel, xi, w, secant: bool = False):
    _, eta_q = _fluxes(ctx, flux, xi, w)
    fn = flux.secant if secant else flux.jacobian
    return fem.stiffness_matrix(ctx.ed, fn(eta_q, ctx.ed.y_q))


@dataclass
class CellSolution:
    xi: np.ndarray
    u: float
    w: np.ndarray
    residual_norm: float
    newton_iters: int
    history: list = field(default_factory=list)


def _solve(ctx: CellContext, flux: FluxModel, xi, load: np.ndarray, tol: float,
           w0: np.ndarray | None = None, label: str = "cell") -> CellSolution:
    xi = np.asarray(xi, dtype=float)
    total = math.fsum(load)
    if abs(total) > 1e-10:
        raise IncompatibilityError(
            f"surface data has nonzero mean {total:.3e}; apply mean-zero offsets first"
        )
    load_f = ctx.fold(load)

    def residual(z):
        return ctx.fold(volume_residual(ctx, flux, xi, ctx.unfold(z))) - load_f

    def system(z):
        w = ctx.unfold(z)
        return residual(z), ctx.fold_matrix(volume_jacobian(ctx, flux, xi, w))

    def picard(z):
        w = ctx.unfold(z)
        K = ctx.fold_matrix(volume_jacobian(ctx, flux, xi, w, secant=True))
        # K (xi + grad w_new) balanced against the surface load
        rhs = load_f - ctx.fold(volume_residual_linear_xi(ctx, flux, xi, w))
        return ctx.grounded_solve(K, rhs)

    z0 = np.zeros(ctx.ndofs)
    if w0 is not None:
        z0 = _restrict(ctx, w0)
        z0 = z0 - z0[0]
    res = fem.newton(residual, system, z0, tol, solve=ctx.grounded_solve,
                     picard=None if flux.is_linear else picard, label=label)
    w = ctx.pin_mean(ctx.unfold(res.x))
    return CellSolution(xi.copy(), 0.0, w, res.residual, res.iterations, res.history)


def volume_residual_linear_xi(ctx, flux, xi, w):
    """``int K(xi + grad w) xi . grad phi`` with the frozen secant ``K``."""
    _, eta_q = _fluxes(ctx, flux, xi, w)
    k_mean = flux.secant(eta_q, ctx.ed.y_q).mean(axis=1)
    a = np.einsum("tde,e->td", k_mean, np.asarray(xi, dtype=float))
    local = ctx.ed.area[:, None] * np.einsum("tkd,td->tk", ctx.ed.grad, a)
    return fem.assemble_vector(ctx.ed, local)


def _restrict(ctx: CellContext, w: np.ndarray) -> np.ndarray:
    z = np.zeros(ctx.ndofs)
    z[ctx.dof] = w
    return z


def solve_cell(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    flux: FluxModel,
    g: BoundaryFluxModel,
    xi,
    u: float,
    tol: float = DEFAULT_TOL,
    w0: np.ndarray | None = None,
) -> CellSolution:
    """Corrector ``w(.; xi, u)``: periodic, mean zero over the perforated cell."""
    ctx = cell_context(cell_mesh, pairing)
    load = surface_load(ctx, g.value(u, ctx.hq.ref_points)) if ctx.hq.n else np.zeros(
        cell_mesh.n_vertices)
    sol = _solve(ctx, flux, xi, load, tol, w0, label=f"cell xi={list(np.ravel(xi))} u={u}")
    sol.u = float(u)
    return sol


# ----------------------------------------------------------------------------
# effective maps


def effective_a(sol: CellSolution, flux: FluxModel, cell_mesh: TriangulatedDomain) -> np.ndarray:
    ed = fem.element_data(cell_mesh)
    eta = sol.xi + fem.gradients(ed, sol.w)
    a = flux.flux(np.broadcast_to(eta[:, None, :], ed.y_q.shape), ed.y_q).mean(axis=1)
    return np.sum(ed.area[:, None] * a, axis=0)


def surface_b(w: np.ndarray, g: BoundaryFluxModel, cell_mesh: TriangulatedDomain, u: float) -> float:
    """``int_S g'_u(u, y) w dsigma``."""
    hq = fem.hole_quadrature(cell_mesh)
    if hq.n == 0:
        return 0.0
    return float(np.sum(hq.weights * g.du(u, hq.ref_points) * fem.at_edge_qp(hq, w)))


def effective_b(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    flux: FluxModel,
    g: BoundaryFluxModel,
    xi,
    u: float,
    mode: str = "tangent",
    solution: CellSolution | None = None,
    tol: float = DEFAULT_TOL,
) -> float:
    """``b*(xi, u)``; ``mode`` only matters to the macro Jacobian and is validated here."""
    if mode not in ("fd", "tangent"):
        raise UnsupportedModeError(f"unknown mode {mode!r}")
    if solution is None:
        solution = solve_cell(cell_mesh, pairing, flux, g, xi, u, tol)
    return surface_b(solution.w, g, cell_mesh, u)


def surface_moments(g: BoundaryFluxModel, cell_mesh: TriangulatedDomain,
                    origin=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """``(int_S alpha (y - origin), int_S beta (y - origin))`` so that ``g* = G_a + gamma(u) G_b``."""
    hq = fem.hole_quadrature(cell_mesh)
    if hq.n == 0:
        return np.zeros(2), np.zeros(2)
    y = hq.ref_points
    yy = y - np.asarray(origin, dtype=float)
    ga = np.sum((hq.weights * g.alpha(y))[..., None] * yy, axis=(0, 1))
    gb = np.sum((hq.weights * g.beta(y))[..., None] * yy, axis=(0, 1))
    return ga, gb


def effective_g(g: BoundaryFluxModel, cell_mesh: TriangulatedDomain, u: float,
                origin=(0.0, 0.0)) -> np.ndarray:
    """``g*(u) = int_{S cap Y} g(u, y) y dsigma`` (``y`` shifted by ``origin``)."""
    hq = fem.hole_quadrature(cell_mesh)
    if hq.n == 0:
        return np.zeros(2)
    y = hq.ref_points
    vals = hq.weights * g.value(u, y)
    return np.sum(vals[..., None] * (y - np.asarray(origin, dtype=float)), axis=(0, 1))


# ----------------------------------------------------------------------------
# linear split


@dataclass
class EffectiveValues:
    a: np.ndarray  # (m, 2)
    b: np.ndarray  # (m,)
    da_dxi: np.ndarray  # (m, 2, 2)
    da_du: np.ndarray  # (m, 2)
    db_dxi: np.ndarray  # (m, 2)
    db_du: np.ndarray  # (m,)


@dataclass
class LinearSplit:
    """Correctors and tensors of a linear flux with ``g = alpha + beta gamma(u)``.

    ``w(xi, u) = xi_k w1[k] + gamma(u) w2 + w3``; the tensors follow from
    volume integrals (``B_hom``, ``C_hom``, ``D_hom``) and from surface
    integrals (``Hb``, ``Cs``, ``Ds``). Testing each corrector equation
    against the other correctors gives ``Hb = B_hom - E2``, ``Cs = C_hom``
    and ``Ds = D_hom``.
    """

    w1: np.ndarray  # (2, nv)
    w2: np.ndarray
    w3: np.ndarray
    A_hom: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    B_hom: np.ndarray
    C_hom: float
    D_hom: float
    Hb: np.ndarray
    Cs: float
    Ds: float
    G_alpha: np.ndarray
    G_beta: np.ndarray
    gamma: str
    residuals: tuple = ()

    def gamma_values(self, u):
        return GAMMAS[self.gamma][0](u)

    def corrector(self, xi, u: float) -> np.ndarray:
        gam, _, _ = self.gamma_values(u)
        return xi[0] * self.w1[0] + xi[1] * self.w1[1] + float(gam) * self.w2 + self.w3

    def evaluate(self, xi: np.ndarray, u: np.ndarray) -> EffectiveValues:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        gam, dgam, d2gam = self.gamma_values(u)
        a = xi @ self.A_hom.T + gam[:, None] * self.E2 + self.E3
        inner = xi @ self.Hb + gam * self.Cs + self.Ds
        b = dgam * inner
        m = len(u)
        return EffectiveValues(
            a=a,
            b=b,
            da_dxi=np.broadcast_to(self.A_hom, (m, 2, 2)).copy(),
            da_du=dgam[:, None] * self.E2,
            db_dxi=dgam[:, None] * self.Hb,
            db_du=d2gam * inner + dgam * dgam * self.Cs,
        )

    def g_star(self, u):
        gam, dgam, _ = self.gamma_values(np.atleast_1d(np.asarray(u, dtype=float)))
        return (self.G_alpha + gam[:, None] * self.G_beta, dgam[:, None] * self.G_beta)

    @property
    def b_volume(self) -> np.ndarray:
        """Coefficient of ``xi`` in ``b*`` from the volume route (``B_hom - E2``)."""
        return self.B_hom - self.E2


def solve_linear_split(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    flux: FluxModel,
    g: BoundaryFluxModel,
    tol: float = DEFAULT_TOL,
) -> LinearSplit:
    if not flux.is_linear:
        raise UnsupportedModeError("the linear split needs a linear flux")
    ctx = cell_context(cell_mesh, pairing)
    ed = ctx.ed
    nv = cell_mesh.n_vertices
    zero = np.zeros(nv)
    sols = [_solve(ctx, flux, e, zero, tol, label="split w1") for e in np.eye(2)]
    y = ctx.hq.ref_points
    load_b = surface_load(ctx, g.beta(y)) if ctx.hq.n else zero
    load_a = surface_load(ctx, g.alpha(y)) if ctx.hq.n else zero
    s2 = _solve(ctx, flux, np.zeros(2), load_b, tol, label="split w2")
    s3 = _solve(ctx, flux, np.zeros(2), load_a, tol, label="split w3")
    w1 = np.stack([s.w for s in sols])

    A_q = flux.matrix(ed.y_q).mean(axis=1)  # (nt, 2, 2)

    def flux_of(grad):
        return np.einsum("tij,tj->ti", A_q, grad)

    def vol(v):
        return np.sum(ed.area[:, None] * v, axis=0)

    g1 = [np.eye(2)[k] + fem.gradients(ed, w1[k]) for k in range(2)]
    g2 = fem.gradients(ed, s2.w)
    g3 = fem.gradients(ed, s3.w)
    A_hom = np.column_stack([vol(flux_of(g1[k])) for k in range(2)])
    f2 = flux_of(g2)
    E2 = vol(f2)
    E3 = vol(flux_of(g3))
    B_hom = np.array([float(np.sum(ed.area * np.sum(f2 * g1[k], axis=1))) for k in range(2)])
    C_hom = float(np.sum(ed.area * np.sum(f2 * g2, axis=1)))
    D_hom = float(np.sum(ed.area * np.sum(f2 * g3, axis=1)))

    def sb(w):
        if ctx.hq.n == 0:
            return 0.0
        return float(np.sum(ctx.hq.weights * g.beta(y) * fem.at_edge_qp(ctx.hq, w)))

    Hb = np.array([sb(w1[0]), sb(w1[1])])
    ga, gb = surface_moments(g, cell_mesh)
    return LinearSplit(
        w1=w1, w2=s2.w, w3=s3.w, A_hom=A_hom, E2=E2, E3=E3, B_hom=B_hom, C_hom=C_hom,
        D_hom=D_hom, Hb=Hb, Cs=sb(s2.w), Ds=sb(s3.w), G_alpha=ga, G_beta=gb, gamma=g.gamma,
        residuals=tuple(s.residual_norm for s in (*sols, s2, s3)),
    )


# ----------------------------------------------------------------------------
# Theta problem


@dataclass
class ThetaSolution:
    u: float
    theta: np.ndarray
    grad_norm: float
    residual_norm: float


def grad_l2(cell_mesh: TriangulatedDomain, w: np.ndarray) -> float:
    return fem.h1_seminorm(fem.element_data(cell_mesh), w)


def solve_theta(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    g: BoundaryFluxModel,
    u: float,
    derivative: bool = False,
    tol: float = DEFAULT_TOL,
) -> ThetaSolution:
    """Harmonic periodic ``Theta`` with normal derivative ``g(u, .)`` (or ``g'_u``) on the hole."""
    ctx = cell_context(cell_mesh, pairing)
    y = ctx.hq.ref_points
    if ctx.hq.n == 0:
        load = np.zeros(cell_mesh.n_vertices)
    else:
        load = surface_load(ctx, g.du(u, y) if derivative else g.value(u, y))
    sol = _solve(ctx, IDENTITY_FLUX, np.zeros(2), load, tol, label="theta")
    return ThetaSolution(float(u), sol.w, grad_l2(cell_mesh, sol.w), sol.residual_norm)


@dataclass
class ThetaReport:
    us: list
    grad_norms: list
    ratio1: list
    bound1: float
    ratio2_max: float
    bound2: float
    ratio3_max: float
    bound3: float
    beta_norm: float

    @property
    def passed(self) -> bool:
        return (max(self.ratio1) <= self.bound1 and self.ratio2_max <= self.bound2
                and self.ratio3_max <= self.bound3)


def theta_bounds(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    g: BoundaryFluxModel,
    us=(0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0),
) -> ThetaReport:
    """Sampled growth, Lipschitz and derivative-Lipschitz ratios of ``D Theta``.

    The admissible bounds come from the structure ``g = alpha + beta gamma(u)``:
    differences of ``D Theta`` are multiples of the ``beta`` response, whose
    norm times the Lipschitz constants of ``gamma`` and ``gamma'`` bound the
    ratios.
    """
    ed = fem.element_data(cell_mesh)
    sols = {u: solve_theta(cell_mesh, pairing, g, u) for u in us}
    dsols = {u: solve_theta(cell_mesh, pairing, g, u, derivative=True) for u in us}
    beta_norm = _beta_response_norm(cell_mesh, pairing, g)
    norms = [sols[u].grad_norm for u in us]
    ratio1 = [n / (abs(u) + 1.0) for n, u in zip(norms, us)]
    r0 = sols[us[0]].grad_norm / (abs(us[0]) + 1.0)
    _, lip, c8 = GAMMAS[g.gamma]
    r2 = r3 = 0.0
    for i, u in enumerate(us):
        for v in us[i + 1:]:
            d = abs(u - v)
            r2 = max(r2, fem.h1_seminorm(ed, sols[u].theta - sols[v].theta) / d)
            r3 = max(r3, fem.h1_seminorm(ed, dsols[u].theta - dsols[v].theta)
                     * (1 + abs(u) + abs(v)) / d)
    slack = 1.0 + 1e-6
    return ThetaReport(list(us), norms, ratio1, 2.0 * r0, r2, lip * beta_norm * slack + 1e-12,
                       r3, c8 * beta_norm * slack + 1e-12, beta_norm)


def _beta_response_norm(cell_mesh, pairing, g) -> float:
    ctx = cell_context(cell_mesh, pairing)
    if ctx.hq.n == 0:
        return 0.0
    load = surface_load(ctx, g.beta(ctx.hq.ref_points))
    sol = _solve(ctx, IDENTITY_FLUX, np.zeros(2), load, DEFAULT_TOL, label="theta beta")
    return grad_l2(cell_mesh, sol.w)


# ----------------------------------------------------------------------------
# effective table


@dataclass
class EffectiveTable:
    """Nodal values of ``a*``, ``b*`` on a tensor grid in ``(xi1, xi2, u)``.

    Queries are interpolated trilinearly (bilinear in ``xi``, linear in
    ``u``); queries outside the box are extrapolated linearly from the edge
    cell with a warning, so values and slopes stay consistent.
    ``g*`` is exact: it only needs the two surface moments of ``alpha`` and
    ``beta``.
    """

    xi_grid: np.ndarray
    u_grid: np.ndarray
    a: np.ndarray  # (nx, nx, nu, 2)
    b: np.ndarray  # (nx, nx, nu)
    g: np.ndarray  # (nu, 2)
    G_alpha: np.ndarray
    G_beta: np.ndarray
    gamma: str
    linear: LinearSplit | None = None
    clamp_events: int = 0
    node_residuals: np.ndarray | None = None

    @property
    def shape(self):
        return self.b.shape

    def g_star(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        gam, dgam, _ = GAMMAS[self.gamma][0](u)
        return self.G_alpha + gam[:, None] * self.G_beta, dgam[:, None] * self.G_beta

    def _locate(self, grid, x):
        n = len(grid)
        lo, hi = grid[0], grid[-1]
        out = (x < lo) | (x > hi)
        i = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, n - 2)
        dx = grid[i + 1] - grid[i]
        t = (x - grid[i]) / dx
        return i, t, dx, out

    def interpolate(self, xi: np.ndarray, u: np.ndarray) -> EffectiveValues:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        i1, t1, d1, o1 = self._locate(self.xi_grid, xi[:, 0])
        i2, t2, d2, o2 = self._locate(self.xi_grid, xi[:, 1])
        iu, tu, du, ou = self._locate(self.u_grid, u)
        outside = o1 | o2 | ou
        n_out = int(outside.sum())
        if n_out:
            self.clamp_events += n_out
            warnings.warn(f"{n_out} table queries outside the box were extrapolated", RuntimeWarning,
                          stacklevel=2)
        vals = np.concatenate([self.a, self.b[..., None]], axis=-1)  # (nx, nx, nu, 3)
        m = len(u)
        f = np.zeros((m, 3))
        g1 = np.zeros((m, 3))
        g2 = np.zeros((m, 3))
        gu = np.zeros((m, 3))
        for c1 in (0, 1):
            w1 = t1 if c1 else 1 - t1
            s1 = 1.0 if c1 else -1.0
            for c2 in (0, 1):
                w2 = t2 if c2 else 1 - t2
                s2 = 1.0 if c2 else -1.0
                for cu in (0, 1):
                    wu = tu if cu else 1 - tu
                    su = 1.0 if cu else -1.0
                    v = vals[i1 + c1, i2 + c2, iu + cu]
                    f += (w1 * w2 * wu)[:, None] * v
                    g1 += (s1 * w2 * wu)[:, None] * v
                    g2 += (w1 * s2 * wu)[:, None] * v
                    gu += (w1 * w2 * su)[:, None] * v
        g1 = g1 / d1[:, None]
        g2 = g2 / d2[:, None]
        gu = gu / du[:, None]
        da_dxi = np.stack([g1[:, :2], g2[:, :2]], axis=-1)
        return EffectiveValues(f[:, :2], f[:, 2], da_dxi, gu[:, :2],
                               np.column_stack([g1[:, 2], g2[:, 2]]), gu[:, 2])

    def evaluate(self, xi, u) -> EffectiveValues:
        return self.interpolate(xi, u)

    # -- serialization ----------------------------------------------------

    def save_csv(self, path) -> None:
        fmt = lambda x: f"{float(x):.17g}"  # noqa: E731
        lines = [
            "# effective table",
            "# grid xi " + " ".join(map(fmt, self.xi_grid)),
            "# grid u " + " ".join(map(fmt, self.u_grid)),
            f"# gamma {self.gamma}",
            "# G_alpha " + " ".join(map(fmt, self.G_alpha)),
            "# G_beta " + " ".join(map(fmt, self.G_beta)),
        ]
        if self.linear is not None:
            L = self.linear
            lines += [
                "# tensors",
                "# A_hom " + " ".join(map(fmt, L.A_hom.ravel())),
                "# E2 " + " ".join(map(fmt, L.E2)),
                "# E3 " + " ".join(map(fmt, L.E3)),
                "# B_hom " + " ".join(map(fmt, L.B_hom)),
                f"# C_hom {fmt(L.C_hom)}",
                f"# D_hom {fmt(L.D_hom)}",
                "# Hb " + " ".join(map(fmt, L.Hb)),
                f"# Cs {fmt(L.Cs)}",
                f"# Ds {fmt(L.Ds)}",
            ]
        lines.append("# xi1 xi2 u a1 a2 b g1 g2")
        nx, nu = len(self.xi_grid), len(self.u_grid)
        for i in range(nx):
            for j in range(nx):
                for k in range(nu):
                    row = (self.xi_grid[i], self.xi_grid[j], self.u_grid[k], *self.a[i, j, k],
                           self.b[i, j, k], *self.g[k])
                    lines.append(" ".join(map(fmt, row)))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load_csv(cls, path) -> "EffectiveTable":
        meta: dict[str, list[str]] = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if len(parts) >= 2 and parts[0] == "grid":
                        meta["grid_" + parts[1]] = parts[2:]
                    elif parts:
                        meta[parts[0]] = parts[1:]
                else:
                    rows.append([float(x) for x in line.split()])
        xg = np.array([float(x) for x in meta["grid_xi"]])
        ug = np.array([float(x) for x in meta["grid_u"]])
        data = np.array(rows).reshape(len(xg), len(xg), len(ug), 8)
        vec = lambda key: np.array([float(x) for x in meta[key]])  # noqa: E731
        linear = None
        if "tensors" in meta:
            linear = LinearSplit(
                w1=np.zeros((2, 0)), w2=np.zeros(0), w3=np.zeros(0),
                A_hom=vec("A_hom").reshape(2, 2), E2=vec("E2"), E3=vec("E3"), B_hom=vec("B_hom"),
                C_hom=float(vec("C_hom")[0]), D_hom=float(vec("D_hom")[0]), Hb=vec("Hb"),
                Cs=float(vec("Cs")[0]), Ds=float(vec("Ds")[0]), G_alpha=vec("G_alpha"),
                G_beta=vec("G_beta"), gamma=meta["gamma"][0],
            )
        return cls(xg, ug, data[..., 3:5], data[..., 5], data[0, 0, :, 6:8], vec("G_alpha"),
                   vec("G_beta"), meta["gamma"][0], linear)


def _table_line(cell_mesh, pairing, flux, g, xi, u_grid, tol):
    out_a = np.empty((len(u_grid), 2))
    out_b = np.empty(len(u_grid))
    res = np.empty(len(u_grid))
    w0 = None
    for k, u in enumerate(u_grid):
        try:
            sol = solve_cell(cell_mesh, pairing, flux, g, xi, u, tol, w0=w0)
        except (NonConvergenceError, IncompatibilityError) as exc:
            raise TableError(f"cell solve failed at xi={list(xi)}, u={u}: {exc}") from exc
        out_a[k] = effective_a(sol, flux, cell_mesh)
        out_b[k] = surface_b(sol.w, g, cell_mesh, u)
        res[k] = sol.residual_norm
        w0 = sol.w
    return out_a, out_b, res


def build_table(
    cell_mesh: TriangulatedDomain,
    pairing: PeriodicMap | None,
    flux: FluxModel,
    g: BoundaryFluxModel,
    xi_box: float = 10.0,
    u_box: float = 10.0,
    resolutions: tuple[int, int] = (9, 9),
    tol: float = DEFAULT_TOL,
    threads: int = 1,
) -> EffectiveTable:
    """Tabulate ``a*`` and ``b*`` by one cell solve per grid node.

    Each ``(xi1, xi2)`` line is solved sequentially over ``u`` with warm
    starts, so results do not depend on how lines are scheduled.
    """
    nx, nu = resolutions
    if nx < 2 or nu < 2:
        raise TableError("each grid needs at least two nodes")
    pairing = pairing if pairing is not None else _pairing(cell_mesh)
    xg = np.linspace(-xi_box, xi_box, nx)
    ug = np.linspace(-u_box, u_box, nu)
    jobs = [(i, j) for i in range(nx) for j in range(nx)]

    def run(ij):
        i, j = ij
        return _table_line(cell_mesh, pairing, flux, g, np.array([xg[i], xg[j]]), ug, tol)

    if threads > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=threads, prefer="threads")(delayed(run)(ij) for ij in jobs)
    else:
        results = [run(ij) for ij in jobs]
    a = np.empty((nx, nx, nu, 2))
    b = np.empty((nx, nx, nu))
    res = np.empty((nx, nx, nu))
    for (i, j), (la, lb, lr) in zip(jobs, results):
        a[i, j], b[i, j], res[i, j] = la, lb, lr
    ga, gb = surface_moments(g, cell_mesh)
    gam = GAMMAS[g.gamma][0](ug)[0]
    gnodes = ga[None, :] + gam[:, None] * gb[None, :]
    linear = solve_linear_split(cell_mesh, pairing, flux, g, tol) if flux.is_linear else None
    return EffectiveTable(xg, ug, a, b, gnodes, ga, gb, g.gamma, linear, node_residuals=res)


# ----------------------------------------------------------------------------
# property probes


def fit_lower_bound(p: np.ndarray, q: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Largest-on-average ``(alpha, r)`` with ``d_k >= alpha p_k - r q_k`` and ``r >= 0``.

    Solved as a linear program maximizing ``alpha mean(p) - r mean(q)``, i.e.
    the bound that is tightest on average over the samples.
    """
    from scipy.optimize import linprog

    p, q, d = (np.asarray(v, dtype=float) for v in (p, q, d))
    res = linprog(
        c=[-p.mean(), q.mean()],
        A_ub=np.column_stack([p, -q]),
        b_ub=d,
        bounds=[(None, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"bound fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


@dataclass
class MonotonicityFit:
    alpha: float
    r: float
    samples: int
    min_slack: float


def fit_astar_monotonicity(a_fn, n_samples: int, seed: int, xi_box: float,
                           u_box: float) -> MonotonicityFit:
    """Fit ``(a*(xi,u) - a*(zeta,v)).(xi-zeta) >= alpha|xi-zeta|^2 - r(u-v)^2``.

    ``a_fn(xi, u)`` maps ``(m, 2)`` and ``(m,)`` arrays to ``(m, 2)`` values of
    ``a*``, from a table (``maps.evaluate(xi, u).a``) or from direct cell solves.
    """
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-xi_box, xi_box, (n_samples, 2))
    zeta = rng.uniform(-xi_box, xi_box, (n_samples, 2))
    u = rng.uniform(-u_box, u_box, n_samples)
    v = rng.uniform(-u_box, u_box, n_samples)
    d = xi - zeta
    lhs = np.sum((a_fn(xi, u) - a_fn(zeta, v)) * d, axis=1)
    p = np.sum(d * d, axis=1)
    q = (u - v) ** 2
    alpha, r = fit_lower_bound(p, q, lhs)
    return MonotonicityFit(alpha, r, n_samples, float(np.min(lhs - alpha * p + r * q)))


def direct_astar(cell_mesh, flux, g, tol: float = DEFAULT_TOL):
    """``a*`` by one cell solve per query point."""

    def a_fn(xi, u):
        return np.array([effective_a(solve_cell(cell_mesh, None, flux, g, x, float(uu), tol),
                                     flux, cell_mesh) for x, uu in zip(xi, u)])

    return a_fn


def fit_table_coercivity(table: EffectiveTable) -> tuple[float, float]:
    """Fit ``a*(xi,u).xi >= gamma|xi|^2 - C(|u|^2+1)`` over the grid nodes."""
    X1, X2, U = np.meshgrid(table.xi_grid, table.xi_grid, table.u_grid, indexing="ij")
    xi = np.stack([X1, X2], axis=-1)
    lhs = np.sum(table.a * xi, axis=-1).ravel()
    return fit_lower_bound(np.sum(xi * xi, axis=-1).ravel(), (U**2 + 1).ravel(), lhs)
