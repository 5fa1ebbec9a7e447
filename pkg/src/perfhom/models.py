"""Microscale flux ``a(xi, y)`` and boundary flux ``g(u, y)``.

Both are built from a small catalog of named closed-form fields so that a
model is fully described by a handful of strings and numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CellGeometry, TriangulatedDomain

TWO_PI = 2.0 * math.pi


class ModelError(ValueError):
    """Unknown catalog entry or inconsistent model parameters."""


class DomainError(ValueError):
    """Boundary flux evaluated away from the hole boundary."""


def wrap(y: np.ndarray) -> np.ndarray:
    """Map points into the reference cell ``[-1/2, 1/2)^2``."""
    y = np.asarray(y, dtype=float)
    return y - np.floor(y + 0.5)


# ----------------------------------------------------------------------------
# coefficient catalog: scalar fields on Y


def _c_const1(y):
    return np.ones(y.shape[:-1])


def _c_const2(y):
    return np.full(y.shape[:-1], 2.0)


def _c_sinprod(y):
    return 2.0 + np.sin(TWO_PI * y[..., 0]) * np.sin(TWO_PI * y[..., 1])


def _c_checker(y):
    return 2.0 + 0.8 * np.tanh(4.0 * np.sin(TWO_PI * y[..., 0]) * np.sin(TWO_PI * y[..., 1]))


# name -> (callable, min over Y, max over Y)
SCALAR_FIELDS = {
    "const1": (_c_const1, 1.0, 1.0),
    "const2": (_c_const2, 2.0, 2.0),
    "sinprod": (_c_sinprod, 1.0, 3.0),
    "checker": (_c_checker, 2.0 - 0.8 * math.tanh(4.0), 2.0 + 0.8 * math.tanh(4.0)),
}

_J = np.array([[0.0, 1.0], [-1.0, 0.0]])
_A0 = np.array([[2.0, 0.6], [-0.4, 1.5]])


def _a_identity(y):
    return np.broadcast_to(np.eye(2), y.shape[:-1] + (2, 2)).copy()


def _a_const_nonsym(y):
    return np.broadcast_to(_A0, y.shape[:-1] + (2, 2)).copy()


def _a_sinprod_iso(y):
    return _c_sinprod(y)[..., None, None] * np.eye(2)


def _aniso_vector(y):
    return np.stack(
        [np.cos(TWO_PI * y[..., 1]), 0.5 + 0.5 * np.sin(TWO_PI * y[..., 0])], axis=-1
    )


def _a_aniso_sym(y):
    v = _aniso_vector(y)
    return np.eye(2) + v[..., :, None] * v[..., None, :]


def _a_aniso_nonsym(y):
    s = 0.5 + 0.3 * np.cos(TWO_PI * y[..., 0])
    return _a_aniso_sym(y) + s[..., None, None] * _J


def _sym_min_eig(a):
    s = 0.5 * (a + np.swapaxes(a, -1, -2))
    return np.linalg.eigvalsh(s)[..., 0]


# name -> (callable, kappa, symmetric); the norm bound is computed lazily
MATRIX_FIELDS = {
    "identity": (_a_identity, 1.0, True),
    "const_nonsym": (_a_const_nonsym, float(_sym_min_eig(_A0)), False),
    "sinprod_iso": (_a_sinprod_iso, 1.0, True),
    "aniso_sym": (_a_aniso_sym, 1.0, True),
    "aniso_nonsym": (_a_aniso_nonsym, 1.0, False),
}

_NORM_CACHE: dict[str, float] = {}


def matrix_norm_bound(name: str) -> float:
    """Max over Y of the spectral norm of a catalog matrix field (1% margin)."""
    if name not in _NORM_CACHE:
        t = (np.arange(201) / 200.0) - 0.5
        yy = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        norms = np.linalg.norm(MATRIX_FIELDS[name][0](yy), ord=2, axis=(-2, -1))
        _NORM_CACHE[name] = float(norms.max()) * 1.01
    return _NORM_CACHE[name]


# ----------------------------------------------------------------------------
# boundary catalog: fields on the hole boundary, parametrised by the angle
# around the hole centre


def _angle_field(fn):
    def field_(y, center):
        d = np.asarray(y) - np.asarray(center)
        return fn(np.arctan2(d[..., 1], d[..., 0]), y)

    return field_


BOUNDARY_FIELDS = {
    "zero": _angle_field(lambda t, y: np.zeros_like(t)),
    "one": _angle_field(lambda t, y: np.ones_like(t)),
    "cos_angle": _angle_field(lambda t, y: np.cos(t)),
    "sin_angle": _angle_field(lambda t, y: np.sin(t)),
    "cos2_angle": _angle_field(lambda t, y: np.cos(2 * t)),
    "sin2_angle": _angle_field(lambda t, y: np.sin(2 * t)),
    "one_plus_cos": _angle_field(lambda t, y: 1.0 + 0.5 * np.cos(t)),
    "mixed": _angle_field(lambda t, y: np.cos(t) + 0.5 * np.sin(2 * t)),
    "y1": _angle_field(lambda t, y: np.asarray(y)[..., 0]),
}


def _gamma_identity(u):
    u = np.asarray(u, dtype=float)
    return u, np.ones_like(u), np.zeros_like(u)


def _gamma_soft_abs(u):
    u = np.asarray(u, dtype=float)
    s = np.sqrt(1.0 + u * u)
    return s, u / s, 1.0 / (s * s * s)


# name -> (callable returning (gamma, gamma', gamma''), Lip(gamma), C8 constant of gamma')
# The C8 constant bounds |gamma'(u)-gamma'(v)| (1+|u|+|v|) / |u-v|; for soft_abs the
# supremum is about 2.13 (see tests/test_models.py for the dense-grid check).
GAMMAS = {
    "identity": (_gamma_identity, 1.0, 0.0),
    "soft_abs": (_gamma_soft_abs, 1.0, 2.25),
}


# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FluxModel:
    """``a(xi, y) = A(y) xi`` (linear) or ``c(y) xi + mu xi / sqrt(1+|xi|^2)``.

    ``kappa`` and the growth constants are metadata; ``None`` picks the
    catalog value.
    """

    kind: str = "linear"
    catalog_field: str = "identity"
    kappa: float | None = None
    mu: float = 0.0
    growth: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.kind == "linear":
            if self.catalog_field not in MATRIX_FIELDS:
                raise ModelError(f"unknown matrix field {self.catalog_field!r}")
        elif self.kind == "monotone_nonlinear":
            if self.catalog_field not in SCALAR_FIELDS:
                raise ModelError(f"unknown scalar field {self.catalog_field!r}")
            if self.mu < 0:
                raise ModelError("mu must be non-negative")
        else:
            raise ModelError(f"unknown flux kind {self.kind!r}")
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.catalog_kappa)
        if self.growth is None:
            object.__setattr__(self, "growth", self._catalog_growth())

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    @property
    def catalog_kappa(self) -> float:
        if self.is_linear:
            return MATRIX_FIELDS[self.catalog_field][1]
        return SCALAR_FIELDS[self.catalog_field][1]

    @property
    def symmetric(self) -> bool:
        return self.is_linear and MATRIX_FIELDS[self.catalog_field][2]

    def _catalog_growth(self):
        if self.is_linear:
            return (1.0, self.catalog_kappa, matrix_norm_bound(self.catalog_field), 1.0)
        cmax = SCALAR_FIELDS[self.catalog_field][2]
        return (1.0, self.catalog_kappa, cmax + self.mu, 1.0)

    def matrix(self, y: np.ndarray) -> np.ndarray:
        """Coefficient matrix ``A(y)`` of the linear kind, shape ``y.shape[:-1] + (2, 2)``."""
        if not self.is_linear:
            raise ModelError("matrix() is only defined for linear fluxes")
        return MATRIX_FIELDS[self.catalog_field][0](wrap(y))

    def coefficient(self, y: np.ndarray) -> np.ndarray:
        return SCALAR_FIELDS[self.catalog_field][0](wrap(y))

    def flux(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorised ``a(xi, y)``; ``xi`` and ``y`` broadcast over leading axes."""
        xi = np.asarray(xi, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_linear:
            return np.einsum("...ij,...j->...i", self.matrix(y), xi)
        c = self.coefficient(y)
        s = np.sqrt(1.0 + np.sum(xi * xi, axis=-1))
        return (c + self.mu / s)[..., None] * xi

    def jacobian(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``d a / d xi`` with shape ``broadcast(xi, y).shape[:-1] + (2, 2)``."""
        xi = np.asarray(xi, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.is_linear:
            a = self.matrix(y)
            return np.broadcast_to(a, np.broadcast_shapes(a.shape, xi.shape[:-1] + (2, 2)))
        c = self.coefficient(y)
        s = np.sqrt(1.0 + np.sum(xi * xi, axis=-1))
        outer = xi[..., :, None] * xi[..., None, :]
        eye = np.eye(2)
        return (c + self.mu / s)[..., None, None] * eye - (self.mu / s**3)[..., None, None] * outer

    def secant(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Frozen coefficient ``K`` with ``a(xi, y) = K xi`` (Picard iteration)."""
        xi = np.asarray(xi, dtype=float)
        if self.is_linear:
            return self.jacobian(xi, y)
        c = self.coefficient(y)
        s = np.sqrt(1.0 + np.sum(xi * xi, axis=-1))
        return (c + self.mu / s)[..., None, None] * np.eye(2)


def evaluate_flux(model: FluxModel, xi, y) -> np.ndarray:
    return model.flux(np.asarray(xi, dtype=float), wrap(y))


@dataclass(frozen=True)
class BoundaryFluxModel:
    """``g(u, y) = (alpha(y) - m_alpha) + (beta(y) - m_beta) gamma(u)`` on the hole boundary."""

    alpha_field: str = "zero"
    beta_field: str = "zero"
    gamma: str = "identity"
    m_alpha: float = 0.0
    m_beta: float = 0.0
    geometry: CellGeometry = field(default_factory=CellGeometry.none)
    constants: tuple[float, float, float, float] | None = None
    boundary: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        for name in (self.alpha_field, self.beta_field):
            if name not in BOUNDARY_FIELDS:
                raise ModelError(f"unknown boundary field {name!r}")
        if self.gamma not in GAMMAS:
            raise ModelError(f"unknown gamma {self.gamma!r}")

    @property
    def center(self):
        return self.geometry.center

    @property
    def is_zero(self) -> bool:
        return self.alpha_field == "zero" and self.beta_field == "zero"

    @property
    def linear_in_u(self) -> bool:
        return self.gamma == "identity"

    def alpha(self, y) -> np.ndarray:
        return BOUNDARY_FIELDS[self.alpha_field](y, self.center) - self.m_alpha

    def beta(self, y) -> np.ndarray:
        return BOUNDARY_FIELDS[self.beta_field](y, self.center) - self.m_beta

    def gamma_values(self, u):
        return GAMMAS[self.gamma][0](u)

    def value(self, u, y) -> np.ndarray:
        gam, _, _ = self.gamma_values(u)
        return self.alpha(y) + self.beta(y) * gam

    def du(self, u, y) -> np.ndarray:
        _, dgam, _ = self.gamma_values(u)
        return self.beta(y) * dgam

    def du2(self, u, y) -> np.ndarray:
        _, _, d2 = self.gamma_values(u)
        return self.beta(y) * d2

    def with_offsets(self, m_alpha: float, m_beta: float) -> "BoundaryFluxModel":
        return replace(self, m_alpha=m_alpha, m_beta=m_beta, constants=None)

    def lipschitz_constants(self, mesh: TriangulatedDomain) -> tuple[float, float, float, float]:
        """Metadata ``(C5, C6, C7, C8)`` from the field maxima on the mesh quadrature."""
        if self.constants is not None:
            return self.constants
        from .fem import hole_quadrature

        q = hole_quadrature(mesh)
        amax = float(np.abs(self.alpha(q.ref_points)).max()) if q.n else 0.0
        bmax = float(np.abs(self.beta(q.ref_points)).max()) if q.n else 0.0
        _, lip, c8 = GAMMAS[self.gamma]
        # small relative margin: the maxima are taken over quadrature points only
        amax, bmax = 1.05 * amax, 1.05 * bmax
        return (bmax * lip, amax + bmax, bmax * lip, bmax * c8)


def evaluate_boundary_flux(model: BoundaryFluxModel, u: float, y, tol: float = 1e-9):
    """Return ``(g(u, y), g'_u(u, y))`` for a point on the hole boundary.

    The boundary is the discrete hole polygon the model was centred on, or
    the exact hole shape for a model not yet bound to a mesh.
    """
    from shapely.geometry import LinearRing, Point

    geom = model.geometry
    y = np.asarray(y, dtype=float)
    if not geom.has_hole:
        raise DomainError("cell has no hole boundary")
    if model.boundary is not None:
        dist = LinearRing(model.boundary).distance(Point(y))
    elif geom.shape == "disk":
        dist = abs(float(np.hypot(*(y - np.asarray(geom.center)))) - geom.size)
    else:
        dist = LinearRing(geom.hole_polygon(1.0)).distance(Point(y))
    if dist > tol:
        raise DomainError(f"point {y.tolist()} is not on the hole boundary (distance {dist:.3g})")
    return float(model.value(u, y)), float(model.du(u, y))


def mean_zero_offsets(g: BoundaryFluxModel, cell_mesh: TriangulatedDomain) -> tuple[float, float]:
    """Surface-quadrature means of ``alpha`` and ``beta`` over ``S cap Y``."""
    from .fem import hole_quadrature

    q = hole_quadrature(cell_mesh)
    if q.n == 0:
        return 0.0, 0.0
    base = replace(g, m_alpha=0.0, m_beta=0.0)
    w = q.weights.ravel()
    total = math.fsum(w)
    m_a = math.fsum(w * base.alpha(q.ref_points).ravel()) / total
    m_b = math.fsum(w * base.beta(q.ref_points).ravel()) / total
    # one correction sweep removes the rounding left by the first pass
    m_a += math.fsum(w * (base.alpha(q.ref_points).ravel() - m_a)) / total
    m_b += math.fsum(w * (base.beta(q.ref_points).ravel() - m_b)) / total
    return m_a, m_b


def centred(g: BoundaryFluxModel, cell_mesh: TriangulatedDomain) -> BoundaryFluxModel:
    """Copy of ``g`` with discrete mean-zero offsets for ``cell_mesh``."""
    poly = cell_mesh.meta.get("hole_polygon")
    g = replace(
        g,
        geometry=cell_mesh.geometry or g.geometry,
        boundary=None if poly is None else tuple(map(tuple, np.asarray(poly).tolist())),
    )
    return g.with_offsets(*mean_zero_offsets(g, cell_mesh))


def surface_mean(g: BoundaryFluxModel, cell_mesh: TriangulatedDomain, u: float) -> float:
    from .fem import hole_quadrature

    q = hole_quadrature(cell_mesh)
    if q.n == 0:
        return 0.0
    return math.fsum((q.weights * g.value(u, q.ref_points)).ravel())


# ----------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    monotonicity_min: float
    growth_ratio_max: float
    coercive_ratio_min: float
    lipschitz_max: float
    dlipschitz_max: float
    g_growth_max: float
    mean_zero_max: float
    kappa: float
    constants: dict
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_assumptions(
    flux: FluxModel,
    g: BoundaryFluxModel,
    sample_count: int,
    seed: int,
    cell_mesh: TriangulatedDomain | None = None,
    box: float = 10.0,
) -> AssumptionReport:
    """Sample the structural assumptions on ``a`` and ``g`` at random points.

    ``y`` for the boundary checks is drawn from the hole-boundary quadrature
    points of ``cell_mesh`` (or the polygon of ``g.geometry``).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = sample_count
    xi = rng.uniform(-box, box, (n, 2))
    zeta = rng.uniform(-box, box, (n, 2))
    y = rng.uniform(-0.5, 0.5, (n, 2))
    kappa = float(flux.kappa)
    c1, c2, c3, c4 = flux.growth
    violations: list[str] = []

    d = xi - zeta
    diff = flux.flux(xi, y) - flux.flux(zeta, y)
    mono = np.sum(diff * d, axis=1) / np.sum(d * d, axis=1)
    k = int(np.argmin(mono))
    if mono[k] < kappa - 1e-9:
        violations.append(
            f"monotonicity: ratio {mono[k]:.6g} < kappa {kappa:.6g} at xi={xi[k].tolist()}, "
            f"zeta={zeta[k].tolist()}, y={y[k].tolist()}"
        )
    a_xi = flux.flux(xi, y)
    nxi = np.linalg.norm(xi, axis=1)
    growth = np.linalg.norm(a_xi, axis=1) / (c3 * nxi + c4)
    k = int(np.argmax(growth))
    if growth[k] > 1.0 + 1e-12:
        violations.append(f"flux growth: |a|/(C3|xi|+C4) = {growth[k]:.6g} at xi={xi[k].tolist()}")
    coer = (np.sum(a_xi * xi, axis=1) + c1) / (c2 * nxi**2)
    k = int(np.argmin(coer))
    if coer[k] < 1.0 - 1e-12:
        violations.append(f"flux coercivity: ratio {coer[k]:.6g} at xi={xi[k].tolist()}")

    mesh = cell_mesh
    lip_max = dlip_max = mz_max = ggrowth = 0.0
    consts = (0.0, 0.0, 0.0, 0.0)
    if mesh is not None and len(mesh.hole_edges):
        from .fem import hole_quadrature

        q = hole_quadrature(mesh)
        ys = q.ref_points.reshape(-1, 2)
        consts = g.lipschitz_constants(mesh)
        c5, c6, c7, c8 = consts
        yb = ys[rng.integers(0, len(ys), n)]
        u = rng.uniform(-box, box, n)
        v = rng.uniform(-box, box, n)
        du = u - v
        lip = np.abs(g.value(u, yb) - g.value(v, yb)) / np.abs(du)
        dlip = np.abs(g.du(u, yb) - g.du(v, yb)) * (1 + np.abs(u) + np.abs(v)) / np.abs(du)
        bound = np.abs(g.value(u, yb)) / (c5 * np.abs(u) + c6) if (c5 + c6) > 0 else np.zeros(n)
        lip_max, dlip_max = float(lip.max()), float(dlip.max())
        if lip_max > c7 + 1e-9:
            k = int(np.argmax(lip))
            violations.append(
                f"g Lipschitz: {lip_max:.6g} > C7 {c7:.6g} at u={u[k]:.6g}, v={v[k]:.6g}, "
                f"y={yb[k].tolist()}"
            )
        if dlip_max > c8 + 1e-9:
            k = int(np.argmax(dlip))
            violations.append(
                f"g derivative Lipschitz: {dlip_max:.6g} > C8 {c8:.6g} at u={u[k]:.6g}, "
                f"v={v[k]:.6g}"
            )
        ggrowth = float(bound.max())
        if ggrowth > 1.0 + 1e-9:
            violations.append(f"g growth: ratio {ggrowth:.6g} > 1")
        for uu in (-10.0, 0.0, 10.0):
            mz_max = max(mz_max, abs(surface_mean(g, mesh, uu)))
        if mz_max >= 1e-13:
            violations.append(f"mean-zero: surface integral {mz_max:.3g}")
    return AssumptionReport(
        monotonicity_min=float(mono.min()),
        growth_ratio_max=float(growth.max()),
        coercive_ratio_min=float(coer.min()),
        lipschitz_max=lip_max,
        dlipschitz_max=dlip_max,
        g_growth_max=ggrowth,
        mean_zero_max=mz_max,
        kappa=kappa,
        constants={"C1": c1, "C2": c2, "C3": c3, "C4": c4, "C5": consts[0],
                   "C6": consts[1], "C7": consts[2], "C8": consts[3]},
        violations=violations,
    )


# ----------------------------------------------------------------------------
# source terms on the macro domain


SOURCE_KINDS = ("zero", "const", "cosprod", "cos1")


@dataclass(frozen=True)
class SourceTerm:
    """``f(x) = amp * shape(x) + shift``; ``shape`` is 1, cos(pi x1)cos(pi x2) or cos(pi x1)."""

    kind: str = "const"
    amp: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ModelError(f"unknown source kind {self.kind!r}")

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            shape = np.zeros(x.shape[:-1])
        elif self.kind == "const":
            shape = np.ones(x.shape[:-1])
        elif self.kind == "cosprod":
            shape = np.cos(math.pi * x[..., 0]) * np.cos(math.pi * x[..., 1])
        else:
            shape = np.cos(math.pi * x[..., 0])
        return self.amp * shape + self.shift
