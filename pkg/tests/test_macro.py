import math
import warnings

import numpy as np
import pytest

from perfhom import BoundaryFluxModel, FluxModel, centred, fem, macro_mesh, tile_perforated_domain
from perfhom.cell import EffectiveValues, build_table, solve_linear_split
from perfhom.macro import (
    DiscreteField,
    MacroProblem,
    l2_distance,
    locate,
    macro_residual,
    random_starts,
    reconstruct_corrector,
    sample,
    solve_homogenized_elliptic,
    solve_homogenized_parabolic,
    split_corrector,
    uniqueness_probe,
)


class ConstantTensorMaps:
    """``a* = A xi``, ``b* = 0``, ``g* = 0``: a plain diffusion problem."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)

    def evaluate(self, xi, u):
        xi = np.atleast_2d(xi)
        m = len(xi)
        return EffectiveValues(xi @ self.A.T, np.zeros(m), np.broadcast_to(self.A, (m, 2, 2)),
                               np.zeros((m, 2)), np.zeros((m, 2)), np.zeros(m))

    def g_star(self, u):
        u = np.atleast_1d(u)
        return np.zeros((len(u), 2)), np.zeros((len(u), 2))


def cosprod(x, t=0.0):
    return np.cos(math.pi * x[..., 0]) * np.cos(math.pi * x[..., 1])


def test_constant_solution_reproduced():
    m = macro_mesh(1 / 8)
    p = MacroProblem(m, ConstantTensorMaps(np.eye(2)), lambda x, t: np.full(x.shape[:-1], 6.0),
                     lam=2.0, y_star=0.8)
    r = solve_homogenized_elliptic(p)
    assert np.abs(r.field.values - 3.0).max() < 1e-12
    assert r.iterations <= 2


def test_manufactured_solution_converges_at_second_order():
    # -div(A grad U) + ys lam U = ys f with A = diag(2, 1): U = cos(pi x) cos(pi y)
    A, ys, lam = np.diag([2.0, 1.0]), 0.7, 1.0

    def f(x, t=0.0):
        return (3 * math.pi**2 / ys + lam) * cosprod(x)

    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        m = macro_mesh(h)
        r = solve_homogenized_elliptic(MacroProblem(m, ConstantTensorMaps(A), f, lam, ys))
        errs.append(fem.l2_norm(fem.element_data(m), r.field.values - cosprod(m.vertices)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert rates.min() >= 1.8


def test_negative_lambda_and_bad_step_rejected():
    m = macro_mesh(1 / 4)
    with pytest.raises(ValueError):
        MacroProblem(m, ConstantTensorMaps(np.eye(2)), cosprod, -1.0, 1.0)
    with pytest.raises(ValueError):
        MacroProblem(m, ConstantTensorMaps(np.eye(2)), cosprod, 1.0, 1.0, dt=0.0)


def test_discrete_field_validation():
    m = macro_mesh(1 / 4)
    with pytest.raises(ValueError):
        DiscreteField(m, np.zeros(3))
    with pytest.raises(ValueError):
        DiscreteField(m, np.full(m.n_vertices, np.nan))


# ----------------------------------------------------------------------------
# homogenized problems from cell data


@pytest.fixture(scope="module")
def split_setup(coarse_disk_cell):
    g = centred(BoundaryFluxModel("mixed", "one_plus_cos", "soft_abs"), coarse_disk_cell)
    flux = FluxModel("linear", "aniso_nonsym")
    return solve_linear_split(coarse_disk_cell, None, flux, g), g, flux


def source(x, t=0.0):
    return 5.0 * cosprod(x) + 1.0


def test_split_problem_converges_and_is_a_fixed_point(split_setup, coarse_disk_cell):
    split, _, _ = split_setup
    p = MacroProblem(macro_mesh(1 / 8), split, source, 10.0, coarse_disk_cell.area)
    r = solve_homogenized_elliptic(p)
    assert r.residual < 1e-10
    again = solve_homogenized_elliptic(p, initial_guess=r.field.values)
    assert again.iterations <= 1
    assert np.abs(again.field.values - r.field.values).max() < 1e-12
    assert np.abs(macro_residual(p, r.field.values)).max() < 1e-10


def test_jacobian_matches_difference_quotient(split_setup, coarse_disk_cell, rng):
    from perfhom.macro import _Assembler

    split, _, _ = split_setup
    m = macro_mesh(1 / 4)
    p = MacroProblem(m, split, source, 1.0, coarse_disk_cell.area)
    asm = _Assembler(p, p.lam, np.zeros((len(m.triangles), 3)))
    U = rng.normal(size=m.n_vertices)
    _, J = asm.residual(U, with_jac=True)
    dU = rng.normal(size=m.n_vertices)
    h = 1e-6
    fd = (asm.residual(U + h * dU) - asm.residual(U - h * dU)) / (2 * h)
    assert np.abs(J @ dU - fd).max() < 1e-6


def test_identity_gamma_table_matches_split(coarse_disk_cell):
    g = centred(BoundaryFluxModel("mixed", "one_plus_cos", "identity"), coarse_disk_cell)
    flux = FluxModel("linear", "aniso_nonsym")
    table = build_table(coarse_disk_cell, None, flux, g, 4.0, 4.0, (3, 3))
    m = macro_mesh(1 / 8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = solve_homogenized_elliptic(MacroProblem(m, table, source, 10.0, coarse_disk_cell.area))
    b = solve_homogenized_elliptic(MacroProblem(m, table.linear, source, 10.0,
                                                coarse_disk_cell.area))
    assert l2_distance(m, a.field.values, b.field.values) < 1e-8


def test_parabolic_mass_conserved_without_sources():
    m = macro_mesh(1 / 8)
    p = MacroProblem(m, ConstantTensorMaps(np.diag([1.0, 3.0])), lambda x, t: 0.0 * x[..., 0],
                     0.0, 0.6, u_init=lambda x: 1.0 + cosprod(x), T=0.5, dt=0.05)
    snaps = solve_homogenized_parabolic(p)
    ed = fem.element_data(m)
    masses = [fem.integral(ed, s.values) for s in snaps]
    assert max(abs(v - masses[0]) for v in masses) < 1e-13
    # the P1 interpolant of the initial data carries an O(h^2) mass error
    assert masses[0] == pytest.approx(1.0, abs=1e-2)


def test_parabolic_energy_decreases():
    m = macro_mesh(1 / 8)
    A = np.diag([2.0, 1.0])
    p = MacroProblem(m, ConstantTensorMaps(A), lambda x, t: 0.0 * x[..., 0], 0.5, 0.6,
                     u_init=lambda x: cosprod(x) + np.cos(2 * math.pi * x[..., 0]), T=0.4, dt=0.05)
    ed = fem.element_data(m)
    K = fem.stiffness_matrix(ed, np.broadcast_to(A, (len(m.triangles), 3, 2, 2)))
    M = fem.mass_matrix(ed)
    energy = [s.values @ (K @ s.values) + 0.6 * 0.5 * s.values @ (M @ s.values)
              for s in solve_homogenized_parabolic(p)]
    assert np.all(np.diff(energy) < 0)


def test_parabolic_steady_limit_is_elliptic_solution(split_setup, coarse_disk_cell):
    split, _, _ = split_setup
    m = macro_mesh(1 / 4)
    ys = coarse_disk_cell.area
    ell = solve_homogenized_elliptic(MacroProblem(m, split, source, 2.0, ys))
    p = MacroProblem(m, split, source, 2.0, ys, u_init=np.zeros(m.n_vertices), T=20.0, dt=0.5)
    last = solve_homogenized_parabolic(p, snapshot_times=[20.0])
    assert len(last) == 1
    assert l2_distance(m, last[0].values, ell.field.values) < 1e-6


def test_parabolic_requires_whole_steps():
    m = macro_mesh(1 / 4)
    p = MacroProblem(m, ConstantTensorMaps(np.eye(2)), cosprod, 0.0, 1.0, T=1.0, dt=0.3)
    with pytest.raises(ValueError):
        solve_homogenized_parabolic(p)


def test_uniqueness_probe_collapses(split_setup, coarse_disk_cell):
    split, _, _ = split_setup
    m = macro_mesh(1 / 8)
    p = MacroProblem(m, split, source, 10.0, coarse_disk_cell.area)
    rep = uniqueness_probe(p, random_starts(m, 3, 0, amplitude=1.0))
    assert rep.complete
    assert rep.max_distance < 1e-8
    with pytest.raises(ValueError):
        uniqueness_probe(p, [])


def test_random_starts_are_seeded():
    m = macro_mesh(1 / 4)
    a, b = random_starts(m, 2, 7), random_starts(m, 2, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


# ----------------------------------------------------------------------------
# sampling and reconstruction


def test_locate_and_sample_linear_field(rng):
    m = macro_mesh(1 / 8)
    fld = DiscreteField(m, 2 * m.vertices[:, 0] - m.vertices[:, 1])
    pts = rng.uniform(0, 1, (50, 2))
    pts = np.vstack([pts, [[0.0, 0.0], [1.0, 1.0], [1.0, 0.3]]])
    assert np.allclose(sample(fld, pts), 2 * pts[:, 0] - pts[:, 1], atol=1e-13)
    k, bary = locate(m, pts)
    assert np.all(bary > -1e-12)
    with pytest.raises(ValueError):
        locate(m, np.array([[1.5, 0.5]]))


def test_reconstruction_without_corrector_is_interpolation(disk_cell):
    F = tile_perforated_domain(disk_cell, 4)
    m = macro_mesh(1 / 8)
    fld = DiscreteField(m, 1.0 + m.vertices[:, 0] * m.vertices[:, 1])
    zero_cell = lambda xi, u: np.zeros(disk_cell.n_vertices)  # noqa: E731
    rec = reconstruct_corrector(fld, F, zero_cell)
    assert np.allclose(rec.values, sample(fld, F.vertices), atol=1e-13)
    assert rec.meta["eps"] == pytest.approx(0.25)


def test_reconstruction_adds_scaled_corrector(disk_cell, linear_g, nonsym_flux):
    split = solve_linear_split(disk_cell, None, nonsym_flux, linear_g)
    F = tile_perforated_domain(disk_cell, 4)
    m = macro_mesh(1 / 4)
    # affine U0: one state (xi, u) per element, so the corrector is a per-element lookup
    fld = DiscreteField(m, 0.5 + m.vertices[:, 0] - 2 * m.vertices[:, 1])
    rec = reconstruct_corrector(fld, F, split_corrector(split))
    on = F.vertex_on_hole_cell
    k, _ = locate(m, F.vertices)
    cval = fld.values[m.triangles].mean(axis=1)
    for v in np.flatnonzero(on)[:50]:
        w = split.corrector(np.array([1.0, -2.0]), float(cval[k[v]]))
        base = sample(fld, F.vertices[v:v + 1])[0]
        assert rec.values[v] == pytest.approx(base + 0.25 * w[F.vertex_ref[v]], abs=1e-12)
    # frame vertices stay uncorrected without a frame corrector
    assert np.allclose(rec.values[~on], sample(fld, F.vertices[~on]), atol=1e-13)
