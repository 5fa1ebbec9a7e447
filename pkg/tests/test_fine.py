import math
from dataclasses import replace

import numpy as np
import pytest

from perfhom import (
    BoundaryFluxModel,
    SourceTerm,
    centred,
    fem,
    macro_mesh,
    tile_perforated_domain,
)
from perfhom.cell import IncompatibilityError
from perfhom.fine import (
    FineProblem,
    boundedness_probe,
    cell_average,
    check_surface_mean,
    coercivity_probe,
    fine_residual,
    mass,
    poincare_probe,
    solve_fine_elliptic,
    solve_fine_parabolic,
    surface_functional,
)
from perfhom.macro import l2_distance

from oracles import fine_oracle

def test_fine_solver_matches_dense_oracle(disk_cell, linear_g, nonsym_flux):
    F = tile_perforated_domain(disk_cell, 3)
    f = SourceTerm("cosprod", 5.0, 1.0)
    r = solve_fine_elliptic(FineProblem(F, nonsym_flux, linear_g, f, 20.0))
    ref = fine_oracle(F, nonsym_flux, linear_g, lambda x: float(f(x)), 20.0)
    assert np.abs(r.field.values - ref).max() < 1e-10


def test_nonlinear_fine_solver_matches_dense_newton(coarse_disk_cell, nonlinear_flux):
    g = centred(BoundaryFluxModel("cos_angle", "sin2_angle", "soft_abs"), coarse_disk_cell)
    F = tile_perforated_domain(coarse_disk_cell, 3)
    f = SourceTerm("cosprod", 10.0, 2.0)
    r = solve_fine_elliptic(FineProblem(F, nonlinear_flux, g, f, 10.0))
    ref = fine_oracle(F, nonlinear_flux, g, lambda x: float(f(x)), 10.0)
    assert np.abs(r.field.values - ref).max() < 1e-10


def test_constant_solution_without_boundary_flux(disk_cell, nonlinear_flux):
    F = tile_perforated_domain(disk_cell, 4)
    g = centred(BoundaryFluxModel(), disk_cell)
    r = solve_fine_elliptic(FineProblem(F, nonlinear_flux, g, SourceTerm("const", 3.0), 3.0))
    assert np.abs(r.field.values - 1.0).max() < 1e-12


def test_nonlinear_fine_solve_converges(disk_cell, catalog_g, nonlinear_flux):
    F = tile_perforated_domain(disk_cell, 4)
    p = FineProblem(F, nonlinear_flux, catalog_g, SourceTerm("cosprod", 10.0, 2.0), 10.0)
    r = solve_fine_elliptic(p)
    assert r.residual < 1e-10
    assert np.linalg.norm(fine_residual(p, r.field.values)) < 1e-10


def test_larger_lambda_shrinks_solution(disk_cell, linear_g, sym_flux):
    F = tile_perforated_domain(disk_cell, 4)
    f = SourceTerm("cosprod", 5.0)
    ed = fem.element_data(F)
    norms = [fem.l2_norm(ed, solve_fine_elliptic(FineProblem(F, sym_flux, linear_g, f, lam))
                         .field.values) for lam in (5.0, 20.0, 80.0)]
    assert norms[0] > norms[1] > norms[2]


def test_problem_validation(disk_cell, catalog_g, nonsym_flux):
    with pytest.raises(ValueError):
        FineProblem(macro_mesh(1 / 4), nonsym_flux, catalog_g, SourceTerm())
    F = tile_perforated_domain(disk_cell, 3)
    with pytest.raises(ValueError):
        solve_fine_elliptic(FineProblem(F, nonsym_flux, catalog_g, SourceTerm(), 0.0))


def test_incompatible_boundary_data_rejected(disk_cell, nonsym_flux):
    F = tile_perforated_domain(disk_cell, 3)
    g = replace(BoundaryFluxModel("one_plus_cos", "zero"), geometry=disk_cell.geometry)
    with pytest.raises(IncompatibilityError):
        solve_fine_elliptic(FineProblem(F, nonsym_flux, g, SourceTerm(), 10.0))
    hq = fem.hole_quadrature(F)
    check_surface_mean(F, np.asarray(centred(g, disk_cell).alpha(hq.ref_points)))


# ----------------------------------------------------------------------------
# parabolic


def test_parabolic_mass_balance_without_sources(disk_cell, nonsym_flux):
    F = tile_perforated_domain(disk_cell, 3)
    g = centred(BoundaryFluxModel(), disk_cell)
    p = FineProblem(F, nonsym_flux, g, SourceTerm("zero"), 0.0,
                    u_init=lambda x: np.cos(math.pi * x[:, 0]), T=0.5, dt=0.125)
    snaps = solve_fine_parabolic(p)
    m0 = mass(F, snaps[0].values)
    assert max(abs(mass(F, s.values) - m0) for s in snaps) < 1e-13


def test_parabolic_steady_state_matches_elliptic(disk_cell, linear_g, nonsym_flux):
    F = tile_perforated_domain(disk_cell, 3)
    f = SourceTerm("cosprod", 5.0, 1.0)
    ell = solve_fine_elliptic(FineProblem(F, nonsym_flux, linear_g, f, 2.0))
    p = FineProblem(F, nonsym_flux, linear_g, f, 2.0, T=20.0, dt=0.5)
    last = solve_fine_parabolic(p, snapshot_times=[20.0])[-1]
    assert l2_distance(F, last.values, ell.field.values) < 1e-6


def test_parabolic_requires_whole_steps(disk_cell, linear_g, nonsym_flux):
    F = tile_perforated_domain(disk_cell, 3)
    with pytest.raises(ValueError):
        solve_fine_parabolic(FineProblem(F, nonsym_flux, linear_g, SourceTerm(), 1.0, T=1.0,
                                         dt=0.4))


# ----------------------------------------------------------------------------
# cell averages and the surface functional


def test_cell_averages_of_linear_field(disk_cell):
    F = tile_perforated_domain(disk_cell, 4)
    avg = cell_average(F, F.vertices[:, 0]).cells.reshape(4, 4)
    # row-major cell index: x1 varies fastest
    assert np.allclose(avg, np.tile([1 / 8, 3 / 8, 5 / 8, 7 / 8], (4, 1)), atol=1e-13)


def test_cell_average_is_idempotent(disk_cell, rng):
    F = tile_perforated_domain(disk_cell, 4)
    first = cell_average(F, rng.normal(size=F.n_vertices))
    again = cell_average(F, first.on_triangles, element=True)
    assert np.array_equal(again.cells, first.cells)
    with pytest.raises(ValueError):
        cell_average(F, np.zeros(5))


def test_surface_functional_kills_constants(disk_cell):
    F = tile_perforated_domain(disk_cell, 4)
    q = centred(BoundaryFluxModel("cos_angle", "zero"), disk_cell)
    assert abs(surface_functional(q, np.ones(F.n_vertices), F)) < 1e-15
    assert surface_functional(q, F.vertices[:, 0], F) != 0.0
    bad = replace(BoundaryFluxModel("one_plus_cos", "zero"), geometry=disk_cell.geometry)
    with pytest.raises(IncompatibilityError):
        surface_functional(bad, F.vertices[:, 0], F)


def test_surface_functional_of_linear_field(disk_cell):
    # for w = x1 the functional is the first moment of q on every perforated cell
    n = 4
    F = tile_perforated_domain(disk_cell, n)
    q = centred(BoundaryFluxModel("cos_angle", "zero"), disk_cell)
    cq = fem.hole_quadrature(disk_cell)
    moment = float(np.sum(cq.weights * q.alpha(cq.ref_points) * cq.ref_points[..., 0]))
    expected = F.perforated.sum() * moment / n**2
    assert surface_functional(q, F.vertices[:, 0], F) == pytest.approx(expected, rel=1e-10)


def test_poincare_constant_is_eps_stable(disk_cell):
    # a sampled supremum: the coarsest tilings under-sample the worst fields
    c = [poincare_probe(tile_perforated_domain(disk_cell, n), 30, 0).constant for n in (8, 16)]
    assert 0.5 < c[1] / c[0] < 2.0


def test_fine_operator_is_coercive(disk_cell, catalog_g, nonlinear_flux):
    F = tile_perforated_domain(disk_cell, 4)
    probe = coercivity_probe(FineProblem(F, nonlinear_flux, catalog_g, SourceTerm(), 10.0), 40, 0)
    assert probe.kappa1 > 0


def test_surface_functional_is_bounded(disk_cell):
    q = centred(BoundaryFluxModel("cos_angle", "zero"), disk_cell)
    b = [boundedness_probe(q, tile_perforated_domain(disk_cell, n), 15, 1) for n in (4, 8)]
    assert b[1] < 2.0 * b[0]
