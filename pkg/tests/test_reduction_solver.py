import math

import numpy as np
import pytest

from bntower.bubbles import BallDomain, ConfigurationInvalidError, TowerConfig, critical_power, pu_profile, u_profile
from bntower.constants import compute_constants
from bntower.radial_core import RadialField, inner_h1
from bntower.reduced_energy import MeshUnresolvedError, critical_d1, critical_d2, energy_direct, functional_j
from bntower.reduction_solver import (
    FitDegenerateError,
    assembled_field,
    bubble_init,
    default_grid,
    fit_concentration,
    minimize_box,
    minimize_reduced,
    nehari_energy_bound,
    nehari_residual,
    nodal_analysis,
    nonlinearity,
    nonlinearity_deriv,
    inner_energy_part,
    outer_energy_part,
    reduced_j,
    reduced_state,
    solve_bvp,
    solve_stage1,
    solve_stage2,
    tower_init,
)

C8 = compute_constants(8, with_quadrature=False)
DOM8 = BallDomain(1.0, 8)


@pytest.fixture(scope="module")
def tower_minimum():
    return minimize_reduced(0.1, N=8)


@pytest.fixture(scope="module")
def tower_solution(tower_minimum):
    grid = default_grid(8, 1.0, tower_minimum.solution.delta2 / 100, 128)
    init = RadialField(grid, assembled_field(tower_minimum.solution)(grid.nodes))
    return solve_bvp(0.1, init)


@pytest.fixture(scope="module")
def positive_solution(tower_solution):
    return solve_bvp(0.1, bubble_init(tower_solution.u.grid, 0.2))


def test_nonlinearity_values():
    p = critical_power(7)
    assert nonlinearity(0.0, p) == 0.0 and nonlinearity_deriv(0.0, p) == 0.0
    assert nonlinearity(-1.0, p) == -1.0
    assert nonlinearity_deriv(-1.0, p) == pytest.approx(p, rel=1e-15)


def test_nonlinearity_derivative_by_differences():
    p = critical_power(7)
    s = np.random.default_rng(3).uniform(-5, 5, 20)
    h = 1e-6 * np.abs(s)
    fd = (nonlinearity(s + h, p) - nonlinearity(s - h, p)) / (2 * h)
    np.testing.assert_allclose(nonlinearity_deriv(s, p), fd, rtol=1e-6)


def test_stage1_manufactured_zero():
    eps, delta = 1e-2, 0.1
    grid = default_grid(7, 1.0, delta / 100)
    p = critical_power(7)

    def source(r):
        pu = pu_profile(r, 7, delta, 1.0)
        return u_profile(r, 7, delta) ** p - nonlinearity(pu, p) - eps * pu

    # with this source the bubble itself solves the equation
    sol = solve_stage1(eps, 1.0, grid, source=source, delta1=delta, tol=1e-10)
    assert sol.converged
    assert sol.norm_phi1 <= 1e-10
    assert abs(sol.multipliers[0]) <= 1e-10


def test_stage1_orthogonality_and_convergence():
    grid = default_grid(7, 1.0, 1e-2 ** (1 / 3) / 100)
    sol = solve_stage1(1e-2, 1.0, grid)
    assert sol.converged and sol.residual_h1 <= 1e-10
    z = sol.kernels[0]
    norm_z = math.sqrt(inner_h1(z, z))
    assert abs(inner_h1(sol.phi1, z)) <= 1e-10 * sol.norm_phi1 * norm_z


def test_stage1_norm_scaling_in_seven_dimensions():
    eps_values = np.geomspace(1e-3, 1e-1, 5)
    norms, sups = [], []
    for eps in eps_values:
        grid = default_grid(7, 1.0, eps ** (1 / 3) / 100)
        sol = solve_stage1(eps, 1.0, grid)
        assert sol.converged
        norms.append(sol.norm_phi1)
        sups.append(sol.phi1.sup_norm() * eps ** (5 / 6))
    assert np.polyfit(np.log(eps_values), np.log(norms), 1)[0] >= 5 / 6
    assert all(b < a for a, b in zip(sups[::-1], sups[::-1][1:]))


def test_stage2_rejects_equal_scales():
    grid = default_grid(8, 1.0, 1e-3)
    s1 = solve_stage1(0.1, 1.0, grid)
    with pytest.raises(ConfigurationInvalidError):
        solve_stage2(0.1, 1.0, 1.0, s1, delta2=s1.delta1)


def test_stage2_rejects_unresolved_scale():
    grid = default_grid(8, 1.0, 1e-3)
    s1 = solve_stage1(0.1, 1.0, grid)
    with pytest.raises(MeshUnresolvedError):
        solve_stage2(0.1, 1.0, 1e-6, s1)


def test_stage2_example():
    eps = 0.1
    grid = default_grid(8, 1.0, eps ** 1.75 / 100)
    s1 = solve_stage1(eps, 1.0, grid)
    s2 = solve_stage2(eps, 1.0, 1.0, s1)
    assert s2.converged and s2.residual_h1 <= 1e-10
    assert s2.norm_phi2 < s2.norm_phi1
    for z in s2.kernels:
        nz = math.sqrt(inner_h1(z, z))
        assert abs(inner_h1(s2.phi2, z)) <= 1e-10 * s2.norm_phi2 * nz


def test_stage_norm_hierarchy_over_eps():
    d1 = critical_d1(C8, DOM8)
    d2 = critical_d2(C8, DOM8, d1)
    ratios = []
    for eps in (0.3, 0.2, 0.1, 0.05):
        grid = default_grid(8, 1.0, d2 * eps ** 1.75 / 100)
        s2 = solve_stage2(eps, d1, d2, solve_stage1(eps, d1, grid))
        assert s2.converged and s2.norm_phi2 < s2.norm_phi1
        ratios.append(s2.ratio)
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_stage1_mesh_independence():
    eps = 0.1
    d1 = critical_d1(C8, DOM8)
    coarse = solve_stage1(eps, d1, default_grid(8, 1.0, 1e-4, 32))
    fine = solve_stage1(eps, d1, default_grid(8, 1.0, 1e-4, 64))
    assert fine.norm_phi1 == pytest.approx(coarse.norm_phi1, rel=1e-2)


def test_reduced_energy_without_remainders_matches_direct():
    eps = 0.1
    grid = default_grid(8, 1.0, eps ** 1.75 / 100)
    mesh = reduced_j(eps, 1.0, 1.0, grid, zero_remainders=True)
    assert mesh == pytest.approx(energy_direct(TowerConfig(8, 1.0, eps, 1.0, 1.0)), rel=1e-4)


def test_reduced_energy_mesh_independence():
    eps = 0.1
    d1 = critical_d1(C8, DOM8)
    d2 = critical_d2(C8, DOM8, d1)
    lo = d2 * eps ** 1.75 / 100
    a = reduced_j(eps, d1, d2, default_grid(8, 1.0, lo, 32))
    b = reduced_j(eps, d1, d2, default_grid(8, 1.0, lo, 64))
    assert b == pytest.approx(a, rel=1e-3)


def test_reduced_energy_remainder_orders():
    d1 = critical_d1(C8, DOM8)
    d2 = critical_d2(C8, DOM8, d1)
    inner, outer = [], []
    for eps in (0.3, 0.2, 0.1, 0.05):
        grid = default_grid(8, 1.0, d2 * eps ** 1.75 / 100)
        s1 = solve_stage1(eps, d1, grid)
        full = reduced_state(eps, d1, d2, grid, stage1=s1)
        no_phi2 = reduced_state(eps, d1, d2, grid, stage1=s1, zero_inner_remainder=True)
        bare = reduced_state(eps, d1, d2, grid, stage1=s1, zero_remainders=True)
        # compare energy parts directly: the phi2 contribution is below roundoff of the total
        inner.append(abs(inner_energy_part(full) - inner_energy_part(no_phi2)) / eps ** C8.theta2)
        diff = outer_energy_part(s1) + inner_energy_part(full) - outer_energy_part(bare) - inner_energy_part(bare)
        outer.append(abs(diff) / eps ** (C8.theta1 + 0.1))
    assert max(inner) <= 1.0
    assert max(outer) <= 10 * min(outer)


def test_minimize_box_quadratic():
    fn = lambda x, y: (x - 0.3) ** 2 + 2 * (y - 0.7) ** 2 + 0.5 * (x - 0.3) * (y - 0.7)
    x, y = minimize_box(fn, ((0.0, 1.0), (0.0, 1.0)))
    assert x == pytest.approx(0.3, abs=1e-8) and y == pytest.approx(0.7, abs=1e-8)


def test_reduced_minimum_is_interior(tower_minimum):
    assert tower_minimum.interior
    assert max(abs(m) for m in tower_minimum.multipliers_at_min) <= 1e-6
    assert tower_minimum.d2_min < tower_minimum.d1_min


def test_reduced_minimum_drifts_to_critical_point():
    target = critical_d1(C8, DOM8)
    dist = [abs(minimize_reduced(eps, N=8).d1_min - target) for eps in (0.3, 0.2, 0.1)]
    assert dist[0] > dist[1] > dist[2]


def test_bvp_zero_guess():
    grid = default_grid(8, 1.0, 1e-3)
    sol = solve_bvp(0.1, RadialField.zeros(grid))
    assert sol.converged and sol.residual_h1 == 0.0
    assert sol.u.sup_norm() == 0.0


def test_bvp_positive_solution(positive_solution):
    sol = positive_solution
    assert sol.converged and sol.sign_changes == 0
    assert sol.nehari_residual <= 1e-8
    assert sol.energy == pytest.approx(C8.S ** 4 / 8, rel=0.01)
    rep = nodal_analysis(sol, 0.1)
    assert rep.nodal_domain_count == 1
    assert (rep.sign_at_sphere1, rep.sign_at_sphere2) == (1, 1)
    assert not rep.inner_negative


def test_bvp_tower_solution(tower_solution, positive_solution):
    sol = tower_solution
    assert sol.converged and sol.sign_changes == 1
    assert sol.u.values[-1] == 0.0 and sol.u.values[0] < 0
    assert sol.nehari_residual <= 1e-8
    assert nehari_energy_bound(sol.u, positive_solution.u, 0.1)
    assert sol.energy == pytest.approx(2 * C8.S ** 4 / 8, rel=0.25)


def test_tower_fit_near_reduced_minimum(tower_solution, tower_minimum):
    s = tower_minimum.solution
    assert tower_solution.fitted_delta1 == pytest.approx(s.delta1, rel=0.2)
    assert tower_solution.fitted_delta2 == pytest.approx(s.delta2, rel=0.2)


def test_tower_matches_assembled_ansatz():
    # the scale direction is nearly flat, so both discretizations need fine meshes to agree
    m = minimize_reduced(0.1, N=8, nodes_per_decade=256)
    grid = default_grid(8, 1.0, m.solution.delta2 / 1000, 256)
    ansatz = RadialField(grid, assembled_field(m.solution)(grid.nodes))
    u = solve_bvp(0.1, ansatz).u
    assert np.max(np.abs(u.values - ansatz.values)) <= 1e-4 * u.sup_norm()


def test_nehari_not_scale_invariant(positive_solution):
    u = positive_solution.u
    assert nehari_residual(RadialField(u.grid, 2 * u.values), 0.1) > 0


def test_nodal_sign_convention():
    grid = default_grid(8, 1.0, 1e-5)
    u = tower_init(grid, 0.5, 1e-3)
    assert nodal_analysis(u, 0.1).inner_negative is True
    assert nodal_analysis(RadialField(grid, -u.values), 0.1).inner_negative is False


def test_nodal_analysis_rejects_large_sphere():
    grid = default_grid(8, 0.5, 1e-4)
    with pytest.raises(ConfigurationInvalidError):
        nodal_analysis(RadialField.zeros(grid), 0.1)


def test_fit_recovers_exact_ansatz():
    grid = default_grid(8, 1.0, 1e-6, 64)
    u = tower_init(grid, 0.3, 1e-3)
    d1, d2 = fit_concentration(u)
    assert d1 == pytest.approx(0.3, rel=1e-6)
    assert d2 == pytest.approx(1e-3, rel=1e-6)


def test_fit_rejects_unseparated_lobes():
    grid = default_grid(8, 1.0, 1e-5, 64)
    with pytest.raises(FitDegenerateError):
        fit_concentration(tower_init(grid, 0.3, 0.2))
    with pytest.raises(FitDegenerateError):
        fit_concentration(bubble_init(grid, 0.3))


def test_functional_at_solution_consistent(positive_solution):
    assert positive_solution.energy == functional_j(positive_solution.u, 0.1)
