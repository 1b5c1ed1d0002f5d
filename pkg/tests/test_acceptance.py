import math

import numpy as np
import pytest

from bntower.bubbles import BallDomain, Bubble, TowerConfig, bubble_height, harmonic_correction
from bntower.constants import compute_constants, sobolev_identity
from bntower.radial_core import RadialField
from bntower.reduced_energy import (
    LEMMAS,
    critical_d1,
    critical_d2,
    energy_diff_d2,
    error_norm_r1,
    expansion_terms,
    g1,
    g2,
    inequality_ratio_max,
    interaction_integral,
    r2_surrogate,
    single_bubble_terms,
)
from bntower.radial_core import build_grid
from bntower.reduction_solver import (
    assembled_field,
    bubble_init,
    default_grid,
    minimize_reduced,
    nehari_energy_bound,
    nodal_analysis,
    solve_bvp,
    solve_stage1,
    solve_stage2,
)

C7 = compute_constants(7)
C8 = compute_constants(8)
UNIT7 = BallDomain(1.0, 7)
UNIT8 = BallDomain(1.0, 8)


def slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def test_criterion_01_constants_oracle(criterion):
    c = criterion(1, "constants: quadrature vs Beta closed forms, a3 = 2 a1", 1.0)
    for n in range(7, 13):
        k = compute_constants(n)
        worst = max(k.discrepancies.values())
        c.check(worst <= 1e-10, f"N={n} max quad/closed discrepancy {worst:.2e} <= 1e-10")
        gap = abs(k.a3 / (2 * k.a1) - 1)
        c.check(gap <= 1e-13, f"N={n} |a3/(2 a1) - 1| = {gap:.2e} <= 1e-13")
    c.finish()


def test_criterion_02_sobolev_identity(criterion):
    c = criterion(2, "gradient and L^(p+1) integrals of the unit bubble equal S^(N/2)", 1.0)
    grad, lp, target = sobolev_identity(7)
    c.check(abs(grad / target - 1) <= 1e-6, f"gradient {grad:.10g} vs {target:.10g}")
    c.check(abs(lp / target - 1) <= 1e-6, f"L^(p+1) {lp:.10g} vs {target:.10g}")
    c.check(abs(C7.S - 23.65) < 0.01, f"S = {C7.S:.6f}")
    c.finish()


def test_criterion_03_projection_expansion(criterion):
    c = criterion(3, "harmonic correction minus its leading term decays like delta^((N+2)/2)", 1.0)
    deltas = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    for n in (7, 8):
        dom = BallDomain(1.0, n)
        gaps = [abs(harmonic_correction(Bubble(n, d), dom)
                    - bubble_height(n) * d ** ((n - 2) / 2) * dom.robin_at_center) for d in deltas]
        s = slope(deltas, gaps)
        c.check(abs(s - (n + 2) / 2) <= 0.05, f"N={n} slope {s:.4f} vs {(n + 2) / 2}")
    c.finish()


def test_criterion_04_single_bubble_coefficients(criterion):
    c = criterion(4, "single-bubble excess and mass coefficients", 10.0)
    for d in (1e-2, 3e-3, 1e-3):
        t = single_bubble_terms(d, 0.1, C7, UNIT7)
        r1 = t["energy_excess"] / d ** 5 / (C7.a1 * UNIT7.robin_at_center)
        r2 = t["mass_term"] / (0.1 * d * d) / C7.a2
        c.check(abs(r1 - 1) <= 0.05, f"delta={d:g} excess ratio {r1:.5f} within 5%")
        c.check(abs(r2 - 1) <= 0.02, f"delta={d:g} mass ratio {r2:.5f} within 2%")
    c.finish()


def test_criterion_05_interaction_coefficient(criterion):
    c = criterion(5, "interaction integral tends to a3 on balls of radius 1 and 2", 10.0)
    for R in (1.0, 2.0):
        dom = BallDomain(R, 7)
        for ratio in (1e-3, 1e-4):
            d1 = 0.05 * R
            out = interaction_integral(d1, ratio * d1, C7, dom)
            rel = out["ratio"] / C7.a3
            c.check(abs(rel - 1) <= 0.05, f"R={R:g} d2/d1={ratio:g} ratio/a3 = {rel:.5f}")
    c.finish()


def test_criterion_06_expansion_residual_decay(criterion):
    c = criterion(6, "residual after G1, scaled by eps^theta1, decays at the outer critical point", 30.0)
    d1 = critical_d1(C7, UNIT7)
    c.check(abs(d1 - 0.170) < 5e-4, f"critical d1 = {d1:.5f}")
    scaled = []
    for eps in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
        rep = expansion_terms(TowerConfig(7, 1.0, eps, d1, 1.0), C7, UNIT7)
        scaled.append(rep.residual_after_g1 / eps ** C7.theta1)
    mags = [abs(v) for v in scaled]
    g = abs(g1(d1, C7, UNIT7))
    c.check(decreasing(mags), "magnitudes strictly decreasing: " + ", ".join(f"{v:.4g}" for v in scaled))
    c.check(mags[-1] < 0.1 * g, f"last {mags[-1]:.4g} < 10% of |G1| = {g:.4g}")
    c.finish()


def test_criterion_07_differenced_energy(criterion):
    c = criterion(7, "d2-differenced energy against eps^theta2 * Delta G2", 30.0)
    for eps in (0.1, 0.15, 0.2, 0.25, 0.3):
        cfg = TowerConfig(7, 1.0, eps, 1.0, 1.0)
        model = eps ** C7.theta2 * (g2(1.0, 1.0, C7, UNIT7) - g2(1.0, 2.0, C7, UNIT7))
        ratio = energy_diff_d2(cfg, 2.0) / model
        c.check(0.5 <= ratio <= 1.5, f"eps={eps:g} ratio {ratio:.4f} in [0.5, 1.5]")
    c.finish()


def test_criterion_08_error_norm_scaling(criterion):
    c = criterion(8, "projected error norm slopes", 60.0)
    eps = np.geomspace(1e-3, 1e-1, 9)
    norms = []
    for e in eps:
        grid = build_grid(7, 1.0, e ** C7.alpha1 / 100, 32, 64)
        norms.append(error_norm_r1(e, 1.0, C7, UNIT7, grid).norm_projected)
    s = slope(eps, norms)
    c.check(s >= C7.theta1 / 2, f"R1 slope {s:.4f} >= {C7.theta1 / 2:.4f}")
    eps = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    s = slope(eps, [r2_surrogate(e, 1.0, 1.0, C8, UNIT8) for e in eps])
    c.check(s >= C8.theta2 / 2, f"R2 surrogate slope {s:.4f} >= {C8.theta2 / 2:.4f}")
    c.finish()


def test_criterion_09_split_remainder(criterion):
    c = criterion(9, "two-stage remainder hierarchy at N = 8", 300.0)
    d1 = critical_d1(C8, UNIT8)
    d2 = critical_d2(C8, UNIT8, d1)
    eps = [0.3, 0.2, 0.1, 0.05]
    n1, ratios, sups = [], [], []
    for e in eps:
        grid = default_grid(8, 1.0, d2 * e ** C8.alpha2 / 100)
        s1 = solve_stage1(e, d1, grid)
        s2 = solve_stage2(e, d1, d2, s1)
        c.check(s1.converged and s2.converged, f"eps={e:g} both stages converged")
        n1.append(s1.norm_phi1)
        ratios.append(s2.ratio)
        sups.append(s1.phi1.sup_norm() * e ** 0.75)
    s = slope(eps, n1)
    c.check(s >= C8.theta1 / 2, f"phi1 slope {s:.4f} >= {C8.theta1 / 2}")
    c.check(decreasing(ratios), "ratio strictly decreasing: " + ", ".join(f"{r:.3g}" for r in ratios))
    c.check(decreasing(sups), "scaled sup norm decreasing: " + ", ".join(f"{v:.3g}" for v in sups))
    c.finish()


def test_criterion_10_end_to_end_tower(criterion):
    c = criterion(10, "end-to-end sign-changing solution at N = 8, eps = 0.1", 300.0)
    eps = 0.1
    m = minimize_reduced(eps, N=8)
    c.check(m.interior, f"interior minimizer d1={m.d1_min:.5g} d2={m.d2_min:.5g}")
    big = max(abs(v) for v in m.multipliers_at_min)
    c.check(big <= 1e-6, f"max |multiplier| {big:.2e} <= 1e-6")
    grid = default_grid(8, 1.0, m.solution.delta2 / 100, 128)
    tower = solve_bvp(eps, RadialField(grid, assembled_field(m.solution)(grid.nodes)))
    c.check(tower.converged, f"Newton converged in {tower.newton_iterations} iterations")
    rep = nodal_analysis(tower, eps)
    c.check(rep.nodal_domain_count == 2, f"nodal domains {rep.nodal_domain_count} == 2")
    c.check(rep.sign_at_sphere1 == 1, f"sign at eps^(1/4): {rep.sign_at_sphere1} == +1")
    c.check(rep.sign_at_sphere2 == -1, f"sign at eps^(7/4): {rep.sign_at_sphere2} == -1")
    c.check(tower.nehari_residual <= 1e-8, f"Nehari residual {tower.nehari_residual:.2e}")
    positive = solve_bvp(eps, bubble_init(grid, 0.2))
    c.check(positive.converged and positive.sign_changes == 0, "positive solution found")
    c.check(nehari_energy_bound(tower.u, positive.u, eps),
            f"J(u) = {tower.energy:.6g} < 3 J(u_pos) = {3 * positive.energy:.6g}")
    target = 2 * C8.S ** 4 / 8
    c.check(abs(tower.energy / target - 1) <= 0.25, f"energy {tower.energy:.6g} within 25% of {target:.6g}")
    c.finish()


def test_criterion_11_scaling_exponents(criterion):
    c = criterion(11, "fitted concentration scales follow eps^(1/4) and eps^(7/4)", 600.0)
    eps = np.array([0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
    fitted = []
    for e in eps:
        m = minimize_reduced(e, N=8)
        grid = default_grid(8, 1.0, m.solution.delta2 / 100, 128)
        sol = solve_bvp(e, RadialField(grid, assembled_field(m.solution)(grid.nodes)))
        c.check(sol.converged and math.isfinite(sol.fitted_delta2), f"eps={e:g} solved and fitted")
        fitted.append((sol.fitted_delta1, sol.fitted_delta2))
    s1 = slope(eps, [f[0] for f in fitted])
    s2 = slope(eps, [f[1] for f in fitted])
    c.check(abs(s1 / C8.alpha1 - 1) <= 0.25, f"delta1 slope {s1:.4f} vs {C8.alpha1}")
    c.check(abs(s2 / C8.alpha2 - 1) <= 0.25, f"delta2 slope {s2:.4f} vs {C8.alpha2}")
    c.finish()


def test_criterion_12_inequality_lemmas(criterion):
    c = criterion(12, "elementary inequalities have stable finite constants", 10.0)
    for lemma in LEMMAS:
        first = inequality_ratio_max(lemma, 7, 100_000, seed=0)
        second = inequality_ratio_max(lemma, 7, 100_000, seed=1)
        c.check(math.isfinite(first) and second <= 1.05 * first,
                f"inequality {lemma}: max ratio {first:.6g}, second run {second:.6g}")
    for alpha in (0.25, 0.5, 1.0):
        r = inequality_ratio_max("2.1a", 7, 100_000, seed=0, exponent=alpha)
        c.check(r <= 1.0, f"inequality 2.1a alpha={alpha}: max ratio {r:.12f} <= 1")
    c.finish()
