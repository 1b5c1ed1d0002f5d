"""Two-stage constrained remainder solves, the reduced functional, and full radial solves.

Unknown remainders are piecewise-linear fields on a radial grid while the
bubbles themselves stay in closed form at the Gauss points, so the only
discretization error is that of the (small) remainders. The bilinear form of
-Laplace is the exact stiffness matrix; inner products with PU and PZ are
taken through the weak identities <PU, v> = int U^p v and
<PZ, v> = int p U^(p-1) Z v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .bubbles import (
    BallDomain,
    ConfigurationInvalidError,
    bubble_height,
    critical_power,
    pu_profile,
    scale_exponents,
    u_profile,
    z_profile,
)
from .constants import compute_constants
from .radial_core import (
    ArtifactError,
    RadialField,
    RadialGrid,
    build_grid,
    dirichlet_solve,
    integrate_radial,
    surface_area,
)
from .reduced_energy import (
    MeshUnresolvedError,
    coupling_density,
    critical_d1,
    critical_d2,
    excess_density,
    functional_j,
    primitive,
    rel_power,
    signed_power,
    taylor_rem,
)

MAX_ITER = 200
MAX_HALVINGS = 20


class NewtonDivergedError(ArtifactError):
    pass


class ConstraintSingularError(ArtifactError):
    pass


class FitDegenerateError(ArtifactError):
    pass


def nonlinearity(s, p: float):
    return signed_power(s, p)


def nonlinearity_deriv(s, p: float):
    return p * np.abs(np.asarray(s, dtype=float)) ** (p - 1.0)


# --------------------------------------------------------------------------
# closed-form data at the Gauss points
# --------------------------------------------------------------------------


class BubbleOnGrid:
    """A projected bubble and its kernel sampled on a grid's Gauss points."""

    def __init__(self, grid: RadialGrid, delta: float):
        n, R = grid.dim, grid.radius
        fe = grid.fe
        p = critical_power(n)
        pts = fe.points
        self.delta = delta
        self.u = u_profile(pts, n, delta)
        self.corr = float(u_profile(R, n, delta))
        self.pu = self.u - self.corr
        self.rel = -self.corr / self.u
        self.up = self.u ** p
        kernel_src = p * self.u ** (p - 1.0) * z_profile(pts, n, delta)
        k = fe.load(kernel_src)
        pz = dirichlet_solve(grid, fe.stiff_diag, fe.stiff_off, k)
        norm = math.sqrt(float(k[:-1] @ pz[:-1]))
        self.kernel_load = k / norm
        self.kernel_field = RadialField(grid, pz / norm)


@dataclass
class _Workspace:
    grid: RadialGrid
    eps: float
    outer: BubbleOnGrid
    inner: BubbleOnGrid | None = None


# --------------------------------------------------------------------------
# bordered damped Newton
# --------------------------------------------------------------------------


def _multipliers(grid, res, constraints):
    """Coefficients of the constraint directions in a residual, and the rest's dual norm."""
    fe = grid.fe
    if constraints.shape[1] == 0:
        w = dirichlet_solve(grid, fe.stiff_diag, fe.stiff_off, res)
        return np.zeros(0), math.sqrt(max(float(res[:-1] @ w[:-1]), 0.0))
    rhs = np.column_stack([res, constraints])
    sol = dirichlet_solve(grid, fe.stiff_diag, fe.stiff_off, rhs)
    g = constraints[:-1].T @ sol[:-1, 1:]
    m = np.linalg.solve(g, constraints[:-1].T @ sol[:-1, 0])
    rest = res - constraints @ m
    w = sol[:, 0] - sol[:, 1:] @ m
    return m, math.sqrt(max(float(rest[:-1] @ w[:-1]), 0.0))


def _bordered_newton(grid, residual_fn, jac_fn, x0, constraints, tol, max_iter=MAX_ITER):
    """Damped Newton for F(x) = C m, C^T x = 0, with x(R) = 0.

    residual_fn(x) -> load vector; jac_fn(x) -> (diag, off) of the tridiagonal
    Jacobian. Orthogonality holds after the first step at every iterate.
    """
    x = np.array(x0, dtype=float)
    x[-1] = 0.0
    c = constraints
    nc = c.shape[1]

    def merit(xv):
        r = residual_fn(xv)
        m, rest = _multipliers(grid, r, c)
        viol = float(np.max(np.abs(c[:-1].T @ xv[:-1]))) if nc else 0.0
        return r, m, rest, viol

    r, m, rest, viol = merit(x)
    it = 0
    converged = rest == 0.0 and viol == 0.0
    # one step is always taken so tiny remainders are resolved, not left at zero
    while not converged and it < max_iter:
        it += 1
        diag, off = jac_fn(x)
        rhs = np.column_stack([r, c]) if nc else r[:, None]
        sol = dirichlet_solve(grid, diag, off, rhs)
        y = sol[:, 0]
        if nc:
            z = sol[:, 1:]
            s = c[:-1].T @ z[:-1]
            try:
                dm = np.linalg.solve(s, c[:-1].T @ y[:-1] - c[:-1].T @ x[:-1])
            except np.linalg.LinAlgError as exc:
                raise ConstraintSingularError("bordered system is singular") from exc
            step = -y + z @ dm
        else:
            step = -y
        step[-1] = 0.0
        base = math.hypot(rest, viol)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = x + lam * step
            rt, mt, restt, violt = merit(trial)
            if np.isfinite(restt) and math.hypot(restt, violt) < base * (1.0 - 1e-4 * lam):
                break
            if it == 1 and base <= tol and np.isfinite(restt) and math.hypot(restt, violt) <= tol:
                break
            lam *= 0.5
        else:
            # accept the smallest step when no decrease is seen (rounding floor)
            if base <= 1e3 * tol:
                break
            return x, m, rest, it, False
        x, r, m, rest, viol = trial, rt, mt, restt, violt
        converged = rest <= tol and viol <= tol
    return x, m, rest, it, converged


# --------------------------------------------------------------------------
# auxiliary solutions
# --------------------------------------------------------------------------


@dataclass
class AuxiliarySolution:
    phi1: RadialField
    phi2: RadialField | None
    norm_phi1: float
    norm_phi2: float
    multipliers: list[float]
    iterations: int
    converged: bool
    residual_h1: float
    eps: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    kernels: list[RadialField] = field(default_factory=list)
    workspace: _Workspace | None = field(default=None, repr=False)

    @property
    def ratio(self) -> float:
        return self.norm_phi2 / self.norm_phi1 if self.norm_phi1 > 0.0 else math.inf


def _norm(grid, v):
    return math.sqrt(max(float(v @ grid.fe.stiff_apply(v)), 0.0))


def default_grid(N: int, R: float, inner_scale: float, nodes_per_decade: int = 32) -> RadialGrid:
    """Geometric all the way to R, so discretization error does not depend on bubble scales."""
    return build_grid(N, R, min(inner_scale, R / 10.0), nodes_per_decade, uniform_nodes=8)


def solve_stage1(eps: float, d1: float, grid: RadialGrid, dom: BallDomain | None = None,
                 tol: float = 1e-10, source: Callable | None = None,
                 delta1: float | None = None) -> AuxiliarySolution:
    """PU_1 + phi_1 solves the equation up to a multiple of -Laplace PZ_1, phi_1 orthogonal to PZ_1.

    ``source`` adds a fixed right-hand side (manufactured problems).
    ``delta1`` switches to direct-delta mode.
    """
    n = grid.dim
    p = critical_power(n)
    a1, _ = scale_exponents(n)
    delta = d1 * eps ** float(a1) if delta1 is None else delta1
    fe = grid.fe
    ob = BubbleOnGrid(grid, delta)
    extra = fe.load(source(fe.points)) if source is not None else 0.0
    base_load = fe.load(ob.up) - extra

    def residual(x):
        u = ob.pu + fe.at_points(x)
        return fe.stiff_apply(x) + base_load - fe.load(nonlinearity(u, p) + eps * u)

    def jac(x):
        u = ob.pu + fe.at_points(x)
        md, mo = fe.weighted_mass(nonlinearity_deriv(u, p) + eps)
        return fe.stiff_diag - md, fe.stiff_off - mo

    c = ob.kernel_load[:, None]
    x, m, rest, it, ok = _bordered_newton(grid, residual, jac, np.zeros(grid.size), c, tol)
    phi1 = RadialField(grid, x)
    return AuxiliarySolution(
        phi1=phi1, phi2=None, norm_phi1=_norm(grid, x), norm_phi2=0.0,
        multipliers=[float(v) for v in m], iterations=it, converged=ok, residual_h1=rest,
        eps=eps, d1=delta / eps ** float(a1), delta1=delta, kernels=[ob.kernel_field],
        workspace=_Workspace(grid, eps, ob),
    )


def _stage2_source(ob: BubbleOnGrid, ib: BubbleOnGrid, A, phi2, p):
    """U_1^p - U_2^p - f(A - B + phi2), grouped where the inner bubble dominates."""
    B = ib.pu
    w = A + phi2
    u = w - B
    inner = np.abs(B) >= np.abs(A)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(inner, w / np.where(B != 0.0, B, 1.0), 0.0)
        small = np.abs(s) < 0.5
        f1 = np.where(small, rel_power(np.where(small, -s, 0.0), p), signed_power(1.0 - s, p) - 1.0)
        g_in = ob.up + ib.up * rel_power(ib.rel, p) + B ** p * f1
    g_out = ob.up - ib.up - nonlinearity(u, p)
    return np.where(inner, g_in, g_out)


def solve_stage2(eps: float, d1: float, d2: float, phi1: AuxiliarySolution, grid: RadialGrid | None = None,
                 dom: BallDomain | None = None, tol: float = 1e-10,
                 delta2: float | None = None) -> AuxiliarySolution:
    """phi_2 orthogonal to PZ_1, PZ_2 with V + phi_1 + phi_2 solving the projected equation."""
    ws = phi1.workspace
    grid = grid or ws.grid
    if grid is not ws.grid:
        raise MeshUnresolvedError("stage two must reuse the stage-one grid")
    n = grid.dim
    p = critical_power(n)
    _, a2 = scale_exponents(n)
    delta = d2 * eps ** float(a2) if delta2 is None else delta2
    if not delta < phi1.delta1:
        raise ConfigurationInvalidError("inner scale must be below the outer scale")
    if delta < 10.0 * grid.smallest_positive:
        raise MeshUnresolvedError("inner scale is not resolved by the grid")
    fe = grid.fe
    ob = ws.outer
    ib = BubbleOnGrid(grid, delta)
    phi1v = phi1.phi1.values
    A = ob.pu + fe.at_points(phi1v)
    k_phi1 = fe.stiff_apply(phi1v)

    def residual(x):
        ph = fe.at_points(x)
        u = A - ib.pu + ph
        return fe.stiff_apply(x) + k_phi1 + fe.load(_stage2_source(ob, ib, A, ph, p) - eps * u)

    def jac(x):
        u = A - ib.pu + fe.at_points(x)
        md, mo = fe.weighted_mass(nonlinearity_deriv(u, p) + eps)
        return fe.stiff_diag - md, fe.stiff_off - mo

    c = np.column_stack([ob.kernel_load, ib.kernel_load])
    x, m, rest, it, ok = _bordered_newton(grid, residual, jac, np.zeros(grid.size), c, tol)
    return AuxiliarySolution(
        phi1=phi1.phi1, phi2=RadialField(grid, x), norm_phi1=phi1.norm_phi1,
        norm_phi2=_norm(grid, x), multipliers=[float(v) for v in m], iterations=it,
        converged=ok and phi1.converged, residual_h1=rest, eps=eps, d1=phi1.d1,
        d2=delta / eps ** float(a2), delta1=phi1.delta1, delta2=delta,
        kernels=[ob.kernel_field, ib.kernel_field],
        workspace=_Workspace(grid, eps, ob, ib),
    )


def assembled_field(sol: AuxiliarySolution) -> RadialField:
    """Nodal values of V + phi_1 + phi_2 (or PU_1 + phi_1 after stage one)."""
    g = sol.phi1.grid
    r = g.nodes
    vals = pu_profile(r, g.dim, sol.delta1, g.radius) + sol.phi1.values
    if sol.phi2 is not None:
        vals = vals - pu_profile(r, g.dim, sol.delta2, g.radius) + sol.phi2.values
    return RadialField(g, vals)


# --------------------------------------------------------------------------
# reduced functional
# --------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _excess_tail(N: int, R: float, delta: float) -> float:
    p = critical_power(N)
    res = integrate_radial(lambda r: u_profile(r, N, delta) ** (p + 1.0) * r ** (N - 1), R, math.inf)
    return surface_area(N) * res.value / N


def _mesh_excess(grid, b: BubbleOnGrid) -> float:
    fe = grid.fe
    return fe.integrate(excess_density(fe.points, grid.dim, b.delta, grid.radius)) - _excess_tail(
        grid.dim, grid.radius, b.delta)


def outer_energy_part(sol: AuxiliarySolution) -> float:
    """J(PU_1 + phi_1) - S^(N/2)/N from mesh integrals."""
    ws = sol.workspace
    grid, eps, ob = ws.grid, ws.eps, ws.outer
    fe = grid.fe
    p = critical_power(grid.dim)
    x = sol.phi1.values
    ph = fe.at_points(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ob.pu > 0.0, ph / np.where(ob.pu > 0.0, ob.pu, 1.0), 0.0)
    single = _mesh_excess(grid, ob) - 0.5 * eps * fe.integrate(ob.pu ** 2)
    # at r = R both PU_1 and phi_1 vanish; the Gauss points never touch it
    delta_j = (fe.integrate((ob.up - nonlinearity(ob.pu, p)) * ph)
               + 0.5 * float(x @ fe.stiff_apply(x))
               - eps * fe.integrate(ob.pu * ph) - 0.5 * eps * fe.integrate(ph * ph)
               - fe.integrate(primitive(ob.pu, p) * taylor_rem(t, p + 1.0)))
    return single + delta_j


def inner_energy_part(sol: AuxiliarySolution) -> float:
    """J(V + phi_1 + phi_2) - J(PU_1 + phi_1) - S^(N/2)/N from mesh integrals."""
    ws = sol.workspace
    grid, eps, ob, ib = ws.grid, ws.eps, ws.outer, ws.inner
    fe = grid.fe
    p = critical_power(grid.dim)
    x1 = sol.phi1.values
    x2 = sol.phi2.values
    A = ob.pu + fe.at_points(x1)
    ph2 = fe.at_points(x2)
    own = _mesh_excess(grid, ib) - 0.5 * eps * fe.integrate(ib.pu ** 2)
    coupling = (float(x1 @ fe.stiff_apply(x2)) + 0.5 * float(x2 @ fe.stiff_apply(x2))
                + fe.integrate(coupling_density(A, ib.pu, ob.up, ib.u, ph2, eps, p, ib.rel)))
    return own + coupling


def leading_energy(N: int) -> float:
    return compute_constants(N, with_quadrature=False).S ** (N / 2.0) / N


def reduced_j(eps: float, d1: float, d2: float, grid: RadialGrid, tol: float = 1e-10,
              zero_remainders: bool = False, stage1: AuxiliarySolution | None = None,
              zero_inner_remainder: bool = False) -> float:
    """J(V + phi_1 + phi_2) with the remainders from the two stage solves.

    ``zero_remainders`` drops both remainders; ``zero_inner_remainder`` drops phi_2 only.
    """
    sol = reduced_state(eps, d1, d2, grid, tol, zero_remainders, stage1, zero_inner_remainder)
    return 2.0 * leading_energy(grid.dim) + outer_energy_part(sol) + inner_energy_part(sol)


def reduced_state(eps, d1, d2, grid, tol=1e-10, zero_remainders=False, stage1=None,
                  zero_inner_remainder=False) -> AuxiliarySolution:
    s1 = stage1 if stage1 is not None else solve_stage1(eps, d1, grid, tol=tol)
    if zero_remainders:
        return _zero_stage2(eps, d2, _zeroed(s1))
    if zero_inner_remainder:
        return _zero_stage2(eps, d2, s1)
    return solve_stage2(eps, d1, d2, s1, grid, tol=tol)


def _zeroed(s1: AuxiliarySolution) -> AuxiliarySolution:
    grid = s1.phi1.grid
    return AuxiliarySolution(RadialField.zeros(grid), None, 0.0, 0.0, [], 0, True, math.nan,
                             s1.eps, s1.d1, 0.0, s1.delta1, 0.0, s1.kernels, s1.workspace)


def _zero_stage2(eps, d2, s1):
    grid = s1.phi1.grid
    _, a2 = scale_exponents(grid.dim)
    delta = d2 * eps ** float(a2)
    ib = BubbleOnGrid(grid, delta)
    ws = _Workspace(grid, eps, s1.workspace.outer, ib)
    return AuxiliarySolution(s1.phi1, RadialField.zeros(grid), 0.0, 0.0, [], 0, True, math.nan,
                             eps, s1.d1, d2, s1.delta1, delta, s1.kernels + [ib.kernel_field], ws)


def minimize_box(fn: Callable[[float, float], float], box, start=None, sweeps: int = 50,
                 xtol: float = 1e-10) -> tuple[float, float]:
    """Coordinate golden-section sweeps to stationarity, then local quadratic refinement."""
    (lo1, hi1), (lo2, hi2) = box
    x = np.array(start if start is not None else [0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2)], dtype=float)
    for _ in range(sweeps):
        old = x.copy()
        x[0] = golden_search(lambda v: fn(v, x[1]), lo1, hi1, xtol)
        x[1] = golden_search(lambda v: fn(x[0], v), lo2, hi2, xtol)
        if np.max(np.abs(x - old)) < xtol:
            break
    h = 1e-4 * np.array([hi1 - lo1, hi2 - lo2])
    for _ in range(5):
        f0 = fn(*x)
        grad = np.empty(2)
        hess = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h[i]
            fp, fm = fn(*(x + e)), fn(*(x - e))
            grad[i] = (fp - fm) / (2 * h[i])
            hess[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
        e0, e1 = np.array([h[0], 0.0]), np.array([0.0, h[1]])
        hess[0, 1] = hess[1, 0] = (fn(*(x + e0 + e1)) - fn(*(x + e0 - e1)) - fn(*(x - e0 + e1))
                                   + fn(*(x - e0 - e1))) / (4 * h[0] * h[1])
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        trial = np.clip(x + step, [lo1, lo2], [hi1, hi2])
        if not fn(*trial) <= f0:
            break
        x = trial
        if np.max(np.abs(step)) < xtol:
            break
    return float(x[0]), float(x[1])


@dataclass
class ReducedMinimum:
    d1_min: float
    d2_min: float
    interior: bool
    multipliers_at_min: list[float]
    energy: float
    solution: AuxiliarySolution
    grid: RadialGrid
    evaluations: int

    def as_record(self) -> dict:
        return {"d1_min": self.d1_min, "d2_min": self.d2_min, "interior": self.interior,
                "multiplier1": self.multipliers_at_min[0], "multiplier2": self.multipliers_at_min[1],
                "energy": self.energy}


def golden_search(fn: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-7) -> float:
    res = minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    return float(res.x)


def minimize_reduced(eps: float, box=None, N: int = 8, R: float = 1.0, grid: RadialGrid | None = None,
                     tol: float = 1e-11, nodes_per_decade: int = 32,
                     multiplier_tol: float = 1e-9) -> ReducedMinimum:
    """Minimize the reduced energy over (d1, d2) in a box.

    Golden-section sweeps act on log d. The d2 direction uses only the
    d2-dependent energy part, which is tiny but computed to full relative
    accuracy. The stationary point is then polished by driving the two
    auxiliary multipliers to zero, which is equivalent to stationarity.
    """
    consts = compute_constants(N, with_quadrature=False)
    dom = BallDomain(R, N)
    if box is None:
        c1 = critical_d1(consts, dom)
        c2 = critical_d2(consts, dom, c1)
        box = ((c1 / 4.0, c1 * 4.0), (c2 / 100.0, c2 * 100.0))
    (lo1, hi1), (lo2, hi2) = box
    a1, a2 = scale_exponents(N)
    if grid is None:
        grid = default_grid(N, R, lo2 * eps ** float(a2) / 100.0, nodes_per_decade)
    cache: dict[float, AuxiliarySolution] = {}
    count = [0]

    def stage1(d1):
        if d1 not in cache:
            cache[d1] = solve_stage1(eps, d1, grid, tol=tol)
            if len(cache) > 64:
                cache.pop(next(iter(cache)))
        return cache[d1]

    def parts(d1, d2):
        count[0] += 1
        s1 = stage1(d1)
        s2 = solve_stage2(eps, d1, d2, s1, grid, tol=tol)
        return outer_energy_part(s1), inner_energy_part(s2), s2

    l1, l2 = math.log(lo1), math.log(lo2)
    h1, h2 = math.log(hi1), math.log(hi2)
    x = [0.5 * (l1 + h1), 0.5 * (l2 + h2)]
    for _ in range(8):
        old = list(x)
        x[1] = golden_search(lambda v: parts(math.exp(x[0]), math.exp(v))[1], l2, h2, 1e-7)
        x[0] = golden_search(lambda v: sum(parts(math.exp(v), math.exp(x[1]))[:2]), l1, h1, 1e-7)
        if max(abs(x[0] - old[0]), abs(x[1] - old[1])) < 1e-6:
            break

    # polish: Newton on the multipliers in log d with a finite-difference Jacobian
    def mult(v):
        s2 = parts(math.exp(v[0]), math.exp(v[1]))[2]
        return np.array(s2.multipliers[:2]), s2

    v = np.array(x)
    m, sol = mult(v)
    for _ in range(30):
        if np.max(np.abs(m)) <= multiplier_tol:
            break
        h = 1e-5
        jac = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            jac[:, k] = (mult(v + e)[0] - mult(v - e)[0]) / (2 * h)
        try:
            step = -np.linalg.solve(jac, m)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        for _ in range(20):
            trial = v + lam * step
            if l1 <= trial[0] <= h1 and l2 <= trial[1] <= h2:
                mt, st = mult(trial)
                if np.max(np.abs(mt)) < np.max(np.abs(m)):
                    break
            lam *= 0.5
        else:
            break
        v, m, sol = trial, mt, st
    margin = 1e-3
    interior = (l1 + margin < v[0] < h1 - margin) and (l2 + margin < v[1] < h2 - margin)
    energy = 2.0 * leading_energy(N) + outer_energy_part(stage1(math.exp(v[0]))) + inner_energy_part(sol)
    return ReducedMinimum(float(math.exp(v[0])), float(math.exp(v[1])), bool(interior),
                          [float(t) for t in m], energy, sol, grid, count[0])


# --------------------------------------------------------------------------
# full nonlinear solve and its diagnostics
# --------------------------------------------------------------------------


@dataclass
class BvpSolution:
    u: RadialField
    nodal_radius: float
    energy: float
    nehari_residual: float
    fitted_delta1: float
    fitted_delta2: float
    newton_iterations: int
    converged: bool
    residual_h1: float
    eps: float

    @property
    def sign_changes(self) -> int:
        return _sign_changes(self.u)


def _deadband(u: RadialField) -> float:
    return 1e-10 * max(u.sup_norm(), 1e-300)


def _sign_changes(u: RadialField, band: float = 0.0) -> int:
    v = u.values[:-1]
    s = np.sign(np.where(np.abs(v) <= band, 0.0, v))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _nodal_radius(u: RadialField, band: float = 0.0) -> float:
    v = u.values[:-1]
    r = u.grid.nodes[:-1]
    keep = np.abs(v) > band
    rv, vv = r[keep], v[keep]
    flips = np.nonzero(np.sign(vv[1:]) != np.sign(vv[:-1]))[0]
    if flips.size == 0:
        return math.nan
    i = flips[0]
    return float(rv[i] - vv[i] * (rv[i + 1] - rv[i]) / (vv[i + 1] - vv[i]))


def nehari_residual(u: RadialField, eps: float) -> float:
    fe = u.grid.fe
    p = critical_power(u.grid.dim)
    up = fe.at_points(u.values)
    grad = float(u.values @ fe.stiff_apply(u.values))
    if grad == 0.0:
        return 0.0
    return abs(grad - fe.integrate(np.abs(up) ** (p + 1.0)) - eps * fe.integrate(up * up)) / grad


def nehari_energy_bound(u: RadialField, u_positive: RadialField, eps: float) -> bool:
    return functional_j(u, eps) < 3.0 * functional_j(u_positive, eps)


def solve_bvp(eps: float, init: RadialField, grid: RadialGrid | None = None, tol: float = 1e-8,
              fit: bool = True, max_iter: int = MAX_ITER) -> BvpSolution:
    """Damped Newton for -Laplace u = f(u) + eps u on piecewise-linear fields."""
    grid = grid or init.grid
    if init.grid is not grid:
        init = RadialField(grid, init(grid.nodes))
    p = critical_power(grid.dim)
    fe = grid.fe

    # residuals are measured relative to the initial guess's H^1 size
    scale = 1.0 / max(_norm(grid, init.values), 1.0)

    def residual(x):
        u = fe.at_points(x)
        return scale * (fe.stiff_apply(x) - fe.load(nonlinearity(u, p) + eps * u))

    def jac(x):
        md, mo = fe.weighted_mass(nonlinearity_deriv(fe.at_points(x), p) + eps)
        return scale * (fe.stiff_diag - md), scale * (fe.stiff_off - mo)

    x, _, rest, it, ok = _bordered_newton(grid, residual, jac, init.values, np.zeros((grid.size, 0)),
                                          tol, max_iter)
    u = RadialField(grid, x)
    d1h = d2h = math.nan
    if fit and ok and _sign_changes(u) == 1:
        try:
            d1h, d2h = fit_concentration(u)
        except FitDegenerateError:
            pass
    return BvpSolution(u, _nodal_radius(u), functional_j(u, eps), nehari_residual(u, eps),
                       d1h, d2h, it, ok, rest, eps)


@dataclass(frozen=True)
class NodalReport:
    nodal_domain_count: int
    sign_at_sphere1: int
    sign_at_sphere2: int
    inner_negative: bool

    def as_record(self) -> dict:
        return dict(self.__dict__)


def sphere_radii(N: int, eps: float) -> tuple[float, float]:
    a1, a2 = scale_exponents(N)
    return eps ** float(a1), eps ** float(a2)


def nodal_analysis(sol: BvpSolution | RadialField, eps: float) -> NodalReport:
    u = sol.u if isinstance(sol, BvpSolution) else sol
    r1, r2 = sphere_radii(u.grid.dim, eps)
    if r1 >= u.grid.radius:
        raise ConfigurationInvalidError("first sphere lies outside the domain")
    band = _deadband(u)

    def sign_at(r):
        v = float(u(r))
        return 0 if abs(v) <= band else (1 if v > 0 else -1)

    return NodalReport(1 + _sign_changes(u, band), sign_at(r1), sign_at(r2), bool(u.values[0] < 0.0))


def fit_concentration(sol: BvpSolution | RadialField) -> tuple[float, float]:
    """Recover (delta1, delta2) of PU_1 - PU_2 from a sign-changing radial profile."""
    u = sol.u if isinstance(sol, BvpSolution) else sol
    g = u.grid
    n, R = g.dim, g.radius
    r, v = g.nodes, u.values
    k = 0.5 * (n - 2)
    alpha = bubble_height(n)
    r0 = _nodal_radius(u)
    if not math.isfinite(r0) or v[0] >= 0.0:
        raise FitDegenerateError("profile is not an inner-negative tower")
    outer = (r > r0) & (r < R)
    # outer lobe: one-parameter fit against PU_delta
    def lobe_res(s):
        d = math.exp(s[0])
        model = pu_profile(r[outer], n, d, R)
        return (v[outer] - model) / (np.abs(model) + np.abs(v[outer]) + 1e-300)

    s1 = least_squares(lobe_res, [math.log(max(r0 * 3.0, 1e-3 * R))], xtol=1e-15, ftol=1e-15).x[0]
    d1 = math.exp(s1)
    # inner height: -u(0) = PU_2(0) - PU_1(0)
    h = -v[0] + float(pu_profile(0.0, n, d1, R))
    d2 = (alpha / h) ** (1.0 / k)

    def joint(s):
        a, b = math.exp(s[0]), math.exp(s[1])
        p1 = pu_profile(r[:-1], n, a, R)
        p2 = pu_profile(r[:-1], n, b, R)
        return (v[:-1] - (p1 - p2)) / (np.abs(p1) + np.abs(p2))

    sol_ls = least_squares(joint, [math.log(d1), math.log(d2)], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    d1, d2 = math.exp(sol_ls.x[0]), math.exp(sol_ls.x[1])
    if d2 / d1 > 0.3:
        raise FitDegenerateError("lobes are not separated")
    return d1, d2


def tower_init(grid: RadialGrid, delta1: float, delta2: float, sol: AuxiliarySolution | None = None) -> RadialField:
    if sol is not None:
        return assembled_field(sol)
    r = grid.nodes
    return RadialField(grid, pu_profile(r, grid.dim, delta1, grid.radius)
                       - pu_profile(r, grid.dim, delta2, grid.radius))


def bubble_init(grid: RadialGrid, delta: float) -> RadialField:
    return RadialField(grid, pu_profile(grid.nodes, grid.dim, delta, grid.radius))
