"""Energy of towers, its expansion in epsilon, remainder-norm scalings and inequality checks.

Tower energies are split into pieces that are each computed to full relative
accuracy:

    J(PU_1 - PU_2) = 2/N S^(N/2) + X(delta_1) + X(delta_2)
                     - eps/2 (|PU_1|^2 + |PU_2|^2) + Q

where X is the single-bubble excess over S^(N/2)/N and Q collects everything
that couples the two bubbles. The integrands of X and Q are rewritten so that
no two large terms are subtracted pointwise; otherwise the coupling, which is
of relative size 1e-15 or less at small eps, would drown in rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .bubbles import (
    BallDomain,
    TowerConfig,
    critical_power,
    pu_profile,
    pz_profile,
    u_profile,
    z_profile,
)
from .constants import DimensionalConstants, compute_constants
from .radial_core import (
    ArtifactError,
    RadialField,
    RadialGrid,
    integrate_radial,
    inverse_laplacian,
    norm_h1,
    project_orthogonal,
    surface_area,
)

ENERGY_TOL = 1e-10
TOWER_TOL = 1e-8


class QuadratureFailure(ArtifactError):
    pass


class MinimizerNotFoundError(ArtifactError):
    pass


class MeshUnresolvedError(ArtifactError):
    pass


# --------------------------------------------------------------------------
# cancellation-free power helpers
# --------------------------------------------------------------------------


def rel_power(t, k: float):
    """|1+t|^k - 1, accurate for small t."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 0.5
    ts = np.where(small, t, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        near = np.expm1(k * np.log1p(ts))
        far = np.abs(1.0 + t) ** k - 1.0
    return np.where(small, near, far)


def taylor_rem(t, k: float):
    """|1+t|^k - 1 - k t, accurate for small t."""
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    c2 = k * (k - 1.0) / 2.0
    c3 = c2 * (k - 2.0) / 3.0
    c4 = c3 * (k - 3.0) / 4.0
    c5 = c4 * (k - 4.0) / 5.0
    series = t * t * (c2 + t * (c3 + t * (c4 + t * c5)))
    mid_t = np.where(at < 0.5, t, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mid = np.expm1(k * np.log1p(mid_t)) - k * mid_t
        far = np.abs(1.0 + t) ** k - 1.0 - k * t
    return np.where(at < 1e-3, series, np.where(at < 0.5, mid, far))


def signed_power(s, p: float):
    s = np.asarray(s, dtype=float)
    return np.sign(s) * np.abs(s) ** p


def primitive(s, p: float):
    return np.abs(s) ** (p + 1.0) / (p + 1.0)


# --------------------------------------------------------------------------
# pointwise integrands (volume factor r^(N-1) * surface added by callers)
# --------------------------------------------------------------------------


def excess_density(r, N: int, delta: float, R: float):
    """Integrand of the single-bubble excess on the ball (t = phi/U form)."""
    p = critical_power(N)
    u = u_profile(r, N, delta)
    phi = float(u_profile(R, N, delta))
    t = phi / u
    return u ** p * phi / 2.0 - u ** (p + 1.0) * taylor_rem(-t, p + 1.0) / (p + 1.0)


def coupling_density(A, B, U1p, U2, phi2, eps: float, p: float, inner_rel=None):
    """Pointwise part of Q = J(A - B + phi2) - J(A) - J(B) minus the stiffness terms.

    A is the outer profile (PU_1 plus any remainder), B = PU_2 with bubble U2,
    U1p = U_1^p, phi2 the inner remainder. ``inner_rel`` is B/U2 - 1 if known.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    w = A + phi2
    U2p = U2 ** p
    if inner_rel is None:
        inner_rel = B / U2 - 1.0
    inner = np.abs(B) >= np.abs(A)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        s = np.where(inner, w / np.where(B != 0.0, B, 1.0), 0.0)
        q_in = (U2p * rel_power(inner_rel, p) * w
                - primitive(B, p) * taylor_rem(-s, p + 1.0)
                + primitive(A, p) + U1p * phi2)
        safeA = np.where(A != 0.0, A, 1.0)
        v = np.where(inner | (A == 0.0), 0.0, (phi2 - B) / safeA)
        q_out = (-U2p * w + U1p * phi2 - signed_power(A, p) * (phi2 - B)
                 - primitive(A, p) * taylor_rem(v, p + 1.0) + primitive(B, p))
    mass = eps * (A * B - (A - B) * phi2 - 0.5 * phi2 * phi2)
    return np.where(inner, q_in, q_out) + mass


def _tower_parts(r, N, d1, d2, R):
    u1 = u_profile(r, N, d1)
    u2 = u_profile(r, N, d2)
    c2 = float(u_profile(R, N, d2))
    return u1 - float(u_profile(R, N, d1)), u2 - c2, u1, u2, -c2 / u2


# --------------------------------------------------------------------------
# quadrature wrappers
# --------------------------------------------------------------------------


def _ball_integral(fn: Callable, N: int, R: float, breakpoints, rel_tol: float) -> float:
    res = integrate_radial(lambda r: fn(r) * r ** (N - 1), 0.0, R, breakpoints, rel_tol)
    if not res.converged and res.abs_error_estimate > 1e3 * rel_tol * abs(res.value):
        raise QuadratureFailure("quadrature did not converge")
    return surface_area(N) * res.value


def _tail_integral(fn: Callable, N: int, R: float, rel_tol: float) -> float:
    res = integrate_radial(lambda r: fn(r) * r ** (N - 1), R, math.inf, (), rel_tol)
    return surface_area(N) * res.value


def single_excess(delta: float, N: int, R: float, rel_tol: float = ENERGY_TOL) -> float:
    """1/2|PU|^2 - int F(PU) - S^(N/2)/N on the ball of radius R."""
    p = critical_power(N)
    bps = [b for b in (delta, 10 * delta) if b < R]
    inside = _ball_integral(lambda r: excess_density(r, N, delta, R), N, R, bps, rel_tol)
    tail = _tail_integral(lambda r: u_profile(r, N, delta) ** (p + 1.0), N, R, rel_tol)
    return inside - tail / N


def bubble_mass(delta: float, N: int, R: float, rel_tol: float = ENERGY_TOL) -> float:
    bps = [b for b in (delta, 10 * delta) if b < R]
    return _ball_integral(lambda r: pu_profile(r, N, delta, R) ** 2, N, R, bps, rel_tol)


def coupling_energy(delta1: float, delta2: float, eps: float, N: int, R: float,
                    rel_tol: float = TOWER_TOL) -> float:
    p = critical_power(N)

    def q(r):
        A, B, u1, u2, rel = _tower_parts(r, N, delta1, delta2, R)
        return coupling_density(A, B, u1 ** p, u2, 0.0, eps, p, rel)

    bps = sorted({b for b in (delta2, math.sqrt(delta1 * delta2), delta1) if b < R})
    return _ball_integral(q, N, R, bps, rel_tol)


# --------------------------------------------------------------------------
# energies
# --------------------------------------------------------------------------


def functional_j(u: RadialField, eps: float) -> float:
    """Discrete J_eps of a piecewise-linear field."""
    fe = u.grid.fe
    p = critical_power(u.grid.dim)
    up = fe.at_points(u.values)
    grad = float(u.values @ fe.stiff_apply(u.values))
    return 0.5 * grad - fe.integrate(primitive(up, p)) - 0.5 * eps * fe.integrate(up * up)


@dataclass(frozen=True)
class TowerEnergy:
    leading: float
    excess1: float
    excess2: float
    mass1: float
    mass2: float
    coupling: float
    eps: float

    @property
    def excess(self) -> float:
        """Total minus the leading 2/N S^(N/2), summed from small pieces."""
        return (self.excess1 + self.excess2 - 0.5 * self.eps * (self.mass1 + self.mass2)
                + self.coupling)

    @property
    def total(self) -> float:
        return self.leading + self.excess


def tower_energy(cfg: TowerConfig, rel_tol: float = TOWER_TOL) -> TowerEnergy:
    n, R = cfg.dim, cfg.radius
    cfg.require_separated()
    S = compute_constants(n, with_quadrature=False).S
    d1, d2 = cfg.delta1, cfg.delta2
    if d2 == 0.0:
        return TowerEnergy(S ** (n / 2.0) / n, single_excess(d1, n, R, min(rel_tol, ENERGY_TOL)), 0.0,
                           bubble_mass(d1, n, R, min(rel_tol, ENERGY_TOL)), 0.0, 0.0, cfg.eps)
    return TowerEnergy(
        leading=2.0 / n * S ** (n / 2.0),
        excess1=single_excess(d1, n, R, min(rel_tol, ENERGY_TOL)),
        excess2=single_excess(d2, n, R, min(rel_tol, ENERGY_TOL)),
        mass1=bubble_mass(d1, n, R, min(rel_tol, ENERGY_TOL)),
        mass2=bubble_mass(d2, n, R, min(rel_tol, ENERGY_TOL)),
        coupling=coupling_energy(d1, d2, cfg.eps, n, R, rel_tol),
        eps=cfg.eps,
    )


def energy_direct(cfg: TowerConfig, rel_tol: float = TOWER_TOL) -> float:
    """J_eps(PU_1 - PU_2) by quadrature of closed-form integrands."""
    return tower_energy(cfg, rel_tol).total


def single_bubble_energy(delta: float, eps: float, N: int, R: float) -> float:
    S = compute_constants(N, with_quadrature=False).S
    return S ** (N / 2.0) / N + (single_excess(delta, N, R) - 0.5 * eps * bubble_mass(delta, N, R))


def energy_diff_d2(cfg: TowerConfig, d2_alt: float, rel_tol: float = TOWER_TOL) -> float:
    """J(V(d2)) - J(V(d2_alt)) from one quadrature of the differenced d2-dependent integrand."""
    if d2_alt == cfg.d2:
        return 0.0
    alt = TowerConfig(cfg.dim, cfg.radius, cfg.eps, cfg.d1, d2_alt, cfg.eta)
    cfg.require_separated()
    alt.require_separated()
    n, R, eps = cfg.dim, cfg.radius, cfg.eps
    p = critical_power(n)
    d1 = cfg.delta1

    def part(r, d2):
        A, B, u1, u2, rel = _tower_parts(r, n, d1, d2, R)
        return (excess_density(r, n, d2, R) - 0.5 * eps * B * B
                + coupling_density(A, B, u1 ** p, u2, 0.0, eps, p, rel))

    da, db = cfg.delta2, alt.delta2
    bps = sorted({b for d in (da, db) for b in (d, math.sqrt(d1 * d), d1) if b < R})
    inside = _ball_integral(lambda r: part(r, da) - part(r, db), n, R, bps, rel_tol)
    tail = _tail_integral(
        lambda r: u_profile(r, n, da) ** (p + 1.0) - u_profile(r, n, db) ** (p + 1.0), n, R, rel_tol
    )
    return inside - tail / n


# --------------------------------------------------------------------------
# reduced coefficient functions
# --------------------------------------------------------------------------


def g1(d1: float, consts: DimensionalConstants, dom: BallDomain) -> float:
    n = consts.N
    return consts.a1 * dom.robin_at_center * d1 ** (n - 2) - consts.a2 * d1 ** 2


def g2(d1: float, d2: float, consts: DimensionalConstants, dom: BallDomain,
       robin_factor: float = 1.0) -> float:
    n = consts.N
    return consts.a3 * robin_factor * (d2 / d1) ** ((n - 2) / 2.0) - consts.a2 * d2 ** 2


def _g1_slope(d, consts, dom):
    n = consts.N
    return (n - 2) * consts.a1 * dom.robin_at_center * d ** (n - 3) - 2.0 * consts.a2 * d


def _g2_slope(d2, d1, consts, dom, rf):
    n = consts.N
    k = (n - 2) / 2.0
    return consts.a3 * rf * k * d2 ** (k - 1.0) / d1 ** k - 2.0 * consts.a2 * d2


def _minimize_log(fn, slope, lo: float, hi: float) -> float:
    """Golden section in log d, then bisection on the derivative's sign change."""
    res = minimize_scalar(lambda s: fn(math.exp(s)), bracket=None, bounds=(math.log(lo), math.log(hi)),
                          method="bounded", options={"xatol": 1e-10})
    s0 = res.x
    a, b = math.exp(s0 - 0.05), math.exp(s0 + 0.05)
    for _ in range(40):
        if slope(a) < 0.0 < slope(b):
            break
        a, b = a / 1.5, b * 1.5
    else:
        raise MinimizerNotFoundError("no sign change of the derivative near the golden-section point")
    return brentq(slope, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def critical_d1_closed_form(consts: DimensionalConstants, dom: BallDomain) -> float:
    n = consts.N
    return (2.0 * consts.a2 / ((n - 2) * consts.a1 * dom.robin_at_center)) ** (1.0 / (n - 4))


def critical_d1(consts: DimensionalConstants, dom: BallDomain) -> float:
    closed = critical_d1_closed_form(consts, dom)
    numeric = _minimize_log(lambda d: g1(d, consts, dom), lambda d: _g1_slope(d, consts, dom),
                            closed * 1e-3, closed * 1e3)
    assert abs(numeric / closed - 1.0) <= 1e-8, (numeric, closed)
    return closed


def critical_d2_closed_form(consts: DimensionalConstants, dom: BallDomain, d1: float,
                            robin_factor: float = 1.0) -> float:
    n = consts.N
    inner = 4.0 * consts.a2 * d1 ** ((n - 2) / 2.0) / ((n - 2) * consts.a3 * robin_factor)
    return inner ** (2.0 / (n - 6))


def critical_d2_printed(consts: DimensionalConstants, dom: BallDomain) -> float:
    """The self-cancelling closed form as printed, kept for comparison only."""
    n = consts.N
    return (2.0 * consts.a2 / (consts.a3 * dom.robin_at_center)) ** (2.0 / (n - 6))


def critical_d2(consts: DimensionalConstants, dom: BallDomain, d1: float,
                robin_factor: float = 1.0) -> float:
    guess = critical_d2_closed_form(consts, dom, d1, robin_factor)
    return _minimize_log(
        lambda d: g2(d1, d, consts, dom, robin_factor) / guess ** 2,
        lambda d: _g2_slope(d, d1, consts, dom, robin_factor),
        guess * 1e-3, guess * 1e3,
    )


@dataclass(frozen=True)
class ExpansionReport:
    leading: float
    g1_term: float
    g2_term: float
    direct: float
    residual_after_leading: float
    residual_after_g1: float
    residual_after_g2: float

    def as_record(self) -> dict[str, float]:
        return dict(self.__dict__)


def expansion_terms(cfg: TowerConfig, consts: DimensionalConstants | None = None,
                    dom: BallDomain | None = None, robin_factor: float = 1.0) -> ExpansionReport:
    consts = consts or compute_constants(cfg.dim, with_quadrature=False)
    dom = dom or cfg.domain
    en = tower_energy(cfg)
    t1 = cfg.eps ** consts.theta1 * g1(cfg.d1, consts, dom)
    t2 = cfg.eps ** consts.theta2 * g2(cfg.d1, cfg.d2, consts, dom, robin_factor)
    after_leading = en.excess
    return ExpansionReport(
        leading=en.leading,
        g1_term=t1,
        g2_term=t2,
        direct=en.total,
        residual_after_leading=after_leading,
        residual_after_g1=after_leading - t1,
        residual_after_g2=after_leading - t1 - t2,
    )


def single_bubble_terms(delta: float, eps: float, consts: DimensionalConstants,
                        dom: BallDomain) -> dict[str, float]:
    n, R = consts.N, dom.radius
    return {
        "energy_excess": single_excess(delta, n, R),
        "mass_term": 0.5 * eps * bubble_mass(delta, n, R),
        "predicted_excess": consts.a1 * dom.robin_at_center * delta ** (n - 2),
        "predicted_mass": consts.a2 * eps * delta ** 2,
    }


def interaction_integral(delta1: float, delta2: float, consts: DimensionalConstants,
                         dom: BallDomain, eps: float = 0.0) -> dict[str, float]:
    """int U_1^p U_2 over the ball, its ratio to (delta2/delta1)^((N-2)/2), and the eps cross term."""
    n, R = consts.N, dom.radius
    if delta2 == 0.0:
        return {"value": 0.0, "ratio": 0.0, "cross": 0.0}
    p = consts.p
    bps = sorted({b for b in (delta2, math.sqrt(delta1 * delta2), delta1) if b < R})
    val = _ball_integral(lambda r: u_profile(r, n, delta1) ** p * u_profile(r, n, delta2),
                         n, R, bps, ENERGY_TOL)
    cross = eps * _ball_integral(
        lambda r: pu_profile(r, n, delta1, R) * pu_profile(r, n, delta2, R), n, R, bps, ENERGY_TOL
    )
    scale = (delta2 / delta1) ** ((n - 2) / 2.0)
    return {"value": val, "ratio": val / scale, "cross": cross,
            "cross_ratio": cross / (eps * scale * delta1 ** 2) if eps > 0.0 else 0.0}


# --------------------------------------------------------------------------
# remainder norms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorNormReport:
    eps: float
    norm_projected: float
    norm_unprojected: float
    which: str

    def as_record(self) -> dict:
        return dict(self.__dict__)


def kernel_field(N: int, delta: float, grid: RadialGrid) -> RadialField:
    """Discrete PZ: the Galerkin solution of -Laplace w = p U^(p-1) Z."""
    p = critical_power(N)
    return inverse_laplacian(
        lambda r: p * u_profile(r, N, delta) ** (p - 1.0) * z_profile(r, N, delta), grid
    )


def _r1_source(r, N, delta, R, eps):
    p = critical_power(N)
    u = u_profile(r, N, delta)
    pu = pu_profile(r, N, delta, R)
    t = float(u_profile(R, N, delta)) / u
    return -(u ** p) * rel_power(-t, p) - eps * pu


def _r2_source(r, N, d1, d2, R, eps):
    """f(V) - f(PU_1) + U_2^p - eps PU_2, grouped to avoid cancellation."""
    p = critical_power(N)
    A, B, _, u2, rel2 = _tower_parts(r, N, d1, d2, R)
    inner = B >= A
    with np.errstate(invalid="ignore", divide="ignore"):
        s_in = np.where(inner, A / B, 0.0)
        g_in = (-(u2 ** p) * rel_power(rel2, p) - B ** p * rel_power(-s_in, p) - A ** p)
        s_out = np.where(inner | (A <= 0.0), 0.0, B / np.where(A > 0.0, A, 1.0))
        g_out = A ** p * rel_power(-s_out, p) + u2 ** p
    return np.where(inner, g_in, g_out) - eps * B


def error_norm_r1(eps: float, d1: float, consts: DimensionalConstants, dom: BallDomain,
                  grid: RadialGrid) -> ErrorNormReport:
    n, R = consts.N, dom.radius
    delta = d1 * eps ** consts.alpha1
    w = inverse_laplacian(lambda r: _r1_source(r, n, delta, R, eps), grid)
    proj = project_orthogonal(w, [kernel_field(n, delta, grid)])
    return ErrorNormReport(eps, norm_h1(proj), norm_h1(w), "R1")


def error_norm_r2(eps: float, d1: float, d2: float, consts: DimensionalConstants,
                  dom: BallDomain, grid: RadialGrid) -> ErrorNormReport:
    n, R = consts.N, dom.radius
    delta1 = d1 * eps ** consts.alpha1
    delta2 = d2 * eps ** consts.alpha2
    if delta2 < 10.0 * grid.smallest_positive:
        raise MeshUnresolvedError("inner scale is not resolved by the grid")
    w = inverse_laplacian(lambda r: _r2_source(r, n, delta1, delta2, R, eps), grid)
    basis = [kernel_field(n, delta1, grid), kernel_field(n, delta2, grid)]
    proj = project_orthogonal(w, basis)
    return ErrorNormReport(eps, norm_h1(proj), norm_h1(w), "R2")


def r2_surrogate(eps: float, d1: float, d2: float, consts: DimensionalConstants,
                 dom: BallDomain) -> float:
    """Sum of the three L^(2N/(N+2)) norms bounding the inner error term."""
    n, R = consts.N, dom.radius
    p = consts.p
    q = 2.0 * n / (n + 2.0)
    delta1 = d1 * eps ** consts.alpha1
    delta2 = d2 * eps ** consts.alpha2
    bps = sorted({b for b in (delta2, math.sqrt(delta1 * delta2), delta1) if b < R})

    def mixed(r):
        A, B, _, _, _ = _tower_parts(r, n, delta1, delta2, R)
        inner = B >= A
        with np.errstate(invalid="ignore", divide="ignore"):
            s_in = np.where(inner, A / B, 0.0)
            s_out = np.where(inner | (A <= 0.0), 0.0, B / np.where(A > 0.0, A, 1.0))
            val = np.where(inner, -(B ** p) * rel_power(-s_in, p) - A ** p,
                           A ** p * rel_power(-s_out, p) + B ** p)
        return np.abs(val) ** q

    def corr(r):
        _, B, _, u2, rel = _tower_parts(r, n, delta1, delta2, R)
        return np.abs(u2 ** p * rel_power(rel, p)) ** q

    def mass(r):
        return np.abs(pu_profile(r, n, delta2, R)) ** q

    total = 0.0
    for fn, scale in ((mixed, 1.0), (corr, 1.0), (mass, eps)):
        total += scale * _ball_integral(fn, n, R, bps, ENERGY_TOL) ** (1.0 / q)
    return total


# --------------------------------------------------------------------------
# elementary inequalities
# --------------------------------------------------------------------------

LEMMAS = ("2.1a", "2.1b", "2.2", "2.3", "2.4a", "2.4b", "2.5")


def check_inequality(lemma: str, args, p: float) -> dict[str, float]:
    """Both sides of an elementary inequality, the constant stripped from the right.

    For 2.1a/2.1b ``p`` is the exponent alpha; for 2.2 it is the power q; for
    the rest it is the exponent of f(s) = |s|^(p-1) s.
    """
    f = lambda s: signed_power(s, p)
    a = [np.asarray(x, dtype=float) for x in args]
    if lemma == "2.1a":
        x, y = a
        lhs, rhs = (x + y) ** p, x ** p + y ** p
    elif lemma == "2.1b":
        x, y = a
        lhs, rhs = (x + y) ** p, 2.0 ** (p - 1.0) * (x ** p + y ** p)
    elif lemma == "2.2":
        x, y = a
        lhs = np.abs(np.abs(x + y) ** p - np.abs(x) ** p)
        if p >= 1.0:
            rhs = np.abs(x) ** (p - 1.0) * np.abs(y) + np.abs(y) ** p
        else:
            rhs = np.minimum(np.abs(y) ** p, np.abs(x) ** (p - 1.0) * np.abs(y))
    elif lemma == "2.3":
        x, y = a
        lhs, rhs = np.abs(_taylor_gap(x, y, p)), np.abs(y) ** p
    elif lemma in ("2.4a", "2.4b"):
        x, y = a
        lhs = np.abs(f(x - y) - f(x) + f(y))
        if lemma == "2.4a":
            rhs = np.abs(x) ** (p - 1.0) * np.abs(y) + np.abs(y) ** p
        else:
            rhs = np.abs(y) ** (p - 1.0) * np.abs(x) + np.abs(x) ** p
    elif lemma == "2.5":
        x, b1, b2 = a
        lhs = np.abs(_taylor_gap(x, b1, p) - _taylor_gap(x, b2, p))
        rhs = (np.abs(b1) ** (p - 1.0) + np.abs(b2) ** (p - 1.0)) * np.abs(b1 - b2)
    else:
        raise ValueError(f"unknown lemma {lemma!r}")
    if lhs.ndim == 0:
        return {"lhs": float(lhs), "rhs_shape": float(rhs)}
    return {"lhs": lhs, "rhs_shape": rhs}


def _taylor_gap(a, b, p: float):
    """f(a+b) - f(a) - f'(a) b for f(s) = |s|^(p-1) s, without cancellation when |b| << |a|."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    nonzero = a != 0.0
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        t = np.where(nonzero, b / np.where(nonzero, a, 1.0), 0.0)
        near = np.abs(t) < 0.5
        g = np.where(near, taylor_rem(np.where(near, t, 0.0), p), signed_power(1.0 + t, p) - 1.0 - p * t)
        scaled = signed_power(a, p) * g
    return np.where(nonzero, scaled, signed_power(b, p))


def _lemma_exponent(lemma: str, N: int) -> float:
    p = critical_power(N)
    return {"2.1a": 0.5, "2.1b": 2.0, "2.2": p + 1.0}.get(lemma, p)


def inequality_ratio_max(lemma: str, N: int = 7, samples: int = 100_000, seed: int = 0,
                         exponent: float | None = None) -> float:
    """Largest lhs/rhs_shape over random log-uniform arguments."""
    rng = np.random.default_rng(seed)
    k = 3 if lemma == "2.5" else 2
    mags = 10.0 ** rng.uniform(-6.0, 6.0, size=(k, samples))
    if lemma in ("2.1a", "2.1b"):
        args = mags
    else:
        args = mags * rng.choice([-1.0, 1.0], size=(k, samples))
    p = _lemma_exponent(lemma, N) if exponent is None else exponent
    out = check_inequality(lemma, args, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(out["rhs_shape"] > 0.0, out["lhs"] / out["rhs_shape"], 0.0)
    return float(np.max(ratio))
