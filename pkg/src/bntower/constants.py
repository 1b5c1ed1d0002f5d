"""Dimension-dependent constants, each computed by a Beta closed form and by quadrature."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

from .bubbles import energy_exponents, scale_exponents
from .radial_core import DivergentIntegralError, InvalidParameterError, integrate_radial, unit_ball_volume


class DimensionTooSmallError(InvalidParameterError):
    pass


def beta_oracle(a_exp: float, m: float) -> float:
    """int_0^inf r^a (1+r^2)^(-m) dr = B((a+1)/2, m-(a+1)/2)/2."""
    x = 0.5 * (a_exp + 1.0)
    y = m - x
    if a_exp <= -1.0 or y <= 0.0:
        raise DivergentIntegralError(f"r^{a_exp}(1+r^2)^-{m} is not integrable on [0, inf)")
    return 0.5 * math.exp(math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))


def power_integral(a_exp: float, m: float, rel_tol: float = 1e-12) -> float:
    """Same integral as ``beta_oracle`` by adaptive quadrature."""
    res = integrate_radial(lambda r: r ** a_exp * (1.0 + r * r) ** (-m), 0.0, math.inf, rel_tol=rel_tol)
    return res.value


def sobolev_constant(N: int) -> float:
    return math.pi * N * (N - 2) * math.exp((2.0 / N) * (math.lgamma(N / 2) - math.lgamma(N)))


@dataclass(frozen=True)
class DimensionalConstants:
    N: int
    p: float
    alpha_N: float
    omega_N: float
    surface: float
    gamma_N: float
    S: float
    a1: float
    a2: float
    a3: float
    theta1: float
    theta2: float
    alpha1: float
    alpha2: float
    a1_quad: float
    a2_quad: float
    a3_quad: float

    @property
    def discrepancies(self) -> dict[str, float]:
        return {
            k: abs(getattr(self, k + "_quad") / getattr(self, k) - 1.0) for k in ("a1", "a2", "a3")
        }

    @property
    def exact_exponents(self) -> dict[str, Fraction]:
        a1, a2 = scale_exponents(self.N)
        t1, t2 = energy_exponents(self.N)
        return {"theta1": t1, "theta2": t2, "alpha1": a1, "alpha2": a2}

    def as_record(self) -> dict[str, float]:
        """Flat record with snake_case keys."""
        rec = {k.lower(): v for k, v in asdict(self).items()}
        rec.update({f"{k}_discrepancy": v for k, v in self.discrepancies.items()})
        return rec


def compute_constants(N: int, with_quadrature: bool = True) -> DimensionalConstants:
    if N < 7:
        raise DimensionTooSmallError("the tower construction needs N >= 7")
    p = (N + 2) / (N - 2)
    omega = unit_ball_volume(N)
    surface = N * omega
    # log-space: alpha_N^(p+1) = (N(N-2))^(N/2) and alpha_N^2 = (N(N-2))^((N-2)/2)
    log_nn = math.log(N * (N - 2))
    log_top = 0.5 * N * log_nn
    log_sq = 0.5 * (N - 2) * log_nn
    shapes = {
        "a1": (N - 1.0, (N + 2) / 2.0),
        "a2": (N - 1.0, N - 2.0),
        "a3": (1.0, (N + 2) / 2.0),
    }
    prefs = {
        "a1": math.log(0.5) + log_top + math.log(surface),
        "a2": math.log(0.5) + log_sq + math.log(surface),
        "a3": log_top + math.log(surface),
    }
    closed = {k: math.exp(prefs[k] + math.log(beta_oracle(*shapes[k]))) for k in shapes}
    if with_quadrature:
        quad = {k: math.exp(prefs[k]) * power_integral(*shapes[k]) for k in shapes}
    else:
        quad = dict(closed)
    t1, t2 = energy_exponents(N)
    s1, s2 = scale_exponents(N)
    return DimensionalConstants(
        N=N,
        p=p,
        alpha_N=math.exp(0.25 * (N - 2) * log_nn),
        omega_N=omega,
        surface=surface,
        gamma_N=1.0 / (N * (N - 2) * omega),
        S=sobolev_constant(N),
        a1=closed["a1"],
        a2=closed["a2"],
        a3=closed["a3"],
        theta1=float(t1),
        theta2=float(t2),
        alpha1=float(s1),
        alpha2=float(s2),
        a1_quad=quad["a1"],
        a2_quad=quad["a2"],
        a3_quad=quad["a3"],
    )


def energy_bookkeeping(N: int) -> bool:
    """1/2 - 1/(p+1) equals 1/N in exact arithmetic."""
    p = Fraction(N + 2, N - 2)
    return Fraction(1, 2) - 1 / (p + 1) == Fraction(1, N)


def sobolev_identity(N: int, rel_tol: float = 1e-12) -> tuple[float, float, float]:
    """(gradient integral, L^(p+1) integral, S^(N/2)) for the unit bubble on R^N."""
    p = (N + 2) / (N - 2)
    alpha = (N * (N - 2)) ** ((N - 2) / 4)
    surface = N * unit_ball_volume(N)
    grad = alpha ** 2 * (N - 2) ** 2 * surface * power_integral(N + 1.0, float(N), rel_tol)
    lp = alpha ** (p + 1) * surface * power_integral(N - 1.0, float(N), rel_tol)
    return grad, lp, sobolev_constant(N) ** (N / 2)
