"""Bubbles centred in a ball, their delta-derivatives and projections.

On a ball centred at the concentration point the bubble's boundary trace is a
constant, so the harmonic correction is that constant and every projection
below is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .radial_core import InvalidParameterError


class ConfigurationInvalidError(InvalidParameterError):
    pass


def bubble_height(N: int) -> float:
    """[N(N-2)]^((N-2)/4), the value at the origin of the unit-scale bubble."""
    return (N * (N - 2.0)) ** ((N - 2.0) / 4.0)


def critical_power(N: int) -> float:
    return (N + 2.0) / (N - 2.0)


def scale_exponents(N: int) -> tuple[Fraction, Fraction]:
    """Exponents of epsilon for the outer and inner concentration scales."""
    return Fraction(1, N - 4), Fraction(3 * N - 10, (N - 4) * (N - 6))


def energy_exponents(N: int) -> tuple[Fraction, Fraction]:
    return Fraction(N - 2, N - 4), Fraction((N - 2) ** 2, (N - 4) * (N - 6))


@dataclass(frozen=True)
class Bubble:
    dim: int
    delta: float

    def __post_init__(self):
        if not self.delta > 0.0:
            raise InvalidParameterError("delta must be positive")


@dataclass(frozen=True)
class BallDomain:
    radius: float = 1.0
    dim: int = 7

    @property
    def robin_at_center(self) -> float:
        return self.radius ** (2 - self.dim)

    def green_regular_at_center(self, x=None):
        """H(0, x), constant on the ball."""
        return self.robin_at_center


# Plain-array kernels: used directly by the energy and solver modules.


def u_profile(r, N: int, delta: float):
    k = 0.5 * (N - 2)
    r = np.asarray(r, dtype=float)
    return bubble_height(N) * (delta / (delta * delta + r * r)) ** k


def z_profile(r, N: int, delta: float):
    r = np.asarray(r, dtype=float)
    s = delta * delta + r * r
    return (bubble_height(N) * 0.5 * (N - 2) * delta ** (0.5 * (N - 4))
            * (r * r - delta * delta) / s ** (0.5 * N))


def pu_profile(r, N: int, delta: float, R: float):
    return u_profile(r, N, delta) - float(u_profile(R, N, delta))


def pz_profile(r, N: int, delta: float, R: float):
    return z_profile(r, N, delta) - float(z_profile(R, N, delta))


def bubble_value(r, b: Bubble):
    return u_profile(r, b.dim, b.delta)


def bubble_dderiv(r, b: Bubble):
    return z_profile(r, b.dim, b.delta)


def harmonic_correction(b: Bubble, dom: BallDomain) -> float:
    return float(u_profile(dom.radius, b.dim, b.delta))


def projected_bubble(r, b: Bubble, dom: BallDomain):
    return pu_profile(r, b.dim, b.delta, dom.radius)


def projected_z(r, b: Bubble, dom: BallDomain):
    return pz_profile(r, b.dim, b.delta, dom.radius)


@dataclass(frozen=True)
class TowerConfig:
    dim: int
    radius: float
    eps: float
    d1: float
    d2: float
    eta: float = 1e-12

    def __post_init__(self):
        if self.dim < 7:
            raise InvalidParameterError("dimension must be at least 7")
        if not (self.eps > 0.0 and self.radius > 0.0):
            raise InvalidParameterError("eps and radius must be positive")
        # d2 = 0 is the degenerate single-bubble configuration
        for d in (self.d1, self.d2) if self.d2 != 0.0 else (self.d1,):
            if not (self.eta < d < 1.0 / self.eta):
                raise InvalidParameterError("d_j outside the admissible box")

    @classmethod
    def from_deltas(cls, dim, radius, eps, delta1, delta2, eta=1e-12):
        a1, a2 = scale_exponents(dim)
        return cls(dim, radius, eps, delta1 / eps ** float(a1), delta2 / eps ** float(a2), eta)

    @property
    def delta1(self) -> float:
        return self.d1 * self.eps ** float(scale_exponents(self.dim)[0])

    @property
    def delta2(self) -> float:
        return self.d2 * self.eps ** float(scale_exponents(self.dim)[1])

    @property
    def domain(self) -> BallDomain:
        return BallDomain(self.radius, self.dim)

    def separation_threshold(self) -> float:
        """Epsilon below which delta2 < delta1."""
        n = self.dim
        return (self.d1 / self.d2) ** ((n - 4) * (n - 6) / (2.0 * (n - 2)))

    def breakpoints(self) -> list[float]:
        d1, d2 = self.delta1, self.delta2
        pts = {d2, math.sqrt(d1 * d2), d1, math.sqrt(d1)}
        return sorted(p for p in pts if 0.0 < p < self.radius)

    def require_separated(self):
        if not self.delta2 < self.delta1:
            raise ConfigurationInvalidError("inner scale must be below the outer scale")


def tower_value(r, cfg: TowerConfig):
    cfg.require_separated()
    n, R = cfg.dim, cfg.radius
    return pu_profile(r, n, cfg.delta1, R) - pu_profile(r, n, cfg.delta2, R)
