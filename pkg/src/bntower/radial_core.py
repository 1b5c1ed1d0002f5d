"""Radial meshes, quadrature, Sobolev norms and the inverse radial Laplacian.

Everything here works on radial functions on the ball B_R in R^N, written as
functions of r = |x|. Volume integrals carry the factor N*omega_N*r^(N-1).

A ``RadialField`` is a continuous piecewise-linear function on a ``RadialGrid``.
Integrals of fields are taken elementwise with Gauss-Legendre rules, and the
H^1_0 inner product uses exact moments of r^(N-1) on each element.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.integrate import IntegrationWarning
from scipy.linalg import solve_banded

GAUSS_ORDER = 6
_GX, _GW = np.polynomial.legendre.leggauss(GAUSS_ORDER)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


class ArtifactError(Exception):
    """Base class for errors raised by the package."""


class InvalidParameterError(ArtifactError, ValueError):
    pass


class DivergentIntegralError(ArtifactError, ArithmeticError):
    pass


class GridMismatchError(ArtifactError, ValueError):
    pass


class DegenerateBasisError(ArtifactError, np.linalg.LinAlgError):
    pass


def unit_ball_volume(n: int) -> float:
    return math.exp(0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0))


def surface_area(n: int) -> float:
    """Area of the unit sphere in R^n, n * omega_n."""
    return n * unit_ball_volume(n)


# --------------------------------------------------------------------------
# grids and fields
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadialGrid:
    dim: int
    radius: float
    nodes: np.ndarray
    grading: str = "geometric"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 16:
            raise InvalidParameterError("a radial grid needs at least 16 nodes")
        if nodes[0] != 0.0 or not np.all(np.diff(nodes) > 0.0):
            raise InvalidParameterError("nodes must start at 0 and increase strictly")
        if not math.isclose(nodes[-1], self.radius, rel_tol=0.0, abs_tol=0.0):
            raise InvalidParameterError("last node must equal the radius")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def smallest_positive(self) -> float:
        return float(self.nodes[1])

    def max_ratio(self) -> float:
        r = self.nodes[1:]
        return float(np.max(r[1:] / r[:-1]))

    @property
    def fe(self) -> "ElementData":
        cached = self.__dict__.get("_fe")
        if cached is None:
            cached = ElementData(self)
            object.__setattr__(self, "_fe", cached)
        return cached


def build_grid(
    N: int,
    R: float,
    inner_scale: float,
    nodes_per_decade: int = 32,
    uniform_nodes: int = 64,
    uniform_only: bool = False,
) -> RadialGrid:
    """Geometric nodes from ``inner_scale`` up to a transition radius, uniform beyond.

    The transition sits where the geometric step would exceed R/uniform_nodes,
    so the ratio of consecutive positive nodes never exceeds 10^(1/nodes_per_decade).
    """
    if N < 7:
        raise InvalidParameterError("dimension must be at least 7")
    if not (R > 0.0 and 0.0 < inner_scale < R):
        raise InvalidParameterError("need 0 < inner_scale < R")
    if nodes_per_decade < 4 or uniform_nodes < 8:
        raise InvalidParameterError("nodes_per_decade >= 4 and uniform_nodes >= 8 required")
    if uniform_only:
        n = max(uniform_nodes, 15)
        return RadialGrid(N, float(R), np.linspace(0.0, R, n + 1), "uniform")

    q = 10.0 ** (1.0 / nodes_per_decade)
    h = R / uniform_nodes
    r_switch = min(h / (q - 1.0), R)
    # end the geometric run at or past r_switch so the first uniform step keeps the ratio bound
    k = max(int(math.ceil(math.log(r_switch / inner_scale) / math.log(q))), 0)
    geo = inner_scale * q ** np.arange(k + 1)
    geo = geo[geo < R * (1.0 - 1e-12)]
    start = geo[-1] if geo.size else 0.0
    n_uniform = max(int(math.ceil((R - start) / h)), 1)
    uni = np.linspace(start, R, n_uniform + 1)[1:]
    nodes = np.concatenate(([0.0], geo, uni))
    if nodes.size < 16:
        # refine the uniform tail until the minimum node count is met
        extra = 16 - nodes.size + n_uniform
        uni = np.linspace(start, R, extra + 1)[1:]
        nodes = np.concatenate(([0.0], geo, uni))
    nodes[-1] = R
    return RadialGrid(N, float(R), nodes, "geometric")


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray
    dirichlet: bool = True

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise GridMismatchError("value count must equal node count")
        if self.dirichlet:
            vals[-1] = 0.0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn: Callable, grid: RadialGrid, dirichlet: bool = True):
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float), dirichlet)

    @classmethod
    def zeros(cls, grid: RadialGrid):
        return cls(grid, np.zeros(grid.size))

    def __call__(self, r):
        return np.interp(r, self.grid.nodes, self.values)

    def _check(self, other: "RadialField"):
        if other.grid is not self.grid:
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values + other.values, self.dirichlet and other.dirichlet)

    def __sub__(self, other):
        self._check(other)
        return RadialField(self.grid, self.values - other.values, self.dirichlet and other.dirichlet)

    def __mul__(self, c: float):
        return RadialField(self.grid, c * self.values, self.dirichlet)

    __rmul__ = __mul__

    def __neg__(self):
        return RadialField(self.grid, -self.values, self.dirichlet)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


class ElementData:
    """Per-element Gauss points, weights and the tridiagonal stiffness of a grid."""

    def __init__(self, grid: RadialGrid):
        n = grid.dim
        x = grid.nodes
        a, b = x[:-1], x[1:]
        h = b - a
        self.h = h
        self.points = a[:, None] + h[:, None] * _GX[None, :]
        sa = surface_area(n)
        self.weights = sa * h[:, None] * _GW[None, :] * self.points ** (n - 1)
        self.shape_right = np.broadcast_to(_GX, self.points.shape)
        self.shape_left = 1.0 - self.shape_right
        # (b^n - a^n)/h written without cancellation
        k = np.arange(n)
        moment = np.sum(a[:, None] ** k[None, :] * b[:, None] ** (n - 1 - k)[None, :], axis=1)
        self.elem_stiff = sa * moment / (n * h)
        self.flat_points = self.points.ravel()
        self.flat_weights = self.weights.ravel()
        diag = np.zeros(x.size)
        diag[:-1] += self.elem_stiff
        diag[1:] += self.elem_stiff
        self.stiff_diag = diag
        self.stiff_off = -self.elem_stiff

    def at_points(self, values: np.ndarray) -> np.ndarray:
        return values[:-1, None] * self.shape_left + values[1:, None] * self.shape_right

    def load(self, g_points: np.ndarray) -> np.ndarray:
        """Vector of integrals of g * hat_i for a function sampled at Gauss points."""
        gw = g_points * self.weights
        out = np.zeros(self.h.size + 1)
        out[:-1] += np.sum(gw * self.shape_left, axis=1)
        out[1:] += np.sum(gw * self.shape_right, axis=1)
        return out

    def weighted_mass(self, c_points: np.ndarray):
        """Tridiagonal (diag, off) of integrals c * hat_i * hat_j."""
        cw = c_points * self.weights
        ll = np.sum(cw * self.shape_left ** 2, axis=1)
        rr = np.sum(cw * self.shape_right ** 2, axis=1)
        lr = np.sum(cw * self.shape_left * self.shape_right, axis=1)
        diag = np.zeros(self.h.size + 1)
        diag[:-1] += ll
        diag[1:] += rr
        return diag, lr

    def stiff_apply(self, v: np.ndarray) -> np.ndarray:
        out = self.stiff_diag * v
        out[:-1] += self.stiff_off * v[1:]
        out[1:] += self.stiff_off * v[:-1]
        return out

    def integrate(self, g_points: np.ndarray) -> float:
        return float(np.sum(g_points * self.weights))


def solve_tridiagonal(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a symmetric tridiagonal system after symmetric diagonal scaling."""
    s = 1.0 / np.sqrt(np.abs(diag))
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off * s[:-1] * s[1:]
    ab[1] = diag * s * s
    ab[2, :-1] = off * s[:-1] * s[1:]
    rhs = np.asarray(rhs)
    scaled = rhs * (s if rhs.ndim == 1 else s[:, None])
    y = solve_banded((1, 1), ab, scaled, check_finite=False)
    return y * (s if rhs.ndim == 1 else s[:, None])


def dirichlet_solve(grid: RadialGrid, diag, off, rhs) -> np.ndarray:
    """Solve on the free nodes (all but r = R) and pad a trailing zero."""
    rhs = np.asarray(rhs)
    sol = solve_tridiagonal(diag[:-1], off[:-1], rhs[:-1])
    pad = np.zeros((1,) + sol.shape[1:])
    return np.concatenate((sol, pad))


def dual_norm(grid: RadialGrid, residual: np.ndarray) -> float:
    """H^1 norm of the Riesz representative of a residual load vector."""
    fe = grid.fe
    w = dirichlet_solve(grid, fe.stiff_diag, fe.stiff_off, residual)
    return math.sqrt(max(float(residual[:-1] @ w[:-1]), 0.0))


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int
    converged: bool = True


def _panel(fn, a, b, rel_tol, abs_tol, limit):
    """One panel, integrated in log r when it spans more than a factor 4."""
    if a > 0.0 and b / a > 4.0:
        def g(s):
            r = math.exp(s)
            return fn(r) * r
        lo, hi = math.log(a), math.log(b)
    else:
        g, lo, hi = fn, a, b
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IntegrationWarning)
        val, err, info = integrate.quad(
            g, lo, hi, epsrel=rel_tol, epsabs=abs_tol, limit=limit, full_output=1
        )[:3]
    ok = not any(issubclass(w.category, IntegrationWarning) for w in caught)
    return val, err, info["neval"], ok


def integrate_radial(
    integrand: Callable[[float], float],
    lo: float,
    hi: float,
    breakpoints: Sequence[float] = (),
    rel_tol: float = 1e-10,
    limit: int = 200,
    max_tail_panels: int = 80,
) -> QuadratureResult:
    """Adaptive integral of ``integrand`` over [lo, hi], hi possibly infinite.

    Panels between breakpoints go to QUADPACK; panels spanning many decades are
    integrated in log r. An infinite upper limit is compactified with
    r = t/(1-t) and summed over panels that shrink geometrically toward t = 1;
    partial sums that stop shrinking signal a divergent integral.
    """
    if not lo < hi:
        raise InvalidParameterError("need lo < hi")
    fn = lambda r: float(integrand(r))
    finite_hi = hi if math.isfinite(hi) else None
    cuts = sorted({float(b) for b in breakpoints if lo < b and (finite_hi is None or b < finite_hi)})
    if finite_hi is None:
        tail_start = max(cuts[-1] if cuts else lo, 1.0 if lo < 1.0 else 2.0 * lo)
        if tail_start > lo and tail_start not in cuts:
            cuts.append(tail_start)
        edges = [lo] + cuts
    else:
        edges = [lo] + cuts + [hi]

    total = err = 0.0
    nev = 0
    ok = True
    for a, b in zip(edges[:-1], edges[1:]):
        v, e, n, good = _panel(fn, a, b, rel_tol, 0.0, limit)
        total += v
        err += e
        nev += n
        ok &= good

    if finite_hi is None:
        c = edges[-1]

        # r = t/(1-t), written in s = 1 - t so panels near t = 1 keep full precision
        def mapped(s):
            return fn((1.0 - s) / s) / (s * s)

        gap = 1.0 / (1.0 + c)
        contributions = []
        converged_tail = False
        for k in range(max_tail_panels):
            sa = gap * 10.0 ** (-(k + 1))
            sb = gap * 10.0 ** (-k)
            v, e, n, good = _panel(mapped, sa, sb, rel_tol, 0.0, limit)
            total += v
            err += e
            nev += n
            ok &= good
            contributions.append(abs(v))
            if len(contributions) >= 6:
                last = contributions[-4:]
                if last[-1] > 0.0 and all(y >= 0.9 * x for x, y in zip(last[:-1], last[1:])):
                    raise DivergentIntegralError("partial sums of the tail do not settle")
            scale = max(abs(total), 1e-300)
            if len(contributions) >= 2 and max(contributions[-2:]) <= 1e-3 * rel_tol * scale:
                converged_tail = True
                break
        ok &= converged_tail
    if not math.isfinite(total):
        raise DivergentIntegralError("integral is not finite")
    if ok and err > rel_tol * abs(total):
        ok = err <= 1e-14 * max(abs(total), 1.0) or abs(total) == 0.0
    return QuadratureResult(total, err, max(nev, 1), ok)


# --------------------------------------------------------------------------
# norms, inner products, projections
# --------------------------------------------------------------------------


def norm_lq(f, q: float, lo: float = 0.0, hi: float | None = None, dim: int | None = None,
            rel_tol: float = 1e-10) -> float:
    """(N*omega_N * int |f|^q r^(N-1) dr)^(1/q) for a field or a callable."""
    if q < 1.0:
        raise InvalidParameterError("q must be at least 1")
    if isinstance(f, RadialField):
        fe = f.grid.fe
        vals = np.abs(fe.at_points(f.values)) ** q
        if lo > 0.0 or (hi is not None and hi < f.grid.radius):
            top = f.grid.radius if hi is None else hi
            vals = np.where((fe.points >= lo) & (fe.points <= top), vals, 0.0)
        return fe.integrate(vals) ** (1.0 / q)
    if dim is None:
        raise InvalidParameterError("dimension required for a callable")
    top = math.inf if hi is None else hi
    sa = surface_area(dim)
    res = integrate_radial(lambda r: abs(f(r)) ** q * r ** (dim - 1), lo, top, rel_tol=rel_tol)
    return (sa * res.value) ** (1.0 / q)


def inner_h1(u: RadialField, v: RadialField) -> float:
    u._check(v)
    if not (u.dirichlet and v.dirichlet):
        raise InvalidParameterError("H^1_0 inner product needs dirichlet fields")
    return float(u.values @ u.grid.fe.stiff_apply(v.values))


def norm_h1(u: RadialField) -> float:
    return math.sqrt(max(inner_h1(u, u), 0.0))


def mass_l2_squared(u: RadialField) -> float:
    """Consistent-mass evaluation of the squared L^2 norm."""
    fe = u.grid.fe
    diag, off = fe.weighted_mass(np.ones_like(fe.points))
    v = u.values
    return float(v @ (diag * v) + 2.0 * np.sum(off * v[:-1] * v[1:]))


def load_vector(g, grid: RadialGrid) -> np.ndarray:
    fe = grid.fe
    if isinstance(g, RadialField):
        if g.grid is not grid:
            raise GridMismatchError("field and grid differ")
        gp = fe.at_points(g.values)
    else:
        gp = np.asarray(g(fe.points), dtype=float)
    return fe.load(gp)


def inverse_laplacian(g, grid: RadialGrid) -> RadialField:
    """Galerkin solution of -w'' - (N-1)/r w' = g, w'(0) = 0, w(R) = 0."""
    fe = grid.fe
    b = load_vector(g, grid)
    w = dirichlet_solve(grid, fe.stiff_diag, fe.stiff_off, b)
    return RadialField(grid, w)


def radial_laplacian_fd(w: RadialField) -> np.ndarray:
    """Three-point finite-difference radial Laplacian at interior nodes 1..n-2."""
    r = w.grid.nodes
    u = w.values
    hl = r[1:-1] - r[:-2]
    hr = r[2:] - r[1:-1]
    d2 = 2.0 * (hl * u[2:] - (hl + hr) * u[1:-1] + hr * u[:-2]) / (hl * hr * (hl + hr))
    d1 = (hl ** 2 * u[2:] + (hr ** 2 - hl ** 2) * u[1:-1] - hr ** 2 * u[:-2]) / (hl * hr * (hl + hr))
    return d2 + (w.grid.dim - 1) / r[1:-1] * d1


def gram_matrix(basis: Sequence[RadialField]) -> np.ndarray:
    k = len(basis)
    g = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            g[i, j] = g[j, i] = inner_h1(basis[i], basis[j])
    return g


def project_orthogonal(f: RadialField, basis: Sequence[RadialField], max_cond: float = 1e12) -> RadialField:
    """Remove from f its H^1-orthogonal projection onto span(basis)."""
    if not basis:
        return f
    for b in basis:
        f._check(b)
    scale = np.array([norm_h1(b) for b in basis])
    if np.any(scale == 0.0):
        raise DegenerateBasisError("zero basis element")
    g = gram_matrix(basis) / np.outer(scale, scale)
    if np.linalg.cond(g) > max_cond:
        raise DegenerateBasisError("Gram matrix is numerically singular")
    out = f
    for _ in range(2):
        rhs = np.array([inner_h1(out, b) for b in basis]) / scale
        c = np.linalg.solve(g, rhs) / scale
        vals = out.values - sum(ci * b.values for ci, b in zip(c, basis))
        out = RadialField(f.grid, vals, f.dirichlet)
    return out
