"""Radial grids, Gaussian-weighted quadrature and finite-difference operators.

Two weighted inner products are used throughout the package:

* ``<f, g>_b = int_{sqrt b}^inf f g exp(-z^2/2) z^2 dz``   (similarity frame)
* ``(f, g)_b = int_1^inf f g exp(-b y^2/2) y^2 dy``        (renormalised frame)

Both are evaluated with composite Simpson on the stored nodes; the half
resolution result supplies an error estimate.  Derivatives are second-order
three-point stencils, one-sided at the two ends so that boundary slopes are
as accurate as interior values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.integrate import simpson

Spacing = Literal["uniform", "graded"]

__all__ = [
    "RadialGrid",
    "WeightedFunction",
    "InnerProductReport",
    "PoincareRecord",
    "GridError",
    "QuadratureError",
    "make_grid",
    "clustered_grid",
    "sample",
    "integrate",
    "inner_product_rho",
    "inner_product_renorm",
    "derivative",
    "second_derivative",
    "radial_laplacian",
    "lambda_op",
    "check_poincare",
    "fd_weights",
]


class GridError(ValueError):
    """Raised for malformed grids or grids too short for a stencil."""


class QuadratureError(ValueError):
    """Raised when a weighted integral cannot be trusted on the given grid."""


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    spacing: Spacing = "uniform"
    stretch: float = 1.0

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 3:
            raise GridError("a grid needs at least 3 nodes")
        if not np.all(np.isfinite(nodes)):
            raise GridError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise GridError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def left_endpoint(self) -> float:
        return float(self.nodes[0])

    @property
    def truncation_point(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def scaled(self, factor: float) -> "RadialGrid":
        """The same node pattern multiplied by ``factor`` (change of variable)."""
        return RadialGrid(self.nodes * factor, self.spacing, self.stretch)


@dataclass(frozen=True, eq=False)
class WeightedFunction:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != self.grid.nodes.shape:
            raise GridError(f"values have shape {vals.shape}, grid has {self.grid.nodes.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("function values must be finite at every node")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __add__(self, other: "WeightedFunction") -> "WeightedFunction":
        _same_grid(self, other)
        return WeightedFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "WeightedFunction") -> "WeightedFunction":
        _same_grid(self, other)
        return WeightedFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "WeightedFunction":
        return WeightedFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class InnerProductReport:
    value: float
    quadrature_error_estimate: float

    def __post_init__(self) -> None:
        if not self.quadrature_error_estimate >= 0.0:
            raise ValueError("quadrature error estimate must be nonnegative")


@dataclass(frozen=True)
class PoincareRecord:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def make_grid(left: float, right: float, n: int, spacing: Spacing = "uniform",
              stretch: float | None = None) -> RadialGrid:
    """Uniform grid, or geometric grid whose steps grow by ``stretch``.

    >>> make_grid(0.0, 1.0, 3).nodes.tolist()
    [0.0, 0.5, 1.0]
    """
    if n < 3:
        raise GridError(f"need n >= 3 nodes, got {n}")
    if not right > left:
        raise GridError(f"need right > left, got [{left}, {right}]")
    if spacing == "uniform":
        nodes = left + (right - left) * np.arange(n) / (n - 1)
        nodes[-1] = right
        return RadialGrid(nodes, "uniform", 1.0)
    if spacing != "graded":
        raise GridError(f"unknown spacing {spacing!r}")
    if stretch is None or stretch < 1.0:
        raise GridError("graded spacing needs a stretch factor >= 1")
    m = n - 1
    if stretch == 1.0:
        return make_grid(left, right, n, "uniform")
    # h_i = h0 * r^i with sum = right - left
    ratios = stretch ** np.arange(m, dtype=np.float64)
    h = ratios * ((right - left) / ratios.sum())
    nodes = np.concatenate(([left], left + np.cumsum(h)))
    nodes[-1] = right
    return RadialGrid(nodes, "graded", float(stretch))


def clustered_grid(left: float, right: float, n: int, contrast: float,
                   width: float = 0.1) -> RadialGrid:
    """Grid refined near ``left`` whose spacing saturates further out.

    The node map is ``x(eta) = left + H w [log(e^{eta/w} + K) - log(1 + K)]``
    on uniform ``eta`` in [0, 1] with ``K = contrast - 1``: the step grows
    geometrically (ratio ``exp(d_eta / w)``) from ``H / contrast`` and levels
    off at ``H``.  Because the map is smooth and fixed, doubling ``n`` halves
    every step, which keeps refinement studies clean.
    """
    if n < 3:
        raise GridError(f"need n >= 3 nodes, got {n}")
    if not right > left:
        raise GridError(f"need right > left, got [{left}, {right}]")
    if contrast < 1.0 or width <= 0.0:
        raise GridError("contrast must be >= 1 and width > 0")
    if contrast == 1.0:
        return make_grid(left, right, n, "uniform")
    kk = contrast - 1.0
    eta = np.linspace(0.0, 1.0, n)

    def shape(e):
        # log(e^{e/w} + K) computed without overflow
        return e / width + np.log1p(kk * np.exp(-e / width))

    base = shape(eta) - shape(0.0)
    scale = (right - left) / base[-1]
    nodes = left + scale * base
    nodes[0] = left
    nodes[-1] = right
    h = np.diff(nodes)
    stretch = float(np.max(h[1:] / h[:-1])) if h.size > 1 else 1.0
    return RadialGrid(nodes, "graded", max(stretch, 1.0))


def sample(grid: RadialGrid, fn) -> WeightedFunction:
    return WeightedFunction(grid, np.asarray(fn(grid.nodes), dtype=np.float64))


def _same_grid(f: WeightedFunction, g: WeightedFunction) -> None:
    if f.grid is g.grid:
        return
    if f.grid.nodes.shape != g.grid.nodes.shape or not np.array_equal(f.grid.nodes, g.grid.nodes):
        raise GridError("functions live on different grids")


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _half_resolution(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(0, x.size, 2)
    if idx[-1] != x.size - 1:
        idx = np.append(idx, x.size - 1)
    return x[idx], y[idx]


def integrate(x: np.ndarray, y: np.ndarray) -> InnerProductReport:
    """Composite Simpson integral with a half-resolution error estimate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    full = float(simpson(y, x=x))
    if x.size >= 5:
        xh, yh = _half_resolution(x, y)
        half = float(simpson(yh, x=xh))
        err = abs(full - half) / 15.0
    else:
        err = abs(full)
    return InnerProductReport(full, err)


def _check_tail(integrand: np.ndarray, weight: np.ndarray, tail_tol: float) -> None:
    """Reject grids whose weight at the truncation point is not negligible.

    The test is on the weight relative to its maximum; integrands that vanish
    at the last node (Dirichlet data) always pass.
    """
    if integrand[-1] == 0.0:
        return
    wmax = float(np.max(weight))
    if wmax > 0.0 and weight[-1] > tail_tol * wmax:
        raise QuadratureError(
            f"truncation too small: weight at the last node is {weight[-1]:.3e} "
            f"against a maximum of {wmax:.3e}; extend the grid"
        )


def inner_product_rho(f: WeightedFunction, g: WeightedFunction, b: float,
                      tail_tol: float = 1e-30) -> InnerProductReport:
    """``<f, g>_b`` on a grid starting at sqrt(b)."""
    _same_grid(f, g)
    z = f.grid.nodes
    if b < 0.0:
        raise ValueError("b must be nonnegative")
    if not math.isclose(z[0], math.sqrt(b), rel_tol=1e-12, abs_tol=1e-14):
        raise GridError(f"grid starts at {z[0]}, expected sqrt(b) = {math.sqrt(b)}")
    w = np.exp(-0.5 * z * z) * z * z
    integrand = f.values * g.values * w
    _check_tail(integrand, w, tail_tol)
    return integrate(z, integrand)


def inner_product_renorm(f: WeightedFunction, g: WeightedFunction, b: float,
                         tail_tol: float = 1e-30) -> InnerProductReport:
    """``(f, g)_b`` on a grid starting at 1."""
    _same_grid(f, g)
    y = f.grid.nodes
    if not b > 0.0:
        raise ValueError("b must be positive")
    if not math.isclose(y[0], 1.0, rel_tol=1e-12):
        raise GridError(f"grid starts at {y[0]}, expected 1")
    w = np.exp(-0.5 * b * y * y) * y * y
    integrand = f.values * g.values * w
    _check_tail(integrand, w, tail_tol)
    return integrate(y, integrand)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def fd_weights(stencil: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights by Fornberg's recursion.

    Returns ``w`` with ``sum(w * f(stencil)) ~ f^{(order)}(x0)``.
    """
    xs = np.asarray(stencil, dtype=np.float64)
    n = xs.size
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _require(n: int, minimum: int) -> None:
    if n < minimum:
        raise GridError(f"grid too short: {n} nodes, need at least {minimum}")


def derivative_values(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """First derivative: centred 3-point inside, one-sided 3-point at the ends."""
    n = x.size
    _require(n, 3)
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    out = np.empty(n)
    out[1:-1] = (-h2 / (h1 * (h1 + h2)) * f[:-2] + (h2 - h1) / (h1 * h2) * f[1:-1]
                 + h1 / (h2 * (h1 + h2)) * f[2:])
    out[0] = fd_weights(x[:3], x[0], 1) @ f[:3]
    out[-1] = fd_weights(x[-3:], x[-1], 1) @ f[-3:]
    return out


def second_derivative_values(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second derivative: 3-point inside, one-sided 4-point (second order) at the ends."""
    n = x.size
    _require(n, 5)
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    out = np.empty(n)
    out[1:-1] = 2.0 * (f[:-2] / (h1 * (h1 + h2)) - f[1:-1] / (h1 * h2) + f[2:] / (h2 * (h1 + h2)))
    out[0] = fd_weights(x[:4], x[0], 2) @ f[:4]
    out[-1] = fd_weights(x[-4:], x[-1], 2) @ f[-4:]
    return out


def boundary_slope(x: np.ndarray, f: np.ndarray, at: Literal["left", "right"] = "left") -> float:
    """One-sided second-order slope at an end of the grid."""
    if at == "left":
        return float(fd_weights(x[:3], x[0], 1) @ f[:3])
    return float(fd_weights(x[-3:], x[-1], 1) @ f[-3:])


def derivative(f: WeightedFunction) -> WeightedFunction:
    _require(f.grid.n, 5)
    return WeightedFunction(f.grid, derivative_values(f.grid.nodes, f.values))


def second_derivative(f: WeightedFunction) -> WeightedFunction:
    return WeightedFunction(f.grid, second_derivative_values(f.grid.nodes, f.values))


def laplacian_values(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """3D radial Laplacian ``f'' + 2 f'/x``; at x = 0 the limit ``3 f''(0)``."""
    d1 = derivative_values(x, f)
    d2 = second_derivative_values(x, f)
    out = d2.copy()
    pos = x > 0.0
    out[pos] += 2.0 * d1[pos] / x[pos]
    out[~pos] = 3.0 * d2[~pos]
    return out


def radial_laplacian(f: WeightedFunction) -> WeightedFunction:
    _require(f.grid.n, 5)
    return WeightedFunction(f.grid, laplacian_values(f.grid.nodes, f.values))


def lambda_op(f: WeightedFunction) -> WeightedFunction:
    """Scaling generator ``x f'(x)``."""
    _require(f.grid.n, 5)
    return WeightedFunction(f.grid, f.grid.nodes * derivative_values(f.grid.nodes, f.values))


def check_poincare(u: WeightedFunction, tail_tol: float = 1e-30) -> PoincareRecord:
    """Both sides of the weighted Poincare inequality with constants 6 and 4.

    ``lhs = ||z u||^2`` and ``rhs = 6 ||u||^2 + 4 ||u'||^2`` in the Gaussian
    weighted norm on [0, inf).
    """
    z = u.grid.nodes
    if z[0] != 0.0:
        raise GridError("the Poincare check integrates over [0, T]; grid must start at 0")
    du = derivative(u)
    zu = WeightedFunction(u.grid, z * u.values)
    lhs = inner_product_rho(zu, zu, 0.0, tail_tol).value
    rhs = (6.0 * inner_product_rho(u, u, 0.0, tail_tol).value
           + 4.0 * inner_product_rho(du, du, 0.0, tail_tol).value)
    return PoincareRecord(lhs, rhs)
