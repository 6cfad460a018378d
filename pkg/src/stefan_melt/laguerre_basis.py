"""Generalised Laguerre polynomials and the Gaussian-orthonormal radial basis.

The radial harmonic oscillator ``-Delta + Lambda`` in three dimensions is
diagonalised by

    P_k(z) = L_k^{(1/2)}(z^2 / 2) / A_k,     (-Delta + Lambda) P_k = 2k P_k,

with ``A_k = 2^{1/4} sqrt(Gamma(k + 3/2) / k!)`` chosen so that the P_k are
orthonormal for ``<f, g>_0 = int_0^inf f g e^{-z^2/2} z^2 dz``.  Their values
at the origin are ``C_k = B_k / A_k`` with ``B_k = Gamma(k + 3/2) / (k! Gamma(3/2))``.

Derivatives are evaluated analytically from ``d/dx L_n^mu = -L_{n-1}^{mu+1}``,
which keeps the basis identities checkable at rounding level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .weighted_calculus import GridError, RadialGrid, WeightedFunction, integrate, make_grid

__all__ = [
    "BasisTable",
    "GramMatrix",
    "laguerre",
    "laguerre_sum",
    "build_basis",
    "q_profile",
    "q_projection",
    "QProfile",
    "gram_matrix",
    "projector_kernel",
    "lambda_recurrence_check",
    "harmonic_residual",
]

_MAX_DEGREE = 60


def laguerre(n: int, mu: float, x):
    """``L_n^mu(x)`` by the three-term recurrence (vectorised over x)."""
    if mu <= -1.0:
        raise ValueError(f"Laguerre parameter must exceed -1, got {mu}")
    if n < 0:
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    if n > _MAX_DEGREE:
        raise ValueError(f"degree {n} exceeds the supported maximum {_MAX_DEGREE}")
    x = np.asarray(x, dtype=np.float64)
    prev = np.ones_like(x)
    if n == 0:
        return prev
    cur = 1.0 + mu - x
    for m in range(1, n):
        prev, cur = cur, ((2 * m + 1 + mu - x) * cur - (m + mu) * prev) / (m + 1)
    return cur


def laguerre_sum(n: int, mu: float, x):
    """``L_n^mu(x)`` from the explicit alternating sum (validation only)."""
    if mu <= -1.0:
        raise ValueError(f"Laguerre parameter must exceed -1, got {mu}")
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros_like(x)
    for k in range(n + 1):
        logc = math.lgamma(mu + n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) - math.lgamma(mu + k + 1)
        total = total + (-1) ** k * math.exp(logc) * x**k
    return total


@dataclass(frozen=True, eq=False)
class BasisTable:
    k_max: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    P_coeffs: tuple[np.ndarray, ...]

    def _check(self, k: int) -> None:
        if not 0 <= k <= self.k_max:
            raise IndexError(f"k={k} outside the table range 0..{self.k_max}")

    def P(self, k: int, z):
        self._check(k)
        z = np.asarray(z, dtype=np.float64)
        return laguerre(k, 0.5, 0.5 * z * z) / self.A[k]

    def dP(self, k: int, z):
        self._check(k)
        z = np.asarray(z, dtype=np.float64)
        return -z * laguerre(k - 1, 1.5, 0.5 * z * z) / self.A[k]

    def d2P(self, k: int, z):
        self._check(k)
        z = np.asarray(z, dtype=np.float64)
        x = 0.5 * z * z
        return (-laguerre(k - 1, 1.5, x) + z * z * laguerre(k - 2, 2.5, x)) / self.A[k]

    def laplacian_P(self, k: int, z):
        """``P_k'' + (2/z) P_k'`` written without the 1/z factor."""
        self._check(k)
        z = np.asarray(z, dtype=np.float64)
        x = 0.5 * z * z
        return (-3.0 * laguerre(k - 1, 1.5, x) + z * z * laguerre(k - 2, 2.5, x)) / self.A[k]

    def lambda_P(self, k: int, z):
        z = np.asarray(z, dtype=np.float64)
        return z * self.dP(k, z)

    def P_from_coeffs(self, k: int, z):
        """Evaluate P_k from the stored even-power coefficients (Horner in z^2)."""
        self._check(k)
        z2 = np.asarray(z, dtype=np.float64) ** 2
        out = np.zeros_like(z2)
        for c in self.P_coeffs[k][::-1]:
            out = out * z2 + c
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "k_max": self.k_max,
                "A": [float(v) for v in self.A],
                "B": [float(v) for v in self.B],
                "C": [float(v) for v in self.C],
                "P_coeffs": [[float(v) for v in c] for c in self.P_coeffs],
            },
            indent=2,
        )


def build_basis(k_max: int) -> BasisTable:
    """Constants and coefficients for P_0 .. P_{k_max}; Gamma ratios in log space."""
    if not 0 <= k_max <= 40:
        raise ValueError(f"k_max must lie in [0, 40], got {k_max}")
    lg32 = math.lgamma(1.5)
    A = np.empty(k_max + 1)
    B = np.empty(k_max + 1)
    coeffs = []
    for k in range(k_max + 1):
        log_ratio = math.lgamma(k + 1.5) - math.lgamma(k + 1)
        A[k] = 2.0**0.25 * math.exp(0.5 * log_ratio)
        B[k] = math.exp(log_ratio - lg32)
        c = np.empty(k + 1)
        for m in range(k + 1):
            logc = (math.lgamma(k + 1.5) - math.lgamma(m + 1) - math.lgamma(k - m + 1)
                    - math.lgamma(m + 1.5) - m * math.log(2.0))
            c[m] = (-1) ** m * math.exp(logc) / A[k]
        c.setflags(write=False)
        coeffs.append(c)
    C = B / A
    for arr in (A, B, C):
        arr.setflags(write=False)
    return BasisTable(k_max, A, B, C, tuple(coeffs))


# ---------------------------------------------------------------------------
# correction profile Q_k
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QProfile:
    k: int
    samples: WeightedFunction
    projections: np.ndarray  # <Q_k, P_j>_0 for j = 0..k


def _q_times_z(table: BasisTable, k: int, z):
    """``z Q_k(z) = -(P_k + 2 L_{k-1}^{3/2}(z^2/2) / A_k)``, smooth at the origin."""
    z = np.asarray(z, dtype=np.float64)
    return -(table.P(k, z) + 2.0 * laguerre(k - 1, 1.5, 0.5 * z * z) / table.A[k])


def q_projection(table: BasisTable, k: int, j: int, n: int = 8001, right: float = 16.0) -> float:
    """``<Q_k, P_j>_0`` by Simpson on [0, right] using the smooth integrand z Q_k P_j e^{-z^2/2} z."""
    z = make_grid(0.0, right, n).nodes
    integrand = _q_times_z(table, k, z) * table.P(j, z) * np.exp(-0.5 * z * z) * z
    return integrate(z, integrand).value


def q_profile(table: BasisTable, k: int, grid: RadialGrid) -> QProfile:
    """Samples of ``Q_k = -P_k / z + 2 P_k' / z^2`` and its projections on P_0..P_k."""
    if grid.left_endpoint <= 0.0:
        raise GridError("Q_k is singular at the origin; use a grid with a positive left endpoint")
    z = grid.nodes
    vals = _q_times_z(table, k, z) / z
    proj = np.array([q_projection(table, k, j) for j in range(k + 1)])
    return QProfile(k, WeightedFunction(grid, vals), proj)


# ---------------------------------------------------------------------------
# Gram matrix and projector kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GramMatrix:
    b: float
    k: int
    entries: np.ndarray
    constant: float  # max |M - Id| / b^{3/2}

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.entries))


def _hole_integrals(table: BasisTable, b: float, k: int, nodes: int = 40) -> np.ndarray:
    """``int_0^{sqrt b} P_i P_j z^2 e^{-z^2/2} dz`` by Gauss-Legendre (polynomial x Gaussian)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    rb = math.sqrt(b)
    z = 0.5 * rb * (x + 1.0)
    wz = 0.5 * rb * w * z * z * np.exp(-0.5 * z * z)
    vals = np.array([table.P(i, z) for i in range(k + 1)])
    return (vals * wz) @ vals.T


def gram_matrix(table: BasisTable, b: float, k: int) -> GramMatrix:
    """``M_{b,k} = (<P_i, P_j>_b)_{i,j<=k}`` via full-line orthonormality minus the hole."""
    if not 0.0 < b < 0.1:
        raise ValueError(f"gram_matrix needs 0 < b < 0.1, got {b}")
    if k > table.k_max:
        raise IndexError(f"k={k} exceeds the table range {table.k_max}")
    M = np.eye(k + 1) - _hole_integrals(table, b, k)
    M = 0.5 * (M + M.T)
    cond = float(np.linalg.cond(M))
    if cond > 1e8:
        raise np.linalg.LinAlgError(f"Gram matrix condition number {cond:.3e} exceeds 1e8")
    const = float(np.max(np.abs(M - np.eye(k + 1)))) / b**1.5
    M.setflags(write=False)
    return GramMatrix(b, k, M, const)


def projector_kernel(table: BasisTable, gram: GramMatrix, z):
    """``m_k(b, z) = <M^{-1} P(sqrt b), P(z)>`` with P the vector (P_0..P_k)."""
    k = gram.k
    rb = math.sqrt(gram.b)
    pb = np.array([table.P(j, rb) for j in range(k + 1)], dtype=np.float64)
    coef = np.linalg.solve(gram.entries, pb)
    z = np.asarray(z, dtype=np.float64)
    return sum(coef[j] * table.P(j, z) for j in range(k + 1))


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------


def lambda_recurrence_check(table: BasisTable, k: int, grid: RadialGrid) -> float:
    """Relative sup-norm residual of ``Lambda P_k = 2k (P_k - (2k+1)/(2k) (A_{k-1}/A_k) P_{k-1})``."""
    if k < 1:
        raise ValueError("the recurrence involves P_{k-1}; need k >= 1")
    z = grid.nodes
    lhs = table.lambda_P(k, z)
    rhs = 2 * k * (table.P(k, z) - (2 * k + 1) / (2 * k) * (table.A[k - 1] / table.A[k]) * table.P(k - 1, z))
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), 1.0)
    return float(np.max(np.abs(lhs - rhs))) / scale


def harmonic_residual(table: BasisTable, k: int, grid: RadialGrid) -> float:
    """Weighted L^2 norm of ``(-Delta + Lambda) P_k - 2k P_k`` (P_k has unit norm)."""
    z = grid.nodes
    res = -table.laplacian_P(k, z) + table.lambda_P(k, z) - 2 * k * table.P(k, z)
    w = np.exp(-0.5 * z * z) * z * z
    return math.sqrt(max(integrate(z, res * res * w).value, 0.0))
