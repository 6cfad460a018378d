"""Eigenpairs of the harmonic oscillator with a Dirichlet hole.

``H_b = -Delta + Lambda`` acts on radial functions on ``[sqrt b, inf)`` with
``u(sqrt b) = 0``.  In Liouville form ``H_b u = -(rho z^2 u')' / (rho z^2)``
with ``rho = exp(-z^2/2)``, so a three-point flux discretisation gives a
symmetric tridiagonal stiffness ``K`` and a diagonal (lumped) mass ``M``.
The symmetric matrix ``M^{-1/2} K M^{-1/2}`` is solved by Sturm-sequence
bisection (eigenvalue counts certified by inertia) followed by inverse
iteration for the vectors.

Eigenvectors are normalised so that, in the decomposition

    psi = sum_{j<=k} c_j P_j (1/z - 1/sqrt b) + psi_tilde,   <psi_tilde, P_i>_b = 0,

the top coefficient is ``c_k = 1``; the remaining ``c_j`` are the mixing
coefficients ``mu_{b,jk}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .laguerre_basis import BasisTable, build_basis, q_projection
from .weighted_calculus import (
    GridError,
    RadialGrid,
    WeightedFunction,
    boundary_slope,
    clustered_grid,
    derivative_values,
    inner_product_renorm,
    inner_product_rho,
    integrate,
    laplacian_values,
    make_grid,
)

__all__ = [
    "EigenProblem",
    "EigenPair",
    "RescaledEigenPair",
    "Pencil",
    "ExpansionRecord",
    "GapRecord",
    "IdentityRecord",
    "SpectralError",
    "truncation_radius",
    "default_problem",
    "assemble",
    "eigen_smallest",
    "decompose",
    "extract_mu",
    "mu_leading_term",
    "verify_expansion",
    "rescale",
    "spectral_gap_check",
    "identity_suite",
    "random_admissible",
    "identity_grid",
    "sweep_rows",
    "rows_from_pairs",
]

B_CAP = 0.05


class SpectralError(RuntimeError):
    """Raised when the eigen-solver cannot certify or converge."""


# ---------------------------------------------------------------------------
# problem set-up
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenProblem:
    b: float
    k_request: int
    grid: RadialGrid
    b_cap: float = B_CAP

    def __post_init__(self) -> None:
        if not 0.0 < self.b <= self.b_cap:
            raise ValueError(f"b must lie in (0, {self.b_cap}], got {self.b}")
        if self.k_request < 0:
            raise ValueError("k_request must be nonnegative")
        if not math.isclose(self.grid.left_endpoint, math.sqrt(self.b), rel_tol=1e-12):
            raise GridError(f"grid starts at {self.grid.left_endpoint}, expected sqrt(b)")


def truncation_radius(k: int, tol: float = 1e-20, minimum: float = 13.0) -> float:
    """Smallest T >= minimum with ``exp(-T^2/2) T^(2k+2) < tol``."""
    t = minimum
    while -0.5 * t * t + (2 * k + 2) * math.log(t) >= math.log(tol):
        t += 0.25
    return t


def default_problem(b: float, k_request: int, n: int = 4000, b_cap: float = B_CAP) -> EigenProblem:
    """Grid refined towards the hole: first step about sqrt(b)/100 at n = 4000."""
    rb = math.sqrt(b)
    right = truncation_radius(k_request + 1)
    contrast = max(right / (40.0 * rb), 1.0)
    return EigenProblem(b, k_request, clustered_grid(rb, right, n, contrast, 0.1), b_cap)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pencil:
    """Interior unknowns z_1..z_{n-2}; both ends carry homogeneous Dirichlet rows."""

    nodes: np.ndarray
    stiff_diag: np.ndarray
    stiff_off: np.ndarray
    mass: np.ndarray

    @property
    def sym_diag(self) -> np.ndarray:
        return self.stiff_diag / self.mass

    @property
    def sym_off(self) -> np.ndarray:
        return self.stiff_off / np.sqrt(self.mass[:-1] * self.mass[1:])

    def stiffness_dense(self) -> np.ndarray:
        return np.diag(self.stiff_diag) + np.diag(self.stiff_off, 1) + np.diag(self.stiff_off, -1)

    def apply(self, u_full: np.ndarray) -> np.ndarray:
        """Discrete ``H_b u`` at interior nodes for a full-grid vector."""
        u = u_full[1:-1]
        ku = self.stiff_diag * u
        ku[:-1] += self.stiff_off * u[1:]
        ku[1:] += self.stiff_off * u[:-1]
        return ku / self.mass


def _liouville_pencil(nodes: np.ndarray, weight) -> Pencil:
    h = np.diff(nodes)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    flux = weight(mid) / h  # p_{i+1/2} / h_i
    mass = weight(nodes[1:-1]) * 0.5 * (h[:-1] + h[1:])
    tiny = np.finfo(np.float64).tiny * 1e10
    if np.any(mass < tiny):
        warnings.warn("mass entries underflow near the truncation point; clamped", RuntimeWarning, stacklevel=3)
        mass = np.maximum(mass, tiny)
    diag = flux[:-1] + flux[1:]
    off = -flux[1:-1]
    return Pencil(nodes, diag, off, mass)


def assemble(problem: EigenProblem) -> Pencil:
    """Flux-form discretisation of ``(rho z^2 u')' + lambda rho z^2 u = 0``."""
    return _liouville_pencil(problem.grid.nodes, lambda z: np.exp(-0.5 * z * z) * z * z)


# ---------------------------------------------------------------------------
# eigen-solver
# ---------------------------------------------------------------------------


def _bisect_smallest(diag: np.ndarray, off: np.ndarray, m: int, rtol: float = 1e-15) -> np.ndarray:
    off_sq = off * off
    hi = 1.0
    while _kernels.sturm_counts(diag, off_sq, np.array([hi]))[0] < m:
        hi *= 2.0
        if hi > 1e12:
            raise SpectralError("could not bracket the requested eigenvalues")
    lo = np.full(m, min(0.0, float(np.min(diag))))
    up = np.full(m, hi)
    target = np.arange(1, m + 1)
    for _ in range(200):
        mid = 0.5 * (lo + up)
        cnt = _kernels.sturm_counts(diag, off_sq, mid)
        below = cnt >= target  # the target-th eigenvalue lies below mid
        up = np.where(below, mid, up)
        lo = np.where(below, lo, mid)
        if np.all(up - lo <= rtol * np.maximum(np.abs(up), 1e-300) + 1e-300):
            break
    vals = 0.5 * (lo + up)
    gaps = np.diff(vals)
    if gaps.size and np.min(gaps) <= 1e3 * rtol * max(1.0, float(np.max(np.abs(vals)))):
        raise SpectralError("eigenvalue collision within bisection tolerance")
    return vals


def _inverse_iteration(diag, off, shift, max_iter: int = 8, tol: float = 1e-13):
    n = diag.size
    rng = np.random.default_rng(12345)
    y = rng.standard_normal(n)
    y /= np.linalg.norm(y)
    lower = np.concatenate(([0.0], off))
    upper = np.concatenate((off, [0.0]))
    d = diag - shift
    for it in range(1, max_iter + 1):
        x = _kernels.thomas(lower, d, upper, y)
        x /= np.linalg.norm(x)
        if x @ y < 0.0:
            x = -x
        change = np.linalg.norm(x - y)
        y = x
        if change < tol:
            return y, it
    if change > 1e-8:
        raise SpectralError(f"inverse iteration did not converge after {max_iter} iterations (change {change:.2e})")
    return y, max_iter


def _sym_apply(diag, off, y):
    out = diag * y
    out[:-1] += off * y[1:]
    out[1:] += off * y[:-1]
    return out


@dataclass(frozen=True, eq=False)
class EigenPair:
    k: int
    b: float
    lam: float
    psi: WeightedFunction
    mu: np.ndarray
    boundary_slope: float
    residual: float
    iterations: int = 0
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def lambda_(self) -> float:
        return self.lam


def decompose(psi: WeightedFunction, b: float, k: int, table: BasisTable) -> np.ndarray:
    """Coefficients c_0..c_k of ``psi`` along ``P_j (1/z - 1/sqrt b)`` with a P-orthogonal remainder."""
    z = psi.grid.nodes
    rb = math.sqrt(b)
    prof = 1.0 / z - 1.0 / rb
    basis = [WeightedFunction(psi.grid, table.P(j, z)) for j in range(k + 1)]
    shaped = [WeightedFunction(psi.grid, table.P(j, z) * prof) for j in range(k + 1)]
    gram = np.array([[inner_product_rho(shaped[j], basis[i], b).value for j in range(k + 1)] for i in range(k + 1)])
    rhs = np.array([inner_product_rho(psi, basis[i], b).value for i in range(k + 1)])
    if np.linalg.cond(gram) > 1e10:
        raise SpectralError("projection onto the shaped basis is ill-conditioned; b too large")
    return np.linalg.solve(gram, rhs)


def eigen_smallest(problem: EigenProblem, m: int, table: BasisTable | None = None) -> list[EigenPair]:
    """The m smallest eigenpairs, sorted, each normalised with top coefficient 1."""
    if not 1 <= m <= 8:
        raise ValueError(f"m must lie in 1..8, got {m}")
    pencil = assemble(problem)
    table = table if table is not None else build_basis(max(m, 1))
    sd, so = pencil.sym_diag, pencil.sym_off
    vals = _bisect_smallest(sd, so, m)
    sqrt_mass = np.sqrt(pencil.mass)
    grid = problem.grid
    pairs = []
    for k, lam0 in enumerate(vals):
        shift = lam0 - 1e-10 * max(1.0, abs(lam0))
        y, iters = _inverse_iteration(sd, so, shift)
        lam = float(y @ _sym_apply(sd, so, y))
        u = np.zeros(grid.n)
        u[1:-1] = y / sqrt_mass
        phi = WeightedFunction(grid, u)
        coeffs = decompose(phi, problem.b, k, table)
        psi_vals = u / coeffs[k]
        psi = WeightedFunction(grid, psi_vals)
        hu = pencil.apply(psi_vals) - lam * psi_vals[1:-1]
        res = math.sqrt(np.sum(hu * hu * pencil.mass) / np.sum(psi_vals[1:-1] ** 2 * pencil.mass))
        pairs.append(EigenPair(
            k=k, b=problem.b, lam=lam, psi=psi, mu=coeffs[:k] / coeffs[k],
            boundary_slope=boundary_slope(grid.nodes, psi_vals, "left"),
            residual=res, iterations=iters, coefficients=coeffs / coeffs[k],
        ))
    lams = np.array([p.lam for p in pairs])
    if np.any(np.diff(lams) <= 0.0):
        raise SpectralError("eigenvalues are not strictly increasing")
    return pairs


# ---------------------------------------------------------------------------
# expansion checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionRecord:
    k: int
    C_fit: float
    C_expected: float
    slope: float
    derivative_bound: float  # max over the sweep of sqrt(b) |d lambda / d b|

    @property
    def relative_error(self) -> float:
        return abs(self.C_fit - self.C_expected) / self.C_expected


def verify_expansion(pairs: list[EigenPair], k: int, table: BasisTable) -> ExpansionRecord:
    """Fit ``lambda - 2k = C sqrt(b) + D b`` and the log-log slope of ``lambda - 2k - C_k^2 sqrt(b)``."""
    sel = sorted((p for p in pairs if p.k == k), key=lambda p: p.b)
    if len(sel) < 3:
        raise ValueError("need at least three values of b")
    b = np.array([p.b for p in sel])
    if b[-1] / b[0] < 99.0:
        raise ValueError("the b sweep must span at least two decades")
    lam = np.array([p.lam for p in sel])
    dev = lam - 2 * k
    design = np.column_stack((np.sqrt(b), b))
    coef, *_ = np.linalg.lstsq(design, dev, rcond=None)
    c_exp = float(table.C[k] ** 2)
    resid = np.abs(dev - c_exp * np.sqrt(b))
    slope = float(np.polyfit(np.log(b), np.log(resid), 1)[0])
    dlam = np.diff(lam) / np.diff(b)
    bmid = np.sqrt(b[:-1] * b[1:])
    return ExpansionRecord(k, float(coef[0]), c_exp, slope, float(np.max(np.abs(dlam) * np.sqrt(bmid))))


def mu_leading_term(table: BasisTable, k: int, j: int, b: float) -> float:
    """``<Q_k, P_j>_0 sqrt(b) / (2 (j - k))``."""
    return q_projection(table, k, j) * math.sqrt(b) / (2.0 * (j - k))


def extract_mu(pair: EigenPair, table: BasisTable) -> np.ndarray:
    """Mixing coefficients ``mu_{b,jk}``, j < k, recomputed from the sampled eigenfunction."""
    if pair.k < 1:
        raise ValueError("mixing coefficients need k >= 1")
    c = decompose(pair.psi, pair.b, pair.k, table)
    return c[: pair.k] / c[pair.k]


# ---------------------------------------------------------------------------
# rescaled pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RescaledEigenPair:
    k: int
    b: float
    lambda_H: float
    eta: WeightedFunction
    eta_boundary_slope: float
    residual: float


def rescale(pair: EigenPair) -> RescaledEigenPair:
    """``eta(y) = psi(sqrt(b) y)`` on ``[1, T / sqrt b]`` with the residual of ``-Delta + b Lambda``."""
    rb = math.sqrt(pair.b)
    ygrid = pair.psi.grid.scaled(1.0 / rb)
    y = ygrid.nodes.copy()
    y[0] = 1.0
    ygrid = RadialGrid(y, ygrid.spacing, ygrid.stretch)
    eta = WeightedFunction(ygrid, pair.psi.values)
    lam_h = pair.b * pair.lam
    op = -laplacian_values(y, eta.values) + pair.b * y * derivative_values(y, eta.values) - lam_h * eta.values
    op[0] = 0.0
    op[-1] = 0.0  # Dirichlet rows
    res_fn = WeightedFunction(ygrid, op)
    num = inner_product_renorm(res_fn, res_fn, pair.b).value
    den = inner_product_renorm(eta, eta, pair.b).value
    return RescaledEigenPair(pair.k, pair.b, lam_h, eta, boundary_slope(y, eta.values, "left"),
                             math.sqrt(max(num, 0.0) / den))


# ---------------------------------------------------------------------------
# spectral gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapRecord:
    b: float
    k: int
    min_ratio: float
    bound: float
    constant: float  # (2k + 2 - min_ratio) / sqrt(b), clipped at 0

    @property
    def holds(self) -> bool:
        return self.min_ratio >= self.bound


def _random_bumps(z: np.ndarray, rb: float, rng: np.random.Generator) -> np.ndarray:
    nb = int(rng.integers(1, 5))
    out = np.zeros_like(z)
    for _ in range(nb):
        c = rng.uniform(rb, 5.0)
        w = rng.uniform(0.3, 2.0)
        out += rng.normal() * np.exp(-0.5 * ((z - c) / w) ** 2)
    out += rng.normal() * np.exp(-0.25 * z * z) * (1.0 + rng.normal() * z)
    return out * (1.0 - np.exp(-(z - rb) / rng.uniform(0.05, 1.0)))


def spectral_gap_check(b: float, k: int, trials: int, seed: int = 0, n: int = 4000,
                       pairs: list[EigenPair] | None = None, slack: float = 3.0) -> GapRecord:
    """Minimum of ``||u'||_b^2 / ||u||_b^2`` over random u orthogonal to psi_0..psi_k.

    The norms use the same quadrature as the assembled pencil (midpoint flux
    for the derivative term, lumped trapezoid for the mass), and projection
    is in that mass inner product, so the ratio is a Rayleigh quotient of the
    discrete operator.
    """
    problem = default_problem(b, k + 1, n)
    pencil = assemble(problem)
    if pairs is None:
        pairs = eigen_smallest(problem, k + 1)
    z = problem.grid.nodes
    rb = math.sqrt(b)
    mass = pencil.mass
    vecs = np.array([p.psi.values[1:-1] for p in pairs[: k + 1]])
    gram = (vecs * mass) @ vecs.T
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(trials):
        u = _random_bumps(z, rb, rng)[1:-1]
        coef = np.linalg.solve(gram, (vecs * mass) @ u)
        u = u - coef @ vecs
        check = (vecs * mass) @ u
        if np.max(np.abs(check)) > 1e-8 * math.sqrt(float(np.sum(mass * u * u)) * float(np.max(np.diag(gram)))):
            raise SpectralError("orthogonal projection failed")
        ku = pencil.stiff_diag * u
        ku[:-1] += pencil.stiff_off * u[1:]
        ku[1:] += pencil.stiff_off * u[:-1]
        best = min(best, float(u @ ku) / float(np.sum(mass * u * u)))
    bound = 2 * k + 2 - slack * rb
    return GapRecord(b, k, best, bound, max(0.0, (2 * k + 2 - best) / rb))


# ---------------------------------------------------------------------------
# exact identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityRecord:
    coercivity_lhs: float
    coercivity_rhs: float
    trace_lhs: float
    trace_rhs: float

    @staticmethod
    def _rel(a: float, c: float) -> float:
        scale = max(abs(a), abs(c))
        return 0.0 if scale == 0.0 else abs(a - c) / scale

    @property
    def coercivity_residual(self) -> float:
        return self._rel(self.coercivity_lhs, self.coercivity_rhs)

    @property
    def trace_residual(self) -> float:
        return self._rel(self.trace_lhs, self.trace_rhs)


def identity_suite(b: float, u: WeightedFunction) -> IdentityRecord:
    """Both sides of

    * ``||H_b u||^2 = ||Delta u||^2 - ||u'||^2 + e^{-b/2} b^{3/2} u'(sqrt b)^2``
    * ``<H_b u, 1/z>_b = e^{-b/2} sqrt(b) u'(sqrt b) - int rho z u dz``

    with finite differences and Simpson quadrature on u's grid.
    """
    z = u.grid.nodes
    rb = math.sqrt(b)
    if not math.isclose(z[0], rb, rel_tol=1e-12):
        raise GridError("u must live on a grid starting at sqrt(b)")
    if abs(u.values[0]) > 1e-14 * max(1.0, float(np.max(np.abs(u.values)))):
        raise ValueError("identity_suite needs u(sqrt b) = 0")
    d1 = derivative_values(z, u.values)
    lap = laplacian_values(z, u.values)
    hu = -lap + z * d1
    rho = np.exp(-0.5 * z * z)
    w = rho * z * z
    slope = d1[0]
    co_lhs = integrate(z, hu * hu * w).value
    co_rhs = integrate(z, lap * lap * w).value - integrate(z, d1 * d1 * w).value + math.exp(-0.5 * b) * b**1.5 * slope**2
    tr_lhs = integrate(z, hu * w / z).value
    tr_rhs = math.exp(-0.5 * b) * rb * slope - integrate(z, rho * z * u.values).value
    return IdentityRecord(co_lhs, co_rhs, tr_lhs, tr_rhs)


def identity_grid(b: float, n: int, right: float = 13.0, contrast: float = 5.0, width: float = 0.3) -> RadialGrid:
    """Mildly clustered grid on ``[sqrt b, right]`` used for the identity checks.

    The ``2 u'/z`` term of the Laplacian amplifies stencil errors close to the
    hole, so the steps there are ``contrast`` times finer than far out.  The
    node map is fixed, so doubling n halves every step.
    """
    return clustered_grid(math.sqrt(b), right, n, contrast, width)


def random_admissible(b: float, grid: RadialGrid, rng: np.random.Generator) -> WeightedFunction:
    """Smooth test function vanishing at sqrt(b) with Gaussian decay.

    ``(z - sqrt b) exp(-z^2 / (4 sigma)) (1 + a sin(omega z + phase))`` with
    sigma in [0.9, 1.1], |a| <= 0.2 and omega in [0.3, 1]: random perturbations
    of the profile ``(z - sqrt b) exp(-z^2/4)``.
    """
    rb = math.sqrt(b)
    z = grid.nodes
    sigma = rng.uniform(0.9, 1.1)
    amp = rng.uniform(-0.2, 0.2)
    omega = rng.uniform(0.3, 1.0)
    phase = rng.uniform(0.0, 2 * math.pi)
    vals = (z - rb) * np.exp(-z * z / (4.0 * sigma)) * (1.0 + amp * np.sin(omega * z + phase))
    vals[0] = 0.0
    return WeightedFunction(grid, vals)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


SWEEP_COLUMNS = ("b", "k", "lambda", "lambda_minus_2k", "predicted", "residual")


def sweep_rows(b: float, kmax: int, n: int, table: BasisTable | None = None) -> list[tuple]:
    """CSV rows ``(b, k, lambda, lambda - 2k, 2k + C_k^2 sqrt b, residual)`` for k = 0..kmax."""
    table = table if table is not None else build_basis(max(kmax, 1))
    return rows_from_pairs(eigen_smallest(default_problem(b, kmax, n), kmax + 1, table), table)


def rows_from_pairs(pairs: list[EigenPair], table: BasisTable) -> list[tuple]:
    """``sweep_rows`` layout for already computed eigenpairs."""
    return [(p.b, p.k, p.lam, p.lam - 2 * p.k, 2 * p.k + float(table.C[p.k]) ** 2 * math.sqrt(p.b), p.residual)
            for p in pairs]
