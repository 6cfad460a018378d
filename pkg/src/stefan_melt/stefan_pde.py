"""Front-tracking solver for the radial one-phase exterior Stefan problem.

The temperature ``u(t, r)`` lives on ``r >= lambda(t)`` with

    u_t = u_rr + (2/r) u_r,     u(t, lambda) = 0,     u_r(t, lambda) = -lambda'(t).

Both supported frames are affine in space, ``r = p(t) + q(t) x`` on a fixed
grid in ``x``:

* ``front_fixed_physical``: ``x = (r - lambda)/(R - lambda)`` in [0, 1], with a
  homogeneous Neumann condition at the vessel wall ``r = R``;
* ``pulled_back``: ``x = y = r / lambda`` in [1, Y], Neumann at ``y = Y``.

With ``W(t, x) = u(t, p + q x)`` the equation becomes

    W_t = (1 / (q^2 r^2)) d_x (r^2 d_x W) + ((p' + q' x) / q) d_x W,

whose diffusion part is advanced implicitly (conservative three-point
fluxes, one tridiagonal solve) and whose mesh-motion part explicitly with
centred differences.  Centred explicit advection next to implicit diffusion
is stable for ``dt <= 2 / (p' + q' x)^2``, a bound that does not involve the
mesh width, so geometric grids with very small first cells remain cheap.

The front moves by backward Euler, ``lambda^{n+1} = lambda^n - dt u_r^{n+1}``,
solved by a predictor (linear extrapolation of the last two front speeds)
and one fixed-point correction per step; the first step of a run, which has
no previous speed to extrapolate from, takes one extra correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import _kernels
from .laguerre_basis import BasisTable, build_basis
from .spectral_solver import EigenPair, default_problem, eigen_smallest
from .weighted_calculus import (
    GridError,
    RadialGrid,
    WeightedFunction,
    derivative_values,
    fd_weights,
    inner_product_renorm,
    integrate,
    laplacian_values,
    make_grid,
)

__all__ = [
    "LANDAU",
    "PULLED_BACK",
    "StefanField",
    "ExtinctionEvent",
    "StefanError",
    "PreparedProfile",
    "DecompositionRecord",
    "EnergyNorms",
    "EnergyResiduals",
    "RunSettings",
    "RunResult",
    "Snapshot",
    "NonconcentrationRecord",
    "ManufacturedSolution",
    "RefinementRow",
    "landau_grid",
    "make_field",
    "front_slope",
    "advection_dt_bound",
    "step",
    "scale_field",
    "prepared_profile",
    "init_from_profile",
    "eigen_profiles",
    "project_decomposition",
    "energy_norms",
    "energy_residuals",
    "compatible_bump",
    "energy_refinement",
    "EnergyRefinementRow",
    "run_to_extinction",
    "decomposition_series",
    "nonconcentration_diagnostic",
    "manufactured_error",
    "refinement_table",
    "observed_orders",
    "initial_energy_bound",
]

Frame = Literal["front_fixed_physical", "pulled_back"]
LANDAU: Frame = "front_fixed_physical"
PULLED_BACK: Frame = "pulled_back"
_FOUR_PI = 4.0 * math.pi


class StefanError(RuntimeError):
    """Raised for invalid fields, frames or step requests."""


# ---------------------------------------------------------------------------
# field container and geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StefanField:
    """One time level of the solution.

    ``x`` is the frame coordinate grid and ``u`` the temperature at its
    nodes.  ``R_outer`` is the vessel radius in the Landau frame and the
    truncation ``Y`` in the pulled-back frame.  ``stefan_residual`` is
    ``lambda |lambda' + u_r(lambda)|`` re-evaluated after the step that
    produced this level, the renormalised form ``|a - d_y v(1)|``.
    ``lam_dot_prev`` and ``dt_prev`` carry the previous level's front speed
    and step so the next step can extrapolate its predictor.
    """

    t: float
    lam: float
    lam_dot: float
    frame: Frame
    x: RadialGrid
    u: np.ndarray
    R_outer: float
    stefan_residual: float = 0.0
    lam_dot_prev: float = math.nan  # front speed of the previous level, for the step predictor
    dt_prev: float = math.nan

    def __post_init__(self) -> None:
        if self.frame not in (LANDAU, PULLED_BACK):
            raise StefanError(f"unknown frame {self.frame!r}")
        if not self.lam > 0.0:
            raise StefanError(f"front radius must be positive, got {self.lam}")
        u = np.array(self.u, dtype=np.float64)
        if u.shape != self.x.nodes.shape:
            raise GridError("temperature samples do not match the grid")
        if not np.all(np.isfinite(u)):
            raise StefanError("temperature contains non-finite values")
        if u[0] != 0.0:
            raise StefanError("the temperature must vanish at the front node")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        x0 = 0.0 if self.frame == LANDAU else 1.0
        if not math.isclose(self.x.nodes[0], x0, abs_tol=1e-14):
            raise GridError(f"{self.frame} grid must start at {x0}")
        if self.frame == LANDAU and not math.isclose(self.x.nodes[-1], 1.0, abs_tol=1e-14):
            raise GridError("Landau grid must end at 1")
        if self.frame == LANDAU and not self.lam < self.R_outer:
            raise StefanError("front has reached the outer boundary")

    @property
    def p(self) -> float:
        return _affine(self.frame, self.lam, self.R_outer)[0]

    @property
    def q(self) -> float:
        return _affine(self.frame, self.lam, self.R_outer)[1]

    @property
    def r(self) -> np.ndarray:
        p, q = _affine(self.frame, self.lam, self.R_outer)
        r = p + q * self.x.nodes
        r[0] = self.lam
        return r

    @property
    def y(self) -> np.ndarray:
        """Renormalised radius ``r / lambda`` at the nodes."""
        y = self.r / self.lam
        y[0] = 1.0
        return y

    @property
    def a(self) -> float:
        """``-lambda_s / lambda = -lambda lambda'``."""
        return -self.lam * self.lam_dot


@dataclass(frozen=True)
class ExtinctionEvent:
    """Returned by ``step`` when the front would cross zero during the step."""

    t: float
    lam: float
    lam_dot: float

    @property
    def time_to_zero(self) -> float:
        return self.lam / abs(self.lam_dot) if self.lam_dot < 0.0 else math.inf


def _affine(frame: Frame, lam: float, R: float) -> tuple[float, float]:
    if frame == LANDAU:
        return lam, R - lam
    return 0.0, lam


def _mesh_velocity(frame: Frame, lam_dot: float, x: np.ndarray) -> np.ndarray:
    """``p' + q' x`` for the frame."""
    if frame == LANDAU:
        return lam_dot * (1.0 - x)
    return lam_dot * x


def landau_grid(n: int, first_step: float) -> RadialGrid:
    """Geometric grid on [0, 1] with the given first step."""
    if not 0.0 < first_step < 1.0 / (n - 1):
        raise GridError(f"first step {first_step} must lie in (0, 1/(n-1))")
    m = n - 1

    def total(ratio):
        return first_step * (m if ratio == 1.0 else (ratio**m - 1.0) / (ratio - 1.0)) - 1.0

    ratio = brentq(total, 1.0 + 1e-15, 1.0 + 60.0 / m, xtol=1e-15, rtol=1e-15)
    return make_grid(0.0, 1.0, n, "graded", float(ratio))


def front_slope(x: np.ndarray, W: np.ndarray, q: float) -> float:
    """``u_r`` at the front from the one-sided second-order stencil on the first three nodes."""
    return float(fd_weights(x[:3], x[0], 1) @ W[:3]) / q


def make_field(frame: Frame, x: RadialGrid, lam: float, R_outer: float, profile, t: float = 0.0) -> StefanField:
    """Field from ``profile(r)`` (physical temperature), with the front speed from the Stefan law."""
    p, q = _affine(frame, lam, R_outer)
    r = p + q * x.nodes
    r[0] = lam
    u = np.asarray(profile(r), dtype=np.float64).copy()
    u[0] = 0.0
    lam_dot = -front_slope(x.nodes, u, q)
    return StefanField(t, lam, lam_dot, frame, x, u, R_outer)


def advection_dt_bound(fld: StefanField) -> float:
    """Largest stable step for the explicit mesh-motion term: ``2 / max (p' + q' x)^2``."""
    v = np.max(np.abs(_mesh_velocity(fld.frame, fld.lam_dot, fld.x.nodes)))
    return math.inf if v == 0.0 else 2.0 / (v * v)


# ---------------------------------------------------------------------------
# one IMEX step
# ---------------------------------------------------------------------------


def _diffusion_matrix(x: np.ndarray, p: float, q: float, dt: float):
    """Tridiagonal ``I - dt D`` for the conservative radial diffusion, Dirichlet at 0, Neumann at the end."""
    n = x.size
    h = np.diff(x)
    xm = 0.5 * (x[1:] + x[:-1])
    rm2 = (p + q * xm) ** 2
    r2 = (p + q * x) ** 2
    flux = rm2 / h  # coefficient of the face between i and i+1
    vol = np.empty(n)
    vol[1:-1] = r2[1:-1] * 0.5 * (h[:-1] + h[1:])
    vol[-1] = r2[-1] * 0.5 * h[-1]
    vol[0] = 1.0
    kappa = dt / (q * q * vol)
    lower = np.zeros(n)
    upper = np.zeros(n)
    diag = np.ones(n)
    lower[1:] = -kappa[1:] * flux
    upper[1:-1] = -kappa[1:-1] * flux[1:]
    diag[1:-1] = 1.0 + kappa[1:-1] * (flux[:-1] + flux[1:])
    diag[-1] = 1.0 + kappa[-1] * flux[-1]
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, diag, upper


def _advance(frame, x, W, lam_old, lam_new, lam_dot, R, dt, t_new, source):
    p_old, q_old = _affine(frame, lam_old, R)
    p_new, q_new = _affine(frame, lam_new, R)
    rhs = W.copy()
    adv = _mesh_velocity(frame, lam_dot, x) / q_old * derivative_values(x, W)
    adv[-1] = 0.0  # Neumann wall: d_x W = 0
    rhs += dt * adv
    if source is not None:
        r_new = p_new + q_new * x
        r_new[0] = lam_new
        rhs += dt * np.asarray(source(t_new, r_new), dtype=np.float64)
    rhs[0] = 0.0
    lower, diag, upper = _diffusion_matrix(x, p_new, q_new, dt)
    out = _kernels.diffusion_solve(lower, diag, upper, rhs)
    out[0] = 0.0
    return out, q_new


def step(fld: StefanField, dt: float, source: Callable | None = None, couple: bool = True,
         corrections: int = 1, margin: float = 1e-3) -> StefanField | ExtinctionEvent:
    """Advance one step of size ``dt``.

    ``source(t, r)`` adds a forcing term (manufactured solutions).  With
    ``couple=False`` the front is frozen and the step is pure radial heat flow.
    """
    if not dt > 0.0:
        raise StefanError("dt must be positive")
    if fld.frame == LANDAU and fld.lam >= fld.R_outer * (1.0 - margin):
        raise StefanError(f"front at {fld.lam} is within the margin of the outer boundary {fld.R_outer}")
    x = fld.x.nodes
    W = np.asarray(fld.u)
    t_new = fld.t + dt
    if not couple:
        Wn, _ = _advance(fld.frame, x, W, fld.lam, fld.lam, 0.0, fld.R_outer, dt, t_new, source)
        return StefanField(t_new, fld.lam, 0.0, fld.frame, fld.x, Wn, fld.R_outer, 0.0)
    guess = fld.lam_dot
    if math.isfinite(fld.lam_dot_prev) and fld.dt_prev > 0.0:
        # linear extrapolation of the front speed: the predictor error drops from O(dt) to O(dt^2)
        guess = fld.lam_dot + (fld.lam_dot - fld.lam_dot_prev) * dt / fld.dt_prev
    else:
        # start-up step without a previous speed: one extra correction makes up for the O(dt) predictor
        corrections += 1
    for it in range(corrections + 1):
        lam_new = fld.lam + dt * guess
        if lam_new <= 0.0:
            return ExtinctionEvent(fld.t, fld.lam, guess)
        if fld.frame == LANDAU and lam_new >= fld.R_outer * (1.0 - margin):
            raise StefanError("front collided with the outer boundary")
        Wn, q_new = _advance(fld.frame, x, W, fld.lam, lam_new, guess, fld.R_outer, dt, t_new, source)
        implied = -front_slope(x, Wn, q_new)
        if it < corrections:
            guess = implied
    resid = lam_new * abs(guess - implied)
    return StefanField(t_new, lam_new, guess, fld.frame, fld.x, Wn, fld.R_outer, resid, fld.lam_dot, dt)


def scale_field(fld: StefanField, mu: float) -> StefanField:
    """The image under ``u_mu(t, r) = u(mu^2 t, mu r)``, ``lambda_mu = lambda / mu``."""
    if not mu > 0.0:
        raise StefanError("scale must be positive")
    if fld.frame == LANDAU:
        return replace(fld, t=fld.t / mu**2, lam=fld.lam / mu, lam_dot=fld.lam_dot * mu, R_outer=fld.R_outer / mu)
    return replace(fld, t=fld.t / mu**2, lam=fld.lam / mu, lam_dot=fld.lam_dot * mu)


# ---------------------------------------------------------------------------
# prepared initial data
# ---------------------------------------------------------------------------


def initial_energy_bound(k: int, b: float) -> float:
    """Largest admissible ``E(0)`` for prepared data in regime k."""
    if k == 0:
        return b**4
    if k <= 3:
        return b**3
    if k == 4:
        return b**3 * abs(math.log(b))
    return b ** (2.5 + 2.0 / k)


@dataclass(frozen=True, eq=False)
class _EtaProfile:
    """``eta_{b,j}(y) = psi_j(sqrt b y)`` from an eigenpair, extended past the truncation by ``z^lambda``."""

    b: float
    pair: EigenPair
    spline: CubicSpline
    z_cut: float

    def __call__(self, y: np.ndarray) -> np.ndarray:
        z = math.sqrt(self.b) * np.asarray(y, dtype=np.float64)
        out = np.empty_like(z)
        inside = z <= self.z_cut
        out[inside] = self.spline(np.maximum(z[inside], self.pair.psi.grid.nodes[0]))
        if np.any(~inside):
            out[~inside] = self.spline(self.z_cut) * (z[~inside] / self.z_cut) ** self.pair.lam
        return out


def eigen_profiles(b: float, k: int, n: int = 16000, table: BasisTable | None = None) -> list[_EtaProfile]:
    """Callables ``eta_{b,j}``, j = 0..k, on the renormalised radius y >= 1."""
    table = table if table is not None else build_basis(max(k + 1, 1))
    pairs = eigen_smallest(default_problem(b, k + 1, n), k + 1, table)
    out = []
    for pair in pairs:
        z = pair.psi.grid.nodes
        # values within a few Gaussian widths of the artificial Dirichlet end are not trusted
        z_cut = z[-1] - 2.0
        out.append(_EtaProfile(b, pair, CubicSpline(z, pair.psi.values), z_cut))
    return out


@dataclass(frozen=True, eq=False)
class PreparedProfile:
    k: int
    b: float
    coeffs: np.ndarray  # b_j on eta_{b,j}
    E0: float
    bound: float
    etas: list
    perturbation_removed: np.ndarray  # components of the perturbation along eta_j that were projected out

    @property
    def admissible(self) -> bool:
        return self.E0 <= self.bound


def _renorm_grid(y: np.ndarray) -> RadialGrid:
    y = np.array(y, dtype=np.float64)
    y[0] = 1.0
    return RadialGrid(y, "graded", 1.0)


def _gram(etas_vals: list[np.ndarray], grid: RadialGrid, b: float) -> np.ndarray:
    fs = [WeightedFunction(grid, v) for v in etas_vals]
    return np.array([[inner_product_renorm(fi, fj, b).value for fj in fs] for fi in fs])


def _h_b(y: np.ndarray, f: np.ndarray, b: float) -> np.ndarray:
    return -laplacian_values(y, f) + b * y * derivative_values(y, f)


def prepared_profile(k: int, b0: float, y: np.ndarray, perturbation=None, coeffs=None,
                     table: BasisTable | None = None, n_eigen: int = 16000) -> PreparedProfile:
    """Coefficients, orthogonalised perturbation and ``E(0)`` for prepared data on the nodes y.

    The modulated part is ``-(1/C_0) b0^{3/2} eta_{b0,0}`` for k = 0 and
    ``b_k^e eta_{b0,k}`` with ``b_k^e = -(k+1) b0^{3/2} / C_k`` otherwise,
    unless ``coeffs`` is given.  The perturbation (a callable of y or an
    array on the nodes) is projected orthogonally to ``eta_{b0,0..k}`` in
    ``(.,.)_b0`` and must vanish at y = 1.
    """
    if not 0.0 < b0 <= 0.01:
        raise StefanError(f"prepared data needs 0 < b0 <= 0.01, got {b0}")
    table = table if table is not None else build_basis(max(k + 1, 1))
    etas = eigen_profiles(b0, k, n_eigen, table)
    grid = _renorm_grid(y)
    yv = grid.nodes
    eta_vals = [e(yv) for e in etas]
    for v in eta_vals:
        v[0] = 0.0
    if coeffs is None:
        coeffs = np.zeros(k + 1)
        coeffs[k] = -(k + 1 if k > 0 else 1) * b0**1.5 / table.C[k]
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if perturbation is None:
        eps = np.zeros_like(yv)
        removed = np.zeros(k + 1)
    else:
        eps = np.asarray(perturbation(yv) if callable(perturbation) else perturbation, dtype=np.float64).copy()
        if abs(eps[0]) > 1e-14 * max(1.0, float(np.max(np.abs(eps)))):
            raise StefanError("the perturbation must vanish at y = 1")
        eps[0] = 0.0
        G = _gram(eta_vals, grid, b0)
        rhs = np.array([inner_product_renorm(WeightedFunction(grid, eps), WeightedFunction(grid, v), b0).value
                        for v in eta_vals])
        removed = np.linalg.solve(G, rhs)
        raw = eps
        eps = eps - sum(c * v for c, v in zip(removed, eta_vals))
    if np.any(eps):
        e2 = WeightedFunction(grid, _h_b(yv, raw, b0) - sum(c * b0 * e.pair.lam * v
                                                            for c, e, v in zip(removed, etas, eta_vals)))
    else:
        e2 = WeightedFunction(grid, np.zeros_like(yv))
    E0 = inner_product_renorm(e2, e2, b0).value if np.any(eps) else 0.0
    return PreparedProfile(k, b0, coeffs, float(E0), initial_energy_bound(k, b0), etas, removed)


def init_from_profile(k: int, b0: float, perturbation=None, R_outer: float | None = None, lam0: float = 1.0,
                      n: int = 1500, first_step: float | None = None, coeffs=None,
                      table: BasisTable | None = None, enforce_energy: bool = True) -> tuple[StefanField, PreparedProfile]:
    """Landau-frame field from ``v0 = sum_j b_j eta_{b0,j} + eps`` with ``u0(r) = v0(r / lam0)``.

    ``first_step`` defaults to ``2e-5 lam0 / R_outer``, which resolves the
    front layer down to ``lambda = 1e-3 lam0``.  ``R_outer`` defaults to
    ``lam0 max(150, sqrt(180 / b0))``, far enough out that the weight
    ``exp(-b0 y^2 / 2)`` is below ``e^{-90}`` at the wall.
    """
    if R_outer is None:
        R_outer = lam0 * max(150.0, math.sqrt(180.0 / b0))
    if first_step is None:
        first_step = 2e-5 * lam0 / R_outer
    xg = landau_grid(n, first_step)
    r = lam0 + (R_outer - lam0) * xg.nodes
    y = r / lam0
    prof = prepared_profile(k, b0, y, perturbation, coeffs, table)
    if enforce_energy and not prof.admissible:
        raise StefanError(f"perturbation violates the initial energy bound: E(0) = {prof.E0:.3e} > {prof.bound:.3e}")
    grid = _renorm_grid(y)
    eta_vals = [e(grid.nodes) for e in prof.etas]
    v = sum(c * e for c, e in zip(prof.coeffs, eta_vals))
    if perturbation is not None:
        pv = np.asarray(perturbation(grid.nodes) if callable(perturbation) else perturbation, dtype=np.float64)
        v = v + pv - sum(c * e for c, e in zip(prof.perturbation_removed, eta_vals))
    v = np.asarray(v, dtype=np.float64).copy()
    v[0] = 0.0
    lam_dot = -front_slope(xg.nodes, v, R_outer - lam0)
    return StefanField(0.0, lam0, lam_dot, LANDAU, xg, v, R_outer), prof


# ---------------------------------------------------------------------------
# decomposition diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecompositionRecord:
    t: float
    lam: float
    s: float
    b: float
    a: float
    coeffs: np.ndarray
    E: float
    boundary: tuple[float, float]  # (eps_2(1), d_y eps_2(1))
    orthogonality: np.ndarray  # |(eps, eta_j)_b| / (||eps||_b ||eta_j||_b)

    @property
    def boundary_relation_residual(self) -> float:
        """``eps_2(1) + a (a - b)``, which vanishes for exact solutions."""
        return self.boundary[0] + self.a * (self.a - self.b)

    @property
    def E_over_b4(self) -> float:
        return self.E / self.b**4


def project_decomposition(fld: StefanField, k: int, b: float, s: float = math.nan, etas=None,
                          table: BasisTable | None = None, cond_max: float = 1e10) -> DecompositionRecord:
    """Split ``v(y) = u(lambda y)`` as ``sum_j b_j eta_{b,j} + eps`` with eps orthogonal to every eta_j."""
    etas = etas if etas is not None else eigen_profiles(b, k, table=table)
    y = fld.y
    grid = _renorm_grid(y)
    v = np.asarray(fld.u)
    eta_vals = []
    for e in etas[: k + 1]:
        ev = e(grid.nodes)
        ev[0] = 0.0
        eta_vals.append(ev)
    G = _gram(eta_vals, grid, b)
    if np.linalg.cond(G) > cond_max:
        raise StefanError(f"decomposition Gram matrix is ill-conditioned (cond {np.linalg.cond(G):.3e})")
    vf = WeightedFunction(grid, v)
    rhs = np.array([inner_product_renorm(vf, WeightedFunction(grid, ev), b).value for ev in eta_vals])
    coeffs = np.linalg.solve(G, rhs)
    eps = v - sum(c * ev for c, ev in zip(coeffs, eta_vals))
    ef = WeightedFunction(grid, eps)
    e_norm = math.sqrt(max(inner_product_renorm(ef, ef, b).value, 0.0))
    orth = np.zeros(k + 1)
    for j, ev in enumerate(eta_vals):
        if e_norm > 0.0:
            ip = inner_product_renorm(ef, WeightedFunction(grid, ev), b).value
            orth[j] = abs(ip) / (e_norm * math.sqrt(G[j, j]))
    # H_b eta_j = b lambda_j eta_j, so only v itself is differentiated
    e2 = _h_b(grid.nodes, v, b) - sum(c * b * e.pair.lam * ev for c, e, ev in zip(coeffs, etas, eta_vals))
    E = inner_product_renorm(WeightedFunction(grid, e2), WeightedFunction(grid, e2), b).value
    d_e2 = float(fd_weights(grid.nodes[:3], 1.0, 1) @ e2[:3])
    return DecompositionRecord(fld.t, fld.lam, s, b, fld.a, coeffs, float(E), (float(e2[0]), d_e2), orth)


# ---------------------------------------------------------------------------
# energy identities in the pulled-back frame
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyNorms:
    omega: float  # ||w||^2
    grad: float  # ||grad w||^2
    lap: float  # ||Lap w||^2
    grad_lap: float  # ||grad Lap w||^2


def energy_norms(fld: StefanField) -> EnergyNorms:
    """Squared L^2 norms over the exterior of the unit ball (4 pi y^2 dy measure)."""
    if fld.frame != PULLED_BACK:
        raise StefanError("energy norms are defined in the pulled-back frame")
    y = fld.x.nodes
    w = np.asarray(fld.u)
    dw = derivative_values(y, w)
    lw = laplacian_values(y, w)
    dlw = derivative_values(y, lw)
    m = _FOUR_PI * y * y
    return EnergyNorms(
        integrate(y, w * w * m).value,
        integrate(y, dw * dw * m).value,
        integrate(y, lw * lw * m).value,
        integrate(y, dlw * dlw * m).value,
    )


@dataclass(frozen=True, eq=False)
class EnergyResiduals:
    t: np.ndarray
    mass: np.ndarray  # first identity, left minus right
    gradient: np.ndarray  # second identity
    laplacian: np.ndarray  # third identity
    scale: np.ndarray  # size of the largest term in each identity, shape (n, 3)

    @property
    def relative(self) -> np.ndarray:
        raw = np.column_stack((self.mass, self.gradient, self.laplacian))
        return np.abs(raw) / np.where(self.scale > 0.0, self.scale, 1.0)


def energy_residuals(history: list[StefanField]) -> EnergyResiduals:
    """Residuals of the three pulled-back energy identities along a run.

    Time derivatives are centred differences over consecutive levels, so
    each interior level yields one residual per identity:

    * ``(1/2) d|w|^2 + |grad w|^2 / lam^2 + (3/2)(lam'/lam)|w|^2``
    * ``(1/2) d|grad w|^2 + |Lap w|^2 / lam^2 + (1/2)(lam'/lam)|grad w|^2 - 2 pi lam'^3 lam``
    * ``(1/2) d|Lap w|^2 + |grad Lap w|^2 / lam^2 - (4 pi/3) d(lam' lam)^3
      - (1/2)(lam'/lam)|Lap w|^2 - 2 pi lam'^5 lam^3 - 4 pi lam'^4 lam^2``
    """
    if len(history) < 3:
        raise StefanError("need at least three levels")
    if any(f.frame != PULLED_BACK for f in history):
        raise StefanError("frame mismatch: energy identities are checked in the pulled-back frame")
    t = np.array([f.t for f in history])
    lam = np.array([f.lam for f in history])
    ld = np.array([f.lam_dot for f in history])
    norms = [energy_norms(f) for f in history]
    n0 = np.array([nm.omega for nm in norms])
    n1 = np.array([nm.grad for nm in norms])
    n2 = np.array([nm.lap for nm in norms])
    n3 = np.array([nm.grad_lap for nm in norms])
    cube = (ld * lam) ** 3

    def ddt(q):
        return (q[2:] - q[:-2]) / (t[2:] - t[:-2])

    i = slice(1, -1)
    L, Ld = lam[i], ld[i]
    terms0 = (0.5 * ddt(n0), n1[i] / L**2, 1.5 * Ld / L * n0[i])
    terms1 = (0.5 * ddt(n1), n2[i] / L**2, 0.5 * Ld / L * n1[i], -2.0 * math.pi * Ld**3 * L)
    terms2 = (0.5 * ddt(n2), n3[i] / L**2, -(4.0 * math.pi / 3.0) * ddt(cube), -0.5 * Ld / L * n2[i],
              -2.0 * math.pi * Ld**5 * L**3, -4.0 * math.pi * Ld**4 * L**2)
    scale = np.column_stack([np.max(np.abs(np.array(tr)), axis=0) for tr in (terms0, terms1, terms2)])
    return EnergyResiduals(t[i], sum(terms0), sum(terms1), sum(terms2), scale)


def compatible_bump(slope: float, lam0: float = 1.0) -> Callable:
    """Profile ``(c z + d z^2) exp(-z^2/2)``, ``z = r/lam0 - 1``, vanishing at the front with ``u_r = c/lam0``.

    ``d = (c^2 - 2c)/2`` enforces the first compatibility condition
    ``Lap u = u_r^2`` at the front (differentiate ``u(t, lambda(t)) = 0`` in
    time), so no initial layer forms.  The Gaussian tail keeps the solution
    negligible at a truncation of a dozen widths.
    """
    c = float(slope)
    d = 0.5 * (c * c - 2.0 * c)

    def profile(r):
        z = np.asarray(r, dtype=np.float64) / lam0 - 1.0
        return (c * z + d * z * z) * np.exp(-0.5 * z * z)

    return profile


@dataclass(frozen=True)
class EnergyRefinementRow:
    dt: float
    max_relative: tuple[float, float, float]  # per identity


def energy_refinement(dts=(4e-3, 2e-3, 1e-3), t_end: float = 0.2, slope: float = 0.3, Y: float = 12.0,
                      n: int = 1201) -> list[EnergyRefinementRow]:
    """Maximum relative energy-identity residuals of pulled-back runs from ``compatible_bump`` data."""
    rows = []
    x = make_grid(1.0, Y, n)
    for dt in dts:
        steps = int(round(t_end / dt))
        fld = make_field(PULLED_BACK, x, 1.0, Y, compatible_bump(slope))
        hist = [fld]
        for _ in range(steps):
            fld = step(fld, dt)
            if isinstance(fld, ExtinctionEvent):
                raise StefanError("front reached zero during the energy check")
            hist.append(fld)
        rel = energy_residuals(hist).relative.max(axis=0)
        rows.append(EnergyRefinementRow(dt, tuple(float(v) for v in rel)))
    return rows


# ---------------------------------------------------------------------------
# runs to extinction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    ds: float = 0.02  # renormalised step: dt = lambda^2 ds
    dt_max: float = math.inf
    lam_floor_ratio: float = 1e-3
    max_steps: int = 2_000_000
    snapshots_per_decade: int = 8  # per decade of lambda^2
    t_max: float = math.inf
    stagnation_steps: int = 200  # consecutive non-melting steps before giving up
    median_window: int = 5

    def __post_init__(self) -> None:
        if not self.ds > 0.0 or not self.dt_max > 0.0:
            raise StefanError("ds and dt_max must be positive")
        if not 0.0 < self.lam_floor_ratio < 1.0:
            raise StefanError("lam_floor_ratio must lie in (0, 1)")
        if self.median_window < 1 or self.snapshots_per_decade < 1:
            raise StefanError("median_window and snapshots_per_decade must be >= 1")


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: float
    s: float
    lam: float
    lam_dot: float
    b: float  # median of a over the last steps
    fld: StefanField


@dataclass(frozen=True, eq=False)
class RunResult:
    t: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    lam_dot: np.ndarray
    stefan_residual: np.ndarray
    snapshots: list
    outcome: Literal["melted", "non_melting", "max_steps", "time_limit"]
    message: str = ""

    @property
    def melted(self) -> bool:
        return self.outcome == "melted"

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.lam) < 0.0))

    def columns(self) -> tuple[tuple[str, ...], np.ndarray]:
        return ("t", "s", "lambda", "lambda_dot", "stefan_residual"), np.column_stack(
            (self.t, self.s, self.lam, self.lam_dot, self.stefan_residual))


def run_to_extinction(fld: StefanField, settings: RunSettings = RunSettings(), source: Callable | None = None) -> RunResult:
    """March with ``dt = min(dt_max, lambda^2 ds, advection bound / 2)`` until ``lambda <= floor``.

    Snapshots are taken whenever ``lambda^2`` crosses a level on a
    logarithmic ladder, which tracks a logarithmic schedule in ``T - t``
    because ``T - t`` scales like ``lambda^2`` up to slowly varying factors.
    A front that stops receding for ``stagnation_steps`` consecutive steps
    ends the run with the ``non_melting`` outcome.
    """
    lam0 = fld.lam
    floor = settings.lam_floor_ratio * lam0
    ts, ss, lams, lds, res = [fld.t], [0.0], [fld.lam], [fld.lam_dot], [0.0]
    recent_a: list[float] = [fld.a]
    snaps = [Snapshot(fld.t, 0.0, fld.lam, fld.lam_dot, fld.a, fld)]
    ladder = math.log(fld.lam**2) - math.log(10.0) / settings.snapshots_per_decade
    s = 0.0
    stagnant = 0
    outcome = "max_steps"
    message = ""
    cur = fld
    for _ in range(settings.max_steps):
        dt = min(settings.dt_max, cur.lam**2 * settings.ds, 0.5 * advection_dt_bound(cur))
        nxt = step(cur, dt, source)
        if isinstance(nxt, ExtinctionEvent):
            outcome = "melted"
            message = f"front reached zero at t ~ {nxt.t + nxt.time_to_zero:.6g}"
            break
        s += dt / (0.5 * (cur.lam**2 + nxt.lam**2))
        stagnant = stagnant + 1 if nxt.lam >= cur.lam else 0
        cur = nxt
        ts.append(cur.t)
        ss.append(s)
        lams.append(cur.lam)
        lds.append(cur.lam_dot)
        res.append(cur.stefan_residual)
        recent_a.append(cur.a)
        if len(recent_a) > settings.median_window:
            recent_a.pop(0)
        if math.log(cur.lam**2) <= ladder:
            snaps.append(Snapshot(cur.t, s, cur.lam, cur.lam_dot, float(np.median(recent_a)), cur))
            while math.log(cur.lam**2) <= ladder:
                ladder -= math.log(10.0) / settings.snapshots_per_decade
        if cur.lam <= floor:
            outcome = "melted"
            message = f"lambda reached the floor {floor:.3e}"
            break
        if stagnant >= settings.stagnation_steps:
            outcome = "non_melting"
            message = f"front did not recede for {stagnant} consecutive steps (lambda = {cur.lam:.6g})"
            break
        if cur.t >= settings.t_max:
            outcome = "time_limit"
            message = f"t_max reached with lambda = {cur.lam:.6g}"
            break
    return RunResult(np.array(ts), np.array(ss), np.array(lams), np.array(lds), np.array(res), snaps, outcome, message)


def decomposition_series(run: RunResult, k: int = 0, table: BasisTable | None = None,
                         every: int = 1) -> list[DecompositionRecord]:
    """``project_decomposition`` at each snapshot, with b the median-smoothed ``a``."""
    table = table if table is not None else build_basis(max(k + 1, 1))
    out = []
    for snap in run.snapshots[::every]:
        b = snap.b
        if not 0.0 < b <= 0.05:
            continue
        out.append(project_decomposition(snap.fld, k, b, snap.s, table=table))
    return out


# ---------------------------------------------------------------------------
# non-concentration of energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NonconcentrationRecord:
    t: np.ndarray
    exterior: np.ndarray  # int_{r >= R0} |u_r|^2 dx
    cauchy: np.ndarray  # |exterior_{i+1} - exterior_i|
    annulus: np.ndarray  # int_{lambda <= r <= lambda B} |u_r|^2 dx
    annulus_scale: np.ndarray  # lambda b

    def decade_differences(self, per_decade: int) -> np.ndarray:
        """``|exterior|`` differences between snapshots one ladder decade apart, oldest first."""
        e = self.exterior[::per_decade]
        return np.abs(np.diff(e))


def _dirichlet_energy(fld: StefanField, lo: float, hi: float) -> float:
    r = fld.r
    ur = derivative_values(r, np.asarray(fld.u))
    f = _FOUR_PI * r * r * ur * ur
    mask = (r >= lo) & (r <= hi)
    if np.count_nonzero(mask) < 3:
        return 0.0
    return integrate(r[mask], f[mask]).value


def nonconcentration_diagnostic(snapshots: list, R0: float) -> NonconcentrationRecord:
    """Exterior Dirichlet energy beyond R0 and the near-front annulus energy at each snapshot."""
    if not snapshots:
        raise StefanError("no snapshots")
    if R0 <= snapshots[-1].lam:
        raise StefanError(f"R0 = {R0} does not exceed the final front radius {snapshots[-1].lam}")
    t, ext, ann, scale = [], [], [], []
    for sn in snapshots:
        b = sn.b
        t.append(sn.t)
        ext.append(_dirichlet_energy(sn.fld, R0, math.inf))
        if 0.0 < b < 1.0:
            B = math.sqrt(abs(math.log(b)) / (2.0 * b))
            ann.append(_dirichlet_energy(sn.fld, sn.lam, sn.lam * B))
            scale.append(sn.lam * b)
        else:
            ann.append(math.nan)
            scale.append(math.nan)
    ext = np.array(ext)
    return NonconcentrationRecord(np.array(t), ext, np.abs(np.diff(ext)), np.array(ann), np.array(scale))


# ---------------------------------------------------------------------------
# manufactured solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManufacturedSolution:
    """``u_m = -lam'(t) (R - lam) (2/pi) sin((pi/2)(r - lam)/(R - lam))`` with ``lam = l_inf + (l_0 - l_inf) e^{-t}``.

    ``u_m`` vanishes at the front, has slope ``-lam'`` there and zero slope at
    the wall, so it satisfies every boundary condition; ``source`` is
    ``d_t u_m - Lap u_m``.
    """

    R: float = 3.0
    l0: float = 1.0
    l_inf: float = 0.5

    def lam(self, t):
        return self.l_inf + (self.l0 - self.l_inf) * np.exp(-t)

    def lam_dot(self, t):
        return -(self.l0 - self.l_inf) * np.exp(-t)

    def lam_ddot(self, t):
        return (self.l0 - self.l_inf) * np.exp(-t)

    def u(self, t, r):
        lam, ld = self.lam(t), self.lam_dot(t)
        L = self.R - lam
        return -ld * L * (2.0 / math.pi) * np.sin(0.5 * math.pi * (r - lam) / L)

    def source(self, t, r):
        lam, ld, ldd = self.lam(t), self.lam_dot(t), self.lam_ddot(t)
        L = self.R - lam
        xi = (r - lam) / L
        th = 0.5 * math.pi * xi
        amp = -ld * L * (2.0 / math.pi)
        amp_dot = -(2.0 / math.pi) * (ldd * L - ld * ld)
        xi_t = -ld * (1.0 - xi) / L
        u_t = amp_dot * np.sin(th) + amp * np.cos(th) * 0.5 * math.pi * xi_t
        u_r = amp * np.cos(th) * 0.5 * math.pi / L
        u_rr = -amp * np.sin(th) * (0.5 * math.pi / L) ** 2
        return u_t - u_rr - 2.0 * u_r / r

    def initial_field(self, n: int) -> StefanField:
        x = make_grid(0.0, 1.0, n)
        return make_field(LANDAU, x, float(self.lam(0.0)), self.R, lambda r: self.u(0.0, r))


def manufactured_error(n: int, dt: float, t_end: float = 0.5, sol: ManufacturedSolution = ManufacturedSolution()):
    """Max-norm errors of u and lambda at ``t_end`` for the coupled run with the manufactured source."""
    fld = sol.initial_field(n)
    steps = int(round(t_end / dt))
    if not math.isclose(steps * dt, t_end, rel_tol=1e-9):
        raise StefanError("t_end must be a whole number of steps")
    max_res = 0.0
    for _ in range(steps):
        fld = step(fld, dt, sol.source)
        max_res = max(max_res, fld.stefan_residual)
    err_u = float(np.max(np.abs(fld.u - sol.u(fld.t, fld.r))))
    err_l = abs(fld.lam - float(sol.lam(fld.t)))
    return err_u, err_l, max_res


@dataclass(frozen=True)
class RefinementRow:
    n: int
    dt: float
    err_u: float
    err_lam: float
    stefan_residual: float


def refinement_table(mode: Literal["time", "space"], levels: int = 3, t_end: float = 0.5,
                     sol: ManufacturedSolution = ManufacturedSolution()) -> list[RefinementRow]:
    """Manufactured-solution errors under refinement.

    ``time`` halves dt on a fixed fine grid (expected order 1 in dt);
    ``space`` halves h with ``dt`` tied to ``h^2`` (expected order 2 in h).
    """
    rows = []
    for i in range(levels):
        if mode == "time":
            n, dt = 1601, 0.02 / 2**i
        elif mode == "space":
            n, dt = 20 * 2**i + 1, 0.025 / 4**i
        else:
            raise StefanError(f"unknown refinement mode {mode!r}")
        eu, el, res = manufactured_error(n, dt, t_end, sol)
        rows.append(RefinementRow(n, dt, eu, el, res))
    return rows


def observed_orders(rows: list[RefinementRow], mode: Literal["time", "space"]) -> list[float]:
    """``log2`` error ratios between consecutive levels (h halves each level in both modes)."""
    out = []
    for a, b in zip(rows[:-1], rows[1:]):
        out.append(math.log2(a.err_u / b.err_u))
    return out
