"""Reduced (finite-dimensional) dynamics of the melting front.

Renormalised time ``s`` satisfies ``dt/ds = lambda^2`` and the front obeys
``(log lambda)_s = -a``.

Stable regime (k = 0)
    ``b_s = -sqrt(2/pi) b^{5/2}`` and ``a = b`` at leading order.  The law
    integrates in closed form, ``b(s) = (b_0^{-3/2} + (3/2) sqrt(2/pi)(s - s_0))^{-2/3}``.

Excited regime (k >= 1)
    ``b = 1/(2ks)`` is frozen and the perturbation coefficients
    ``U_j = btilde_j s^{3/2 + alpha_k}`` obey ``U_s = G U / s + forcing``:

    * ``(U_k)_s     = (alpha/s) U_k - (k+1)/(C_k s) sum_j C_j U_j``
    * ``(U_{k-1})_s = ((1/k + alpha)/s) U_{k-1} + (k+1)(2k+1)/(2k C_k s) (A_{k-1}/A_k) sum_j C_j U_j``
    * ``(U_j)_s     = ((1 + alpha - j/k)/s) U_j`` for ``j <= k-2``

    with ``a = (k+1)/(2ks) - sqrt(2k) s^{-1-alpha} sum_j C_j U_j``.

Lambda is carried as ``log lambda`` throughout: in the stable regime it
underflows long before ``b`` reaches 1e-6.  Physical time steps are likewise
carried as logs, and the time to extinction ``T - t`` is assembled by a
reverse cumulative log-sum-exp plus a closed-form tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .laguerre_basis import BasisTable, build_basis

__all__ = [
    "STABLE_COEF",
    "StableState",
    "ExcitedState",
    "ReducedMatrix",
    "ForcingBand",
    "Trajectory",
    "StableRateReport",
    "ShootingResult",
    "ModulationError",
    "alpha_k",
    "gamma_k",
    "stable_closed_form",
    "stable_closed_form_log_lambda",
    "stable_time_to_go",
    "stable_step",
    "stable_trajectory",
    "stable_rate",
    "build_reduced_matrix",
    "excited_generator",
    "excited_initial_state",
    "excited_step",
    "excited_trajectory",
    "shoot_unstable",
    "frozen_residual",
    "growth_exponents",
    "ExcitedRateReport",
    "excited_rate",
]

STABLE_COEF = math.sqrt(2.0 / math.pi)
# b^{-3/2} grows at this rate in s under the leading stable law
_C_STABLE = 1.5 * STABLE_COEF
# T - t = lambda^2 (w^2/2 + w/KAPPA + 1/KAPPA^2) with w = b^{-1/2}
_KAPPA = 2.0 * math.sqrt(2.0 * math.pi)


class ModulationError(RuntimeError):
    """Raised for invalid modulation set-ups or failed integrations."""


def alpha_k(k: int) -> float:
    if k < 1:
        raise ValueError("alpha_k is defined for k >= 1")
    return 0.125 if k <= 4 else 1.0 / (2 * k)


def gamma_k(k: int) -> float:
    if k < 1:
        raise ValueError("gamma_k is defined for k >= 1")
    if k <= 3:
        return 0.125
    if k == 4:
        return 1.0 / 16.0
    return 1.0 / (2 * k)


# ---------------------------------------------------------------------------
# shared trajectory container
# ---------------------------------------------------------------------------


def _log_time_to_go(log_dt: np.ndarray, log_tail: float) -> np.ndarray:
    """``log(T - t_i)`` where ``t_i - t_{i-1} = exp(log_dt[i])`` and the tail follows the last sample."""
    n = log_dt.size
    out = np.empty(n)
    acc = log_tail
    out[-1] = acc
    for i in range(n - 2, -1, -1):
        acc = np.logaddexp(acc, log_dt[i + 1])
        out[i] = acc
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples of a reduced trajectory.

    ``log_tau[i] = log(T - t_i)`` and ``t`` accumulates physical time from the
    first sample (it saturates at ``T - t_0`` in floating point).
    """

    regime: str
    k: int
    s: np.ndarray
    b: np.ndarray
    log_lambda: np.ndarray
    log_dt: np.ndarray
    log_tau: np.ndarray
    U: np.ndarray | None = None
    W: np.ndarray | None = None  # columns (W_k, W_{k-1})

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    @property
    def t(self) -> np.ndarray:
        steps = np.exp(self.log_dt)
        steps[0] = 0.0
        return np.cumsum(steps)

    @property
    def T(self) -> float:
        """Extinction time measured from the first sample."""
        return float(math.exp(self.log_tau[0]))

    def columns(self) -> tuple[tuple[str, ...], np.ndarray]:
        names = ["s", "t", "b", "lambda", "log_lambda", "log_T_minus_t"]
        cols = [self.s, self.t, self.b, self.lam, self.log_lambda, self.log_tau]
        if self.U is not None:
            names += [f"U_{j}" for j in range(self.U.shape[1])]
            cols += [self.U[:, j] for j in range(self.U.shape[1])]
        if self.W is not None:
            names += ["W_k", "W_km1"]
            cols += [self.W[:, 0], self.W[:, 1]]
        return tuple(names), np.column_stack(cols)


# ---------------------------------------------------------------------------
# stable regime
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StableState:
    s: float
    t: float
    b: float
    log_lambda: float

    def __post_init__(self) -> None:
        if not self.b > 0.0:
            raise ModulationError(f"b must be positive, got {self.b}")

    @property
    def lam(self) -> float:
        return math.exp(self.log_lambda)

    @property
    def b0_coefficient(self) -> float:
        """The derived coefficient ``-(1/C_0) b^{3/2}`` of the ground mode."""
        return -(self.b ** 1.5) / math.sqrt(STABLE_COEF)


def stable_closed_form(b0: float, s0: float, s) -> np.ndarray:
    """``b(s)`` for the leading stable law."""
    s = np.asarray(s, dtype=np.float64)
    return (b0 ** -1.5 + _C_STABLE * (s - s0)) ** (-2.0 / 3.0)


def stable_closed_form_log_lambda(b0: float, log_lambda0: float, b) -> np.ndarray:
    """``log lambda`` as a function of b under the leading law: ``d log lambda / d b^{-1/2} = -sqrt(2 pi)``."""
    b = np.asarray(b, dtype=np.float64)
    return log_lambda0 - math.sqrt(2.0 * math.pi) * (b ** -0.5 - b0 ** -0.5)


def stable_time_to_go(b, log_lambda) -> np.ndarray:
    """``log(T - t)`` in closed form for the leading law, from the current (b, log lambda)."""
    w = np.asarray(b, dtype=np.float64) ** -0.5
    return 2.0 * np.asarray(log_lambda) + np.log(0.5 * w * w + w / _KAPPA + 1.0 / _KAPPA**2)


def stable_step(state: StableState, ds: float, include_correction: bool = False,
                correction: float = 0.0) -> StableState:
    """One RK4 step of ``b_s = -sqrt(2/pi) b^{5/2} (+ correction b^3)``, ``(log lambda)_s = -b``."""
    if ds < 0.0:
        raise ModulationError("ds must be nonnegative")
    if ds == 0.0:
        return state
    corr = correction if include_correction else 0.0
    s, b, lg, ldt = _kernels.stable_rk4(state.b, state.log_lambda, state.s, state.s + ds, 0.0,
                                        ds / state.s + 1.0, 0.0, STABLE_COEF, corr, 1)
    if s.size < 2:
        raise ModulationError(f"step ds={ds} drives b through zero")
    return StableState(float(s[-1]), state.t + math.exp(ldt[-1]), float(b[-1]), float(lg[-1]))


def stable_trajectory(b0: float = 0.01, s0: float | None = None, log_lambda0: float | None = None,
                      b_stop: float = 1e-6, ds_frac: float = 1.0 / 200.0, max_dlog: float = 0.05,
                      correction: float = 0.0, max_steps: int = 2_000_000) -> Trajectory:
    """Integrate the stable law until ``b <= b_stop``.

    ``s0`` defaults to the value that puts b0 on the pure power law
    ``b = ((3/2) sqrt(2/pi) s)^{-2/3}``.  ``log_lambda0`` defaults to
    ``-sqrt(2 pi / b0)``, the scale at which ``log lambda = -sqrt(2 pi / b)``
    holds exactly; any other choice shifts ``log(T - t)`` by a constant that
    the melting law only forgets logarithmically slowly.  Steps are
    ``ds = ds_frac * s``, capped so that ``log lambda`` changes by at most
    ``max_dlog`` per step.
    """
    if not 0.0 < b0 <= 0.05:
        raise ModulationError(f"b0 must lie in (0, 0.05], got {b0}")
    if s0 is None:
        s0 = b0 ** -1.5 / _C_STABLE
    if log_lambda0 is None:
        log_lambda0 = -math.sqrt(2.0 * math.pi / b0)
    s, b, lg, ldt = _kernels.stable_rk4(b0, log_lambda0, s0, math.inf, b_stop, ds_frac, max_dlog,
                                        STABLE_COEF, correction, max_steps)
    if b[-1] > b_stop:
        raise ModulationError(f"stopped at b={b[-1]:.3e} before reaching b_stop={b_stop:.1e}")
    log_tail = float(stable_time_to_go(b[-1], lg[-1]))
    return Trajectory("stable", 0, s, b, lg, ldt, _log_time_to_go(ldt, log_tail))


@dataclass(frozen=True, eq=False)
class StableRateReport:
    log_tau: np.ndarray
    ratio: np.ndarray
    ratio_closed_form: np.ndarray
    window: tuple[float, float]  # log(T - t) bounds of the final decade
    ratio_min: float
    ratio_max: float
    bias: float  # max |closed-form ratio - 1| over the window
    monotone: bool
    fit: object  # RateFit over the resolved range


def _stable_ratio(log_lambda, log_tau):
    return np.exp(log_lambda + np.log(np.abs(log_tau)) - math.log(4.0 * math.sqrt(math.pi)) - 0.5 * log_tau)


def stable_rate(traj: Trajectory, decades: float = 1.0) -> StableRateReport:
    """``lambda |log(T-t)| / (4 sqrt(pi) sqrt(T-t))`` over the final decades of ``T - t``.

    The same ratio is evaluated on the closed-form solution of the leading law
    at the same values of b; its distance from 1 is the finite-window bias.
    """
    from .rate_analysis import fit_rate

    if traj.regime != "stable":
        raise ModulationError("stable_rate needs a stable-regime trajectory")
    if traj.b[-1] > 1e-6 * (1.0 + 1e-12):
        raise ModulationError(f"insufficient decay: b ends at {traj.b[-1]:.3e} > 1e-6")
    ratio = _stable_ratio(traj.log_lambda, traj.log_tau)
    lg_cf = stable_closed_form_log_lambda(traj.b[0], traj.log_lambda[0], traj.b)
    tau_cf = stable_time_to_go(traj.b, lg_cf)
    ratio_cf = _stable_ratio(lg_cf, tau_cf)
    lo = float(traj.log_tau[-1])
    hi = lo + decades * math.log(10.0)
    sel = (traj.log_tau >= lo) & (traj.log_tau <= hi)
    r = ratio[sel]
    diffs = np.diff(np.abs(r - 1.0))
    fit = fit_rate(traj.log_tau, traj.log_lambda, "stable_log", window=(traj.log_tau[-1], -10.0))
    return StableRateReport(
        traj.log_tau, ratio, ratio_cf, (lo, hi), float(r.min()), float(r.max()),
        float(np.max(np.abs(ratio_cf[sel] - 1.0))), bool(np.all(diffs <= 1e-12)), fit,
    )


# ---------------------------------------------------------------------------
# excited regime
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReducedMatrix:
    k: int
    entries: np.ndarray
    mu1: float
    mu2: float
    P: np.ndarray  # rows: left eigenvectors for (mu2, mu1)

    @property
    def P_inv(self) -> np.ndarray:
        return np.linalg.inv(self.P)


def build_reduced_matrix(k: int, table: BasisTable | None = None) -> ReducedMatrix:
    """The 2x2 matrix acting on ``(U_k, U_{k-1})`` and its diagonalisation."""
    if k < 1:
        raise ValueError("the reduced matrix needs k >= 1")
    table = table if table is not None else build_basis(k)
    al = alpha_k(k)
    A, B, C = table.A, table.B, table.C
    m = np.array([
        [-(k + 1 - al), -(k + 1) * C[k - 1] / C[k]],
        [(k + 1) * (2 * k + 1) / (2 * k) * A[k - 1] / A[k],
         1.0 / k + al + (2 * k + 1) * (k + 1) * B[k - 1] / (2 * k * B[k])],
    ])
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = math.sqrt(tr * tr - 4.0 * det)
    # stable root without cancellation
    q = 0.5 * (tr + math.copysign(disc, tr))
    r1, r2 = q, det / q
    mu1, mu2 = max(r1, r2), min(r1, r2)
    rows = []
    for mu in (mu2, mu1):
        # left eigenvector: v^T (m - mu I) = 0
        v = np.array([m[1, 0], mu - m[0, 0]]) if abs(m[1, 0]) > abs(m[1, 1] - mu) else np.array([mu - m[1, 1], m[0, 1]])
        v = v / np.linalg.norm(v)
        rows.append(v)
    P = np.array(rows)
    for i in range(2):
        if P[i, i] < 0.0:
            P[i] = -P[i]
    m.setflags(write=False)
    P.setflags(write=False)
    return ReducedMatrix(k, m, float(mu1), float(mu2), P)


def excited_generator(k: int, table: BasisTable) -> tuple[np.ndarray, np.ndarray]:
    """``(G, C)`` with ``U_s = G U / s`` and ``C = (C_0..C_k)``."""
    al = alpha_k(k)
    C = np.asarray(table.C[: k + 1], dtype=np.float64)
    A = table.A
    g = np.zeros((k + 1, k + 1))
    for j in range(k - 1):
        g[j, j] = 1.0 + al - j / k
    g[k - 1, :] = (k + 1) * (2 * k + 1) / (2 * k * C[k]) * (A[k - 1] / A[k]) * C
    g[k - 1, k - 1] += 1.0 / k + al
    g[k, :] = -(k + 1) / C[k] * C
    g[k, k] += al
    return g, C


@dataclass(frozen=True)
class ForcingBand:
    """Bounded remainder forcing ``amp s^{-1-gamma} sin(omega log s + phase_i)`` on each U_j."""

    amp: float = 0.0
    gamma: float | None = None
    omega: float = 1.0
    band: float = 1.0  # declared constant c in |forcing| <= c s^{-1-gamma}

    def __post_init__(self) -> None:
        if abs(self.amp) > self.band:
            raise ModulationError(f"forcing amplitude {self.amp} exceeds the declared band {self.band}")

    def resolved_gamma(self, k: int) -> float:
        return gamma_k(k) if self.gamma is None else self.gamma

    @staticmethod
    def phases(k: int) -> np.ndarray:
        return 0.3 + 0.7 * np.arange(k + 1, dtype=np.float64)

    def value(self, k: int, s: float) -> np.ndarray:
        if self.amp == 0.0:
            return np.zeros(k + 1)
        return self.amp * s ** (-1.0 - self.resolved_gamma(k)) * np.sin(self.omega * math.log(s) + self.phases(k))


@dataclass(frozen=True, eq=False)
class ExcitedState:
    k: int
    s: float
    t: float
    log_lambda: float
    U: np.ndarray
    W_pair: tuple[float, float]

    @property
    def b(self) -> float:
        return 1.0 / (2.0 * self.k * self.s)

    @property
    def lam(self) -> float:
        return math.exp(self.log_lambda)

    @property
    def btilde(self) -> np.ndarray:
        return self.U / self.s ** (1.5 + alpha_k(self.k))


def _w_pair(mat: ReducedMatrix, U: np.ndarray) -> tuple[float, float]:
    k = mat.k
    w = mat.P @ np.array([U[k], U[k - 1]])
    return float(w[0]), float(w[1])


def excited_initial_state(k: int, s0: float, W_k: float, W_km1: float, U_low=(), log_lambda0: float | None = None,
                          mat: ReducedMatrix | None = None) -> ExcitedState:
    """State at ``s0`` from the diagonal coordinates ``(W_k, W_{k-1})`` and ``U_0..U_{k-2}``.

    ``log_lambda0`` defaults to ``-log(k s0) / 2 - 1``, which puts ``T - t``
    near ``e^{-2}`` at ``s0`` so the whole trajectory lies below ``tau = 1``.
    """
    if s0 <= 0.0:
        raise ModulationError("s0 must be positive")
    if log_lambda0 is None:
        log_lambda0 = -0.5 * math.log(k * s0) - 1.0
    mat = mat if mat is not None else build_reduced_matrix(k)
    U = np.zeros(k + 1)
    if k > 1:
        U[: k - 1] = np.asarray(U_low, dtype=np.float64).reshape(k - 1)
    uk, ukm1 = mat.P_inv @ np.array([W_k, W_km1])
    U[k], U[k - 1] = uk, ukm1
    return ExcitedState(k, s0, 0.0, log_lambda0, U, (float(W_k), float(W_km1)))


class _ExcitedSystem:
    def __init__(self, k: int, table: BasisTable | None, forcing: ForcingBand | None):
        self.k = k
        self.table = table if table is not None else build_basis(k)
        self.mat = build_reduced_matrix(k, self.table)
        self.G, self.C = excited_generator(k, self.table)
        self.forcing = forcing if forcing is not None else ForcingBand()
        self.alpha = alpha_k(k)

    def run(self, U0, log_lambda0, s0, s_end, ds_frac, max_steps):
        f = self.forcing
        return _kernels.excited_rk4(U0, log_lambda0, s0, s_end, ds_frac, self.G, self.C, self.k, self.alpha,
                                    f.amp, f.resolved_gamma(self.k), f.omega, f.phases(self.k), max_steps)

    def rhs(self, s: float, U: np.ndarray) -> np.ndarray:
        return self.G @ U / s + self.forcing.value(self.k, s)

    def W(self, U: np.ndarray) -> np.ndarray:
        k = self.k
        return np.column_stack((U[:, k], U[:, k - 1])) @ self.mat.P.T


def excited_step(state: ExcitedState, ds: float, forcing: ForcingBand | None = None,
                 table: BasisTable | None = None) -> ExcitedState:
    """One RK4 step of the U system together with log lambda and t."""
    if state.s <= 0.0:
        raise ModulationError("s must be positive")
    if ds < 0.0:
        raise ModulationError("ds must be nonnegative")
    if ds == 0.0:
        return state
    sys_ = _ExcitedSystem(state.k, table, forcing)
    s, U, lg, ldt = sys_.run(state.U, state.log_lambda, state.s, state.s + ds, ds / state.s + 1.0, 1)
    Un = U[-1].copy()
    return ExcitedState(state.k, float(s[-1]), state.t + math.exp(ldt[-1]), float(lg[-1]), Un,
                        _w_pair(sys_.mat, Un))


def excited_trajectory(state: ExcitedState, s_end: float, forcing: ForcingBand | None = None,
                       ds_frac: float = 1.0 / 200.0, table: BasisTable | None = None,
                       max_steps: int = 2_000_000) -> Trajectory:
    """Integrate from ``state`` to ``s_end``; the tail beyond uses ``lambda ~ s^{-(k+1)/(2k)}``."""
    k = state.k
    sys_ = _ExcitedSystem(k, table, forcing)
    s, U, lg, ldt = sys_.run(state.U, state.log_lambda, state.s, s_end, ds_frac, max_steps)
    if s[-1] < s_end * (1.0 - 1e-12):
        raise ModulationError("integration stopped before s_end (max_steps too small)")
    # int_{s_e}^inf lambda_e^2 (s/s_e)^{-(k+1)/k} ds = k lambda_e^2 s_e
    log_tail = 2.0 * lg[-1] + math.log(k * s[-1])
    b = 1.0 / (2.0 * k * s)
    return Trajectory("excited", k, s, b, lg, ldt, _log_time_to_go(ldt, log_tail), U, sys_.W(U))


# ---------------------------------------------------------------------------
# shooting on the unstable directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShootingResult:
    k: int
    s0: float
    horizon: float
    delta: float
    W_k0: float
    W_km1_0: float
    U_low0: np.ndarray
    inside_to_horizon: bool
    max_norm: float  # max over the trajectory of W_{k-1}^2 + sum U_j^2/delta^2
    max_abs_W_k: float
    probes: list = field(default_factory=list)  # (coordinate, value, exit sign, exit s or inf)
    outgoing: list = field(default_factory=list)  # d/ds of the bootstrap norm at probed exits
    initial_state: ExcitedState | None = None

    @property
    def outgoing_all_positive(self) -> bool:
        return all(d > 0.0 for d in self.outgoing)


def _bootstrap_norm(sys_: _ExcitedSystem, U: np.ndarray, delta: float) -> np.ndarray:
    k = sys_.k
    W = sys_.W(U)
    return W[:, 1] ** 2 + np.sum((U[:, : k - 1] / delta) ** 2, axis=1)


def _outgoing_derivative(sys_: _ExcitedSystem, s: float, U: np.ndarray, delta: float) -> float:
    k = sys_.k
    dU = sys_.rhs(s, U)
    w = sys_.mat.P @ np.array([U[k], U[k - 1]])
    dw = sys_.mat.P @ np.array([dU[k], dU[k - 1]])
    return float(2.0 * w[1] * dw[1] + 2.0 * np.sum(U[: k - 1] * dU[: k - 1]) / delta**2)


def _first_exit(norm: np.ndarray, radius_sq: float) -> int:
    out = np.nonzero(~(norm <= radius_sq))[0]
    return int(out[0]) if out.size else -1


def shoot_unstable(k: int, s0: float = 1e3, horizon_factor: float = 1e3, forcing: ForcingBand | None = None,
                   delta: float = 1e-2, W_k0: float = 0.0, ds_frac: float = 1.0 / 200.0,
                   table: BasisTable | None = None, tol: float = 1e-14, max_bisect: int = 200) -> ShootingResult:
    """Initial unstable coordinates keeping the trajectory in the bootstrap ball up to ``horizon``.

    The ball is ``W_{k-1}^2 + sum_{j<=k-2} U_j^2 / delta^2 <= 4``.  Each
    coordinate is found by bisection on the sign of the coordinate when the
    trajectory leaves: the ``U_j`` (j <= k-2) evolve on their own, so they are
    fixed first, one at a time; ``W_{k-1}`` is bisected last with them in place.
    Probes still inside at the horizon are classified by the sign of the
    coordinate there.  Every probe that leaves the ball contributes the
    derivative of the ball norm at its first outside sample.
    """
    if k < 1:
        raise ModulationError("shooting needs k >= 1")
    if abs(W_k0) > 1.0:
        raise ModulationError("the stable coordinate must satisfy |W_k(s0)| <= 1")
    sys_ = _ExcitedSystem(k, table, forcing)
    horizon = s0 * horizon_factor
    probes: list = []
    outgoing: list = []
    U_low = np.zeros(max(k - 1, 0))

    def simulate(w_km1, u_low):
        st = excited_initial_state(k, s0, W_k0, w_km1, u_low, None, sys_.mat)
        s, U, _, _ = sys_.run(st.U, st.log_lambda, s0, horizon, ds_frac, 10_000_000)
        return st, s, U

    def classify(tag, value, s, U, coord_series, norm):
        i = _first_exit(norm, 4.0)
        if i < 0:
            # still inside at the horizon: the sign of the unstable coordinate there
            # tells which way the trajectory would leave, so bisection can continue
            sign = 1 if coord_series[-1] > 0.0 else -1
            probes.append((tag, value, sign, math.inf))
            return sign
        sign = 1 if coord_series[i] > 0.0 else -1
        probes.append((tag, value, sign, float(s[i])))
        if np.all(np.isfinite(U[i])):
            outgoing.append(_outgoing_derivative(sys_, float(s[i]), U[i], delta))
        return sign

    def bisect(tag, lo, hi, evaluate):
        s_lo, s_hi = evaluate(lo), evaluate(hi)
        if s_lo == s_hi:
            raise ModulationError(f"bisection bracket for {tag} not found: exit signs {s_lo:+d} at {lo}, {s_hi:+d} at {hi}")
        for _ in range(max_bisect):
            mid = 0.5 * (lo + hi)
            if hi - lo <= tol * max(1.0, abs(mid)):
                break
            if evaluate(mid) == s_lo:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # low modes: each U_j evolves on its own, exit when |U_j| > 2 delta
    for j in range(k - 1):
        def eval_u(val, j=j):
            u_low = U_low.copy()
            u_low[j] = val
            _, s, U = simulate(0.0, u_low)
            col = U[:, j]
            return classify(f"U_{j}", val, s, U, col, (col / delta) ** 2)
        U_low[j] = bisect(f"U_{j}", -2.0 * delta, 2.0 * delta, eval_u)

    def eval_w(val):
        _, s, U = simulate(val, U_low)
        W = sys_.W(U)
        return classify("W_km1", val, s, U, W[:, 1], _bootstrap_norm(sys_, U, delta))

    w_best = bisect("W_km1", -2.0, 2.0, eval_w)
    st, s, U = simulate(w_best, U_low)
    norm = _bootstrap_norm(sys_, U, delta)
    W = sys_.W(U)
    inside = bool(np.all(norm <= 4.0) and s[-1] >= horizon * (1.0 - 1e-12))
    return ShootingResult(k, s0, horizon, delta, W_k0, float(w_best), U_low.copy(), inside,
                          float(np.max(norm)), float(np.max(np.abs(W[:, 0]))), probes, outgoing, st)


def growth_exponents(k: int, s0: float = 1e3, decades: float = 2.0, table: BasisTable | None = None,
                     ds_frac: float = 1.0 / 400.0) -> tuple[float, float]:
    """Log-log slopes of |U| along pure ``W_{k-1}`` and pure ``W_k`` data, unforced.

    These should reproduce ``(mu1, mu2)`` of the reduced matrix.
    """
    sys_ = _ExcitedSystem(k, table, None)
    slopes = []
    for w_k, w_km1 in ((0.0, 1.0), (1.0, 0.0)):
        st = excited_initial_state(k, s0, w_k, w_km1, np.zeros(max(k - 1, 0)), None, sys_.mat)
        s, U, _, _ = sys_.run(st.U, st.log_lambda, s0, s0 * 10.0**decades, ds_frac, 10_000_000)
        norm = np.linalg.norm(U, axis=1)
        slopes.append(float(np.polyfit(np.log(s), np.log(norm), 1)[0]))
    return slopes[0], slopes[1]



@dataclass(frozen=True, eq=False)
class ExcitedRateReport:
    shooting: ShootingResult
    trajectory: Trajectory
    fit: object  # RateFit, stable_log model
    fit_pure: object  # RateFit, pure_power model

    @property
    def expected_p(self) -> float:
        return 0.5 * (self.shooting.k + 1)


def excited_rate(k: int, s0: float = 1e3, forcing: ForcingBand | None = None, W_k0: float = 1.0,
                 delta: float = 1e-2, decades: float = 2.0, table: BasisTable | None = None) -> ExcitedRateReport:
    """Shoot the unstable coordinates, integrate, and fit the melting rate over the final decades.

    The shooting horizon is ``10^{2k+1} s0``.  Beyond the horizon the
    unstable coordinates are no longer controlled, so the trajectory and the
    fit window both stop there.
    """
    from .rate_analysis import fit_rate

    table = table if table is not None else build_basis(k + 1)
    sh = shoot_unstable(k, s0, 10.0 ** (2 * k + 1), forcing, delta, W_k0, table=table)
    tr = excited_trajectory(sh.initial_state, sh.horizon, forcing, table=table)
    window = (float(tr.log_tau[-1]), float(tr.log_tau[-1]) + decades * math.log(10.0))
    fit = fit_rate(tr.log_tau, tr.log_lambda, "stable_log", window=window)
    pure = fit_rate(tr.log_tau, tr.log_lambda, "pure_power", window=window)
    return ExcitedRateReport(sh, tr, fit, pure)

# ---------------------------------------------------------------------------
# frozen excited values
# ---------------------------------------------------------------------------


def frozen_residual(k: int, s, table: BasisTable | None = None, lam_bk=None) -> dict:
    """Residuals of the frozen values ``b = 1/(2ks)``, ``a^e = (k+1)/(2ks)``, ``b_k^e = -(k+1)/(C_k (2ks)^{3/2})``.

    ``lam_bk(b)`` gives the eigenvalue; by default the two-term expansion
    ``2k + C_k^2 sqrt(b)``.  Returns arrays for the three relations:
    ``(b_k^e)_s + b b_k^e lambda_{b,k} + (a^e - b) b_k^e``, ``b_s + 2b(a^e - b)``
    and ``a^e + C_k b_k^e / sqrt(b)``.
    """
    table = table if table is not None else build_basis(k)
    ck = float(table.C[k])
    s = np.asarray(s, dtype=np.float64)
    b = 1.0 / (2 * k * s)
    b_s = -1.0 / (2 * k * s * s)
    ae = (k + 1) / (2 * k * s)
    bke = -(k + 1) / (ck * (2 * k * s) ** 1.5)
    bke_s = 1.5 * (k + 1) / (ck * (2 * k) ** 1.5) * s ** -2.5
    lam = (2 * k + ck * ck * np.sqrt(b)) if lam_bk is None else np.asarray(lam_bk(b))
    return {
        "mode": bke_s + b * bke * lam + (ae - b) * bke,
        "b_law": b_s + 2 * b * (ae - b),
        "a_identity": ae + ck * bke / np.sqrt(b),
    }
