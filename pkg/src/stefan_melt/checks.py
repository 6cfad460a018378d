"""Verification suite: one function per acceptance criterion.

Each check returns a ``CheckResult`` with the measured quantities and a
pass flag evaluated at the stated tolerance.  ``run_checks`` drives them for
the ``verify`` command; the test suite calls them directly.  Checks that
need the PDE melting run share a single run per ``Context``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import modulation_dynamics as md
from . import rate_analysis as ra
from . import spectral_solver as sp
from . import stefan_pde as pde
from .laguerre_basis import BasisTable, build_basis, harmonic_residual, lambda_recurrence_check
from .weighted_calculus import WeightedFunction, check_poincare, inner_product_rho, make_grid

__all__ = ["CheckResult", "Context", "CHECKS", "QUICK", "run_checks", "random_smooth", "melting_run"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary} ({self.seconds:.1f} s)"


@dataclass
class Context:
    seed: int = 0
    table: BasisTable = field(default_factory=lambda: build_basis(12))
    _melt: dict | None = None


# ---------------------------------------------------------------------------
# basis and weighted calculus
# ---------------------------------------------------------------------------


def basis_exactness(ctx: Context) -> CheckResult:
    t = ctx.table
    z = make_grid(0.0, 16.0, 8001).nodes
    P = [WeightedFunction(make_grid(0.0, 16.0, 8001), t.P(k, z)) for k in range(11)]
    gram = np.array([[inner_product_rho(P[i], P[j], 0.0).value for j in range(11)] for i in range(11)])
    gram_err = float(np.max(np.abs(gram - np.eye(11))))
    p0_err = max(abs(float(t.P(k, 0.0)) - float(t.C[k])) for k in range(11))
    c0_err = abs(float(t.C[0]) ** 2 - math.sqrt(2.0 / math.pi))
    grid = make_grid(0.0, 16.0, 4001)
    harm = max(harmonic_residual(t, k, grid) for k in range(11))
    rec = max(lambda_recurrence_check(t, k, grid) for k in range(1, 11))
    ok = gram_err <= 1e-10 and p0_err <= 1e-12 and c0_err <= 1e-12 and harm <= 1e-8 and rec <= 1e-10
    return CheckResult("basis_exactness", ok,
                       f"gram {gram_err:.2e} P_k(0)-C_k {p0_err:.2e} C_0^2 {c0_err:.2e} "
                       f"harmonic {harm:.2e} recurrence {rec:.2e}",
                       {"gram": gram_err, "P0": p0_err, "C0": c0_err, "harmonic": harm, "recurrence": rec})


def random_smooth(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random smooth radial profile: cubic times a Gaussian envelope plus an oscillation."""
    c = rng.normal(size=4)
    beta = rng.uniform(0.02, 0.5)
    omega = rng.uniform(0.0, 3.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    poly = c[0] + c[1] * z + c[2] * z**2 + c[3] * z**3
    return (poly + rng.normal() * np.sin(omega * z + phase)) * np.exp(-beta * z * z)


def weighted_poincare(ctx: Context, trials: int = 1000) -> CheckResult:
    grid = make_grid(0.0, 13.0, 2001)
    rng = np.random.default_rng(ctx.seed)
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        rec = check_poincare(WeightedFunction(grid, random_smooth(grid.nodes, rng)))
        violations += not rec.holds
        worst = max(worst, rec.lhs / rec.rhs)
    return CheckResult("weighted_poincare", violations == 0,
                       f"{violations} violations in {trials} trials, max lhs/rhs {worst:.4f}",
                       {"violations": violations, "worst_ratio": worst})


# ---------------------------------------------------------------------------
# spectral solver
# ---------------------------------------------------------------------------


def eigen_expansion(ctx: Context, n: int = 4000) -> CheckResult:
    pairs = []
    for b in (1e-2, 1e-3, 1e-4):
        pairs += sp.eigen_smallest(sp.default_problem(b, 3, n), 4, ctx.table)
    recs = [sp.verify_expansion(pairs, k, ctx.table) for k in range(4)]
    worst_c = max(r.relative_error for r in recs)
    worst_slope = max(abs(r.slope - 1.0) for r in recs)
    ok = worst_c <= 0.05 and worst_slope <= 0.2
    return CheckResult("eigen_expansion", ok,
                       "C fit rel err " + " ".join(f"{r.relative_error:.3f}" for r in recs)
                       + "; slopes " + " ".join(f"{r.slope:.3f}" for r in recs),
                       {"relative_error": [r.relative_error for r in recs], "slope": [r.slope for r in recs]})


def exact_identities(ctx: Context, b: float = 1e-3, n: int = 4000, count: int = 20) -> CheckResult:
    g1 = sp.identity_grid(b, n)
    g2 = sp.identity_grid(b, 2 * n - 1)
    rng = np.random.default_rng(ctx.seed)
    r1, r2 = [], []
    for _ in range(count):
        state = rng.bit_generator.state
        u1 = sp.random_admissible(b, g1, rng)
        twin = np.random.default_rng()
        twin.bit_generator.state = state
        u2 = sp.random_admissible(b, g2, twin)
        a, c = sp.identity_suite(b, u1), sp.identity_suite(b, u2)
        r1.append((a.coercivity_residual, a.trace_residual))
        r2.append((c.coercivity_residual, c.trace_residual))
    r1, r2 = np.array(r1), np.array(r2)
    worst = float(r1.max())
    orders = np.log2(r1.max(axis=0) / r2.max(axis=0))
    ok = worst <= 1e-6 and bool(np.all(np.abs(orders - 2.0) <= 0.3))
    return CheckResult("exact_identities", ok,
                       f"max residual {worst:.2e} at n={n}; order under h/2: coercivity {orders[0]:.3f} trace {orders[1]:.3f}",
                       {"max_residual": worst, "orders": orders.tolist()})


def spectral_gap(ctx: Context, b: float = 1e-3, trials: int = 200) -> CheckResult:
    recs = [sp.spectral_gap_check(b, k, trials, seed=ctx.seed) for k in range(3)]
    ok = all(r.holds for r in recs)
    return CheckResult("spectral_gap", ok,
                       "; ".join(f"k={r.k} min {r.min_ratio:.5f} >= {r.bound:.5f}" for r in recs),
                       {"min_ratio": [r.min_ratio for r in recs], "bound": [r.bound for r in recs]})


# ---------------------------------------------------------------------------
# modulation dynamics
# ---------------------------------------------------------------------------


def reduced_matrix(ctx: Context) -> CheckResult:
    worst = 0.0
    for k in range(1, 11):
        m = md.build_reduced_matrix(k, ctx.table)
        a = md.alpha_k(k)
        worst = max(worst, abs(m.mu1 - (a + 1.0 / k + 1.0)), abs(m.mu2 - (a - 1.0)))
    m1 = md.build_reduced_matrix(1, ctx.table)
    expected = np.array([[-15.0 / 8.0, -2.0 * math.sqrt(2.0 / 3.0)], [math.sqrt(6.0), 25.0 / 8.0]])
    entry_err = float(np.max(np.abs(m1.entries - expected)))
    ok = worst <= 1e-12 and entry_err <= 1e-12
    return CheckResult("reduced_matrix", ok, f"eigenvalue error {worst:.2e}, k=1 entry error {entry_err:.2e}",
                       {"eigen_error": worst, "entry_error": entry_err})


def stable_modulation_rate(ctx: Context) -> CheckResult:
    traj = md.stable_trajectory()
    rep = md.stable_rate(traj)
    calib = ra.calibrate_stable_bias(rep.fit.log_tau_window)
    ok = 0.95 <= rep.ratio_min and rep.ratio_max <= 1.05
    return CheckResult("stable_modulation_rate", ok,
                       f"ratio in [{rep.ratio_min:.5f}, {rep.ratio_max:.5f}] over the final decade; "
                       f"closed-form bias {rep.bias:.2e}; fit bias p {calib['p_bias']:.1e} q {calib['q_bias']:.1e}",
                       {"ratio_min": rep.ratio_min, "ratio_max": rep.ratio_max, "bias": rep.bias,
                        "p": rep.fit.p, "q": rep.fit.q})


def excited_modulation_rate(ctx: Context) -> CheckResult:
    vals = {}
    ok = True
    parts = []
    for k in (1, 2):
        rep = md.excited_rate(k, table=ctx.table)
        dp = abs(rep.fit.p - rep.expected_p)
        ok &= dp <= 0.02 and abs(rep.fit.q) <= 0.1
        vals[f"k{k}"] = {"p": rep.fit.p, "q": rep.fit.q}
        parts.append(f"k={k} p {rep.fit.p:.4f} (expect {rep.expected_p}) q {rep.fit.q:+.4f}")
    return CheckResult("excited_modulation_rate", ok, "; ".join(parts), vals)


def brouwer_shooting(ctx: Context, amp: float = 1e-3) -> CheckResult:
    sh = md.shoot_unstable(1, forcing=md.ForcingBand(amp=amp), table=ctx.table)
    ok = sh.inside_to_horizon and bool(sh.outgoing) and sh.outgoing_all_positive
    return CheckResult("brouwer_shooting", ok,
                       f"W_0(s0) = {sh.W_km1_0:.6e}, inside to s = {sh.horizon:.0e}: {sh.inside_to_horizon}, "
                       f"{len(sh.outgoing)} boundary probes, min outgoing derivative {min(sh.outgoing, default=math.nan):.3e}",
                       {"W0": sh.W_km1_0, "inside": sh.inside_to_horizon, "s0": sh.s0, "horizon": sh.horizon,
                        "forcing_amp": amp, "probes": len(sh.outgoing),
                        "min_outgoing": min(sh.outgoing, default=math.nan)})


# ---------------------------------------------------------------------------
# PDE
# ---------------------------------------------------------------------------


def pde_correctness(ctx: Context) -> CheckResult:
    time_rows = pde.refinement_table("time")
    space_rows = pde.refinement_table("space")
    ot = pde.observed_orders(time_rows, "time")
    os_ = pde.observed_orders(space_rows, "space")
    stefan = max(r.stefan_residual for r in time_rows + space_rows)
    energy = pde.energy_refinement()
    rel = np.array([r.max_relative for r in energy])
    oe = np.log2(rel[:-1] / rel[1:])
    ok = (all(abs(o - 1.0) <= 0.2 for o in ot) and all(abs(o - 2.0) <= 0.2 for o in os_)
          and stefan <= 1e-4 and bool(np.all(np.abs(oe - 1.0) <= 0.2)))
    return CheckResult("pde_correctness", ok,
                       "orders dt " + " ".join(f"{o:.3f}" for o in ot) + ", h " + " ".join(f"{o:.3f}" for o in os_)
                       + f"; Stefan residual {stefan:.2e}; energy orders "
                       + " ".join(f"{o:.2f}" for o in oe.ravel()),
                       {"time_orders": ot, "space_orders": os_, "stefan_residual": stefan,
                        "energy_orders": oe.tolist()})


def melting_run(ctx: Context) -> dict:
    """The k = 0, b0 = 0.01 prepared run with its fits and diagnostics (computed once per context)."""
    if ctx._melt is None:
        fld, prof = pde.init_from_profile(0, 0.01)
        settings = pde.RunSettings(ds=0.02)
        run = pde.run_to_extinction(fld, settings)
        T = ra.estimate_T(run.t, run.lam)
        fit = ra.fit_rate_t(run.t, run.lam, T.T, "stable_log")
        pure = ra.fit_rate_t(run.t, run.lam, T.T, "pure_power")
        recs = pde.decomposition_series(run, 0, ctx.table)
        nc = pde.nonconcentration_diagnostic(run.snapshots, 2.0)
        ctx._melt = {"run": run, "profile": prof, "T": T, "fit": fit, "pure": pure, "records": recs,
                     "nonconcentration": nc, "per_decade": settings.snapshots_per_decade}
    return ctx._melt


def pde_melting(ctx: Context) -> CheckResult:
    m = melting_run(ctx)
    run, fit, pure, recs = m["run"], m["fit"], m["pure"], m["records"]
    reached = run.lam[-1] <= 1e-2 * run.lam[0] and run.melted
    e_ratio = np.array([r.E_over_b4 for r in recs])
    bounded = bool(np.all(np.isfinite(e_ratio)) and e_ratio.max() <= 10.0)
    ok = reached and abs(fit.p - 0.5) <= 0.05 and fit.residual < pure.residual and bounded
    return CheckResult("pde_melting", ok,
                       f"lambda {run.lam[0]:.3g} -> {run.lam[-1]:.3g} by T = {m['T'].T:.6f}; p {fit.p:.4f} q {fit.q:.4f}; "
                       f"residual log {fit.residual:.2e} vs power {pure.residual:.2e}; max E/b^4 {e_ratio.max():.2e}; "
                       f"max Stefan residual {run.stefan_residual.max():.1e}",
                       {"p": fit.p, "q": fit.q, "residual_log": fit.residual, "residual_power": pure.residual,
                        "max_E_over_b4": float(e_ratio.max()), "T": m["T"].T, "melted": bool(run.melted),
                        "lambda_ratio": float(run.lam[-1] / run.lam[0]),
                        "max_stefan_residual": float(run.stefan_residual.max())})


def nonconcentration(ctx: Context) -> CheckResult:
    m = melting_run(ctx)
    nc = m["nonconcentration"]
    diffs = nc.decade_differences(m["per_decade"])
    cauchy = bool(np.all(np.diff(diffs) < 0.0))
    ann = nc.annulus[np.isfinite(nc.annulus)]
    decreasing = bool(np.all(np.diff(ann) < 0.0))
    ok = cauchy and decreasing and ann[-1] < 1e-2 * ann[0]
    return CheckResult("nonconcentration", ok,
                       "decade differences " + " ".join(f"{d:.1e}" for d in diffs)
                       + f"; annulus {ann[0]:.2e} -> {ann[-1]:.2e} (monotone {decreasing})",
                       {"decade_differences": diffs.tolist(), "annulus_first": float(ann[0]),
                        "annulus_last": float(ann[-1]), "annulus_monotone": decreasing})


CHECKS: dict[str, Callable[[Context], CheckResult]] = {
    "basis_exactness": basis_exactness,
    "weighted_poincare": weighted_poincare,
    "eigen_expansion": eigen_expansion,
    "exact_identities": exact_identities,
    "spectral_gap": spectral_gap,
    "reduced_matrix": reduced_matrix,
    "stable_modulation_rate": stable_modulation_rate,
    "excited_modulation_rate": excited_modulation_rate,
    "brouwer_shooting": brouwer_shooting,
    "pde_correctness": pde_correctness,
    "pde_melting": pde_melting,
    "nonconcentration": nonconcentration,
}
QUICK = tuple(name for name in CHECKS if name not in ("pde_melting", "nonconcentration"))


def run_checks(names=None, ctx: Context | None = None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    ctx = ctx if ctx is not None else Context()
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        try:
            res = CHECKS[name](ctx)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
        res = CheckResult(res.name, res.passed, res.summary, res.values, time.perf_counter() - t0)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
