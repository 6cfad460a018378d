"""``stefan-melt`` command line.

    stefan-melt <spectrum|modulate|simulate|fit|verify> --config FILE [--set k=v]... [--out DIR]

Exit codes: 0 success, 1 a verification check failed, 2 invalid
configuration, 3 runtime or numerical failure.  ``STEFAN_MELT_THREADS``
caps the number of worker threads used by sweeps.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import _kernels
from . import checks as chk
from . import modulation_dynamics as md
from . import rate_analysis as ra
from . import spectral_solver as sp
from . import stefan_pde as pde
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .laguerre_basis import build_basis
from .persistence import atomic_write_text, config_hash, read_csv, svg_line_plot, write_csv, write_json

__all__ = ["main", "EXIT_OK", "EXIT_CHECK_FAILED", "EXIT_CONFIG", "EXIT_RUNTIME", "thread_cap"]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class CheckFailed(Exception):
    pass


def thread_cap() -> int:
    raw = os.environ.get("STEFAN_MELT_THREADS")
    if raw is None or raw.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STEFAN_MELT_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"STEFAN_MELT_THREADS must be a positive integer, got {raw!r}")
    return n


class _Run:
    """Output directory, metadata and console for one command."""

    def __init__(self, command: str, cfg: RunConfig, doc: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.hash = config_hash(doc)
        self.meta = {"config_hash": self.hash, "command": command, "package_version": __version__,
                     "backend": _kernels.BACKEND, "seed": cfg.seed}

    def csv(self, name: str, columns, rows, **extra) -> Path:
        return write_csv(self.out / name, columns, rows, {**self.meta, **extra})

    def json(self, name: str, report: dict) -> Path:
        return write_json(self.out / name, report, self.meta)

    def svg(self, name: str, series, **kw) -> Path:
        return atomic_write_text(self.out / name, svg_line_plot(series, meta=self.meta, **kw))


def _fit_dict(fit: ra.RateFit) -> dict:
    return {"model": fit.model, "T": fit.T, "p": fit.p, "q": fit.q, "c": fit.c, "residual": fit.residual,
            "window_t": list(fit.window), "window_log_T_minus_t": list(fit.log_tau_window)}


def _fit_overlay(fit: ra.RateFit, log_tau, log_lambda, label: str = "data"):
    """log10 series for the data and the fitted law (log axes would underflow for the stable regime)."""
    lo, hi = fit.log_tau_window
    x = np.linspace(lo, hi, 200)
    model = math.log(fit.c) + fit.p * x - (fit.q * np.log(np.abs(x)) if fit.model == "stable_log" else 0.0)
    sel = np.isfinite(log_tau) & np.isfinite(log_lambda)
    ln10 = math.log(10.0)
    return [(label, log_tau[sel] / ln10, log_lambda[sel] / ln10), (f"{fit.model} fit", x / ln10, model / ln10)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_spectrum(run: _Run) -> int:
    c = run.cfg.spectrum
    table = build_basis(max(c.kmax + 1, 2))

    def solve(b):
        return sp.eigen_smallest(sp.default_problem(b, c.kmax, c.n), c.kmax + 1, table)

    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(c.b_values))) as pool:
        results = list(pool.map(solve, c.b_values))
    pairs = [p for group in results for p in group]
    run.csv("spectrum.csv", sp.SWEEP_COLUMNS, sp.rows_from_pairs(pairs, table), n=c.n)
    report: dict = {"b": c.b_values, "kmax": c.kmax, "n": c.n, "expansion": []}
    bs = sorted(set(c.b_values))
    if len(bs) >= 3 and bs[-1] / bs[0] >= 99.0:
        for k in range(c.kmax + 1):
            rec = sp.verify_expansion(pairs, k, table)
            report["expansion"].append({"k": k, "C_fit": rec.C_fit, "C_expected": rec.C_expected,
                                        "relative_error": rec.relative_error, "residual_slope": rec.slope})
    else:
        report["note"] = "expansion fit needs at least three values of b spanning two decades"
    run.json("expansion.json", report)
    print(f"spectrum: {len(pairs)} eigenpairs written to {run.out / 'spectrum.csv'}")
    return EXIT_OK


def cmd_modulate(run: _Run) -> int:
    c = run.cfg.modulate
    if c.regime == "stable":
        traj = md.stable_trajectory(c.b0, c.s0, b_stop=c.b_stop)
        rep = md.stable_rate(traj)
        bs = ra.bs_asymptote(traj.s, traj.b)
        calib = ra.calibrate_stable_bias(rep.fit.log_tau_window)
        report = {"regime": "stable", "T": traj.T, "ratio_final_decade": [rep.ratio_min, rep.ratio_max],
                  "closed_form_bias": rep.bias, "ratio_monotone": rep.monotone, "fit": _fit_dict(rep.fit),
                  "fit_bias": {"p": calib["p_bias"], "q": calib["q_bias"], "c_ratio": calib["c_ratio"]},
                  "amplitude_ratio": rep.fit.c / ra.STABLE_AMPLITUDE,
                  "bs_ratio_final": float(bs.ratio[-1]), "bs_slope": bs.slope}
        x = traj.log_tau / math.log(10.0)
        run.svg("ratio.svg", [("lambda |log tau| / (4 sqrt(pi) sqrt(tau))", x, rep.ratio),
                              ("b(s) ((3/2) sqrt(2/pi) s)^(2/3)", x, bs.ratio)],
                title="stable law ratios", xlabel="log10(T - t)", ylabel="ratio")
        fit = rep.fit
    else:
        forcing = md.ForcingBand(c.forcing_amp, c.forcing_gamma, c.forcing_omega, c.forcing_band)
        rep = md.excited_rate(c.k, c.s0 if c.s0 is not None else 1e3, forcing, c.W_k0, c.delta, c.decades)
        traj, fit, sh = rep.trajectory, rep.fit, rep.shooting
        report = {"regime": "excited", "k": c.k, "T": traj.T, "expected_p": rep.expected_p,
                  "fit": _fit_dict(fit), "fit_pure_power": _fit_dict(rep.fit_pure),
                  "shooting": {"W_km1_0": sh.W_km1_0, "U_low0": sh.U_low0, "inside_to_horizon": sh.inside_to_horizon,
                               "horizon": sh.horizon, "max_norm": sh.max_norm, "probes": len(sh.probes),
                               "outgoing_all_positive": sh.outgoing_all_positive}}
    names, data = traj.columns()
    run.csv("trajectory.csv", names, data.tolist(), regime=c.regime)
    run.json("fit.json", report)
    run.svg("rate.svg", _fit_overlay(fit, traj.log_tau, traj.log_lambda), title="lambda against T - t",
            xlabel="log10(T - t)", ylabel="log10 lambda")
    print(f"modulate ({c.regime}): p = {fit.p:.6g}, q = {fit.q:.6g}; outputs in {run.out}")
    return EXIT_OK


def _perturbation(c):
    if c.perturbation_amp == 0.0:
        return None

    def bump(y):
        z = y - 1.0
        return c.perturbation_amp * z * z * np.exp(-(((z - c.perturbation_center) / c.perturbation_width) ** 2))

    return bump


def cmd_simulate(run: _Run) -> int:
    c = run.cfg.simulate
    table = build_basis(max(c.k + 1, 2))
    fld, prof = pde.init_from_profile(c.k, c.b0, _perturbation(c), c.R_outer, n=c.n, table=table,
                                      enforce_energy=c.enforce_energy)
    settings = pde.RunSettings(ds=c.ds, lam_floor_ratio=c.lam_floor_ratio, max_steps=c.max_steps,
                               snapshots_per_decade=c.snapshots_per_decade)
    res = pde.run_to_extinction(fld, settings)
    names, data = res.columns()
    run.csv("trajectory.csv", names, data.tolist(), k=c.k, b0=c.b0)
    for i, sn in enumerate(res.snapshots):
        run.csv(f"snapshots/snapshot_{i:03d}.csv", ("r", "u"), np.column_stack((sn.fld.r, sn.fld.u)).tolist(),
                t=sn.t, s=sn.s, lam=sn.lam, lam_dot=sn.lam_dot)
    report: dict = {"outcome": res.outcome, "message": res.message, "steps": int(res.t.size - 1),
                    "lambda_final": float(res.lam[-1]), "monotone": res.monotone,
                    "max_stefan_residual": float(res.stefan_residual.max()),
                    "initial": {"E0": prof.E0, "bound": prof.bound, "coeffs": prof.coeffs,
                                "lambda_dot": fld.lam_dot, "R_outer": fld.R_outer}}
    if c.decompose:
        recs = pde.decomposition_series(res, c.k, table)
        cols = (["t", "s", "lambda", "b", "a"] + [f"b_{j}" for j in range(c.k + 1)]
                + ["E", "E_over_b4", "eps2_at_1", "boundary_relation_residual", "orthogonality"])
        rows = [[r.t, r.s, r.lam, r.b, r.a, *r.coeffs, r.E, r.E_over_b4, r.boundary[0],
                 r.boundary_relation_residual, float(np.max(r.orthogonality))] for r in recs]
        run.csv("decomposition.csv", cols, rows, k=c.k)
        report["max_E_over_b4"] = max((r.E_over_b4 for r in recs), default=math.nan)
    if c.nonconcentration_R0 > res.snapshots[-1].lam:
        nc = pde.nonconcentration_diagnostic(res.snapshots, c.nonconcentration_R0)
        run.csv("nonconcentration.csv", ("t", "exterior", "annulus", "lambda_b"),
                np.column_stack((nc.t, nc.exterior, nc.annulus, nc.annulus_scale)).tolist(), R0=c.nonconcentration_R0)
    if res.melted and res.lam[-1] <= 1e-2 * res.lam[0]:
        T = ra.estimate_T(res.t, res.lam, c.k)
        model = "stable_log" if c.k == 0 else "pure_power"
        fit = ra.fit_rate_t(res.t, res.lam, T.T, model)
        report["T"] = {"T": T.T, "T_alt": T.T_alt, "agreement": T.agreement}
        report["fit"] = _fit_dict(fit)
        keep = res.t < T.T
        run.svg("lambda.svg", _fit_overlay(fit, np.log(T.T - res.t[keep]), np.log(res.lam[keep])),
                title="front radius against T - t", xlabel="log10(T - t)", ylabel="log10 lambda")
    run.json("report.json", report)
    print(f"simulate: {res.outcome} ({res.message}); outputs in {run.out}")
    return EXIT_OK


def cmd_fit(run: _Run) -> int:
    c = run.cfg.fit
    path = Path(c.input) if c.input is not None else run.out / "trajectory.csv"
    try:
        meta, names, data = read_csv(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"fit.input: trajectory file not found: {path}") from exc
    col = {n: i for i, n in enumerate(names)}
    report: dict = {"input": str(path), "input_config_hash": meta.get("config_hash")}
    window = None if c.window is None else tuple(c.window)
    if "log_T_minus_t" in col and "log_lambda" in col:
        log_tau, log_lam = data[:, col["log_T_minus_t"]], data[:, col["log_lambda"]]
        fit = ra.fit_rate(log_tau, log_lam, c.model, window)
    elif "t" in col and "lambda" in col:
        t, lam = data[:, col["t"]], data[:, col["lambda"]]
        T = ra.estimate_T(t, lam, c.k)
        report["T"] = {"T": T.T, "T_alt": T.T_alt, "agreement": T.agreement, "consistent": T.consistent}
        keep = t < T.T
        log_tau, log_lam = np.log(T.T - t[keep]), np.log(lam[keep])
        fit = ra.fit_rate(log_tau, log_lam, c.model, window, T.T)
    else:
        raise ConfigError(f"fit.input: {path} has neither (log_T_minus_t, log_lambda) nor (t, lambda) columns")
    report["fit"] = _fit_dict(fit)
    run.json("rate_fit.json", report)
    run.svg("rate_fit.svg", _fit_overlay(fit, log_tau, log_lam), title=f"{c.model} fit",
            xlabel="log10(T - t)", ylabel="log10 lambda")
    print(f"fit ({c.model}): p = {fit.p:.6g}, q = {fit.q:.6g}, c = {fit.c:.6g}, residual = {fit.residual:.3g}")
    return EXIT_OK


def cmd_verify(run: _Run) -> int:
    c = run.cfg.verify
    names = c.only if c.only is not None else (list(chk.CHECKS) if c.level == "full" else list(chk.QUICK))
    unknown = [n for n in names if n not in chk.CHECKS]
    if unknown:
        raise ConfigError(f"verify.only: unknown checks {', '.join(unknown)}")
    results = chk.run_checks(names, chk.Context(seed=run.cfg.seed), echo=print)
    failed = [r.name for r in results if not r.passed]
    run.json("verify.json", {"checks": [{"name": r.name, "passed": r.passed, "summary": r.summary,
                                         "values": r.values} for r in results], "failed": failed})
    print(f"verify: {len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise CheckFailed(", ".join(failed))
    return EXIT_OK


_DISPATCH = {"spectrum": cmd_spectrum, "modulate": cmd_modulate, "simulate": cmd_simulate, "fit": cmd_fit,
             "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stefan-melt", description="Melting-rate toolkit for the radial Stefan problem.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="FILE", help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration value (dotted path, or a key of the command's section)")
    parser.add_argument("--out", metavar="DIR", default="out", help="output directory (default: ./out)")
    parser.add_argument("--model", choices=("stable_log", "pure_power"), help="shorthand for --set fit.model=...")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    overrides = list(args.overrides)
    if args.model is not None:
        overrides.append(f"fit.model={args.model}")
    try:
        thread_cap()
        cfg, doc = load_config(args.config, overrides, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = _Run(args.command, cfg, doc, Path(args.out))
    try:
        return _DISPATCH[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
