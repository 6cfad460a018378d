#!/usr/bin/env python3
"""Time the numba and numpy kernel families side by side.

Usage:
    python benchmarks/bench_kernels.py [--repeat N] [--n SIZE] [--json FILE]

Compilation is excluded: every numba kernel is called once before timing.
Each row reports the best of ``--repeat`` runs and the max abs difference
between the two backends' outputs (entries that agree exactly, including
matching infinities, count as zero).
"""

from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np

from stefan_melt import _kernels as K
from stefan_melt.laguerre_basis import build_basis
from stefan_melt.modulation_dynamics import STABLE_COEF, excited_generator, alpha_k, gamma_k


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def tridiagonal(n, rng):
    lower = -rng.uniform(0.1, 1.0, n)
    upper = -rng.uniform(0.1, 1.0, n)
    diag = 2.5 + rng.uniform(0.0, 1.0, n)
    lower[0] = upper[-1] = 0.0
    return lower, diag, upper, rng.normal(size=n)


def cases(n):
    rng = np.random.default_rng(0)
    lo, di, up, rhs = tridiagonal(n, rng)
    d = rng.normal(size=n)
    e2 = rng.uniform(0.1, 1.0, n - 1)
    shifts = np.linspace(-3.0, 3.0, 64)
    b0 = 0.01
    s0 = b0**-1.5 / (1.5 * STABLE_COEF)
    stable_args = (b0, -math.sqrt(2 * math.pi / b0), s0, math.inf, 1e-6, 1 / 200, 0.05, STABLE_COEF, 0.0, 2_000_000)
    k = 2
    gmat, cvec = excited_generator(k, build_basis(k + 1))
    u0 = np.zeros(k + 1)
    u0[k] = 1.0
    excited_args = (u0, -3.0, 1e3, 1e7, 1 / 200, gmat, cvec, k, alpha_k(k), 0.0, gamma_k(k), 1.0,
                    0.3 + 0.7 * np.arange(k + 1.0), 2_000_000)
    return {
        "thomas": (lambda: K.thomas_np(lo, di, up, rhs), lambda: K.thomas_nb(lo, di, up, rhs)),
        "diffusion_solve (pcr vs thomas)": (lambda: K.pcr_solve_np(lo, di, up, rhs),
                                            lambda: K.thomas_nb(lo, di, up, rhs)),
        "sturm_counts": (lambda: K.sturm_counts_np(d, e2, shifts), lambda: K.sturm_counts_nb(d, e2, shifts)),
        "stable_rk4": (lambda: K.stable_rk4_np(*stable_args), lambda: K.stable_rk4_nb(*stable_args)),
        "excited_rk4": (lambda: K.excited_rk4_np(*excited_args), lambda: K.excited_rk4_nb(*excited_args)),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return math.inf
    same = (a == b) | (np.isnan(a) & np.isnan(b))
    if same.all():
        return 0.0
    return float(np.max(np.abs(a[~same] - b[~same])))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--n", type=int, default=4000, help="tridiagonal system size")
    parser.add_argument("--json", help="write the table as JSON")
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rows = []
    print(f"{'kernel':34s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, (f_np, f_nb) in cases(args.n).items():
        f_nb()  # compile
        t_np, out_np = best_of(f_np, args.repeat)
        t_nb, out_nb = best_of(f_nb, args.repeat)
        diff = max_diff(out_np, out_nb)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_diff": diff})
        print(f"{name:34s} {1e3 * t_np:12.3f} {1e3 * t_nb:12.3f} {t_np / t_nb:9.1f} {diff:11.2e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
