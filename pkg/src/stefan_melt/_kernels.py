"""Hot loops with two interchangeable implementations.

Every kernel exists as a plain numpy function (``*_np``) and, when numba is
importable, as an ``@njit`` compiled twin (``*_nb``).  The public names at the
bottom of the module point at one family or the other depending on the
``STEFAN_MELT_BACKEND`` environment variable (``numba`` or ``numpy``), read
once at import time.  Both families are always importable so tests and the
benchmark can compare them side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the backend selection
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# Sturm sequence counts for a symmetric tridiagonal matrix
# ---------------------------------------------------------------------------


def sturm_counts_np(diag, offdiag_sq, shifts):
    """Number of eigenvalues strictly below each shift.

    ``diag`` has length n, ``offdiag_sq`` holds the n-1 squared off-diagonal
    entries.  The LDL^T pivots are propagated for all shifts at once, so the
    Python loop runs over matrix rows and numpy vectorises over shifts.
    """
    shifts = np.asarray(shifts, dtype=np.float64)
    n = diag.shape[0]
    tiny = 1e-300
    q = diag[0] - shifts
    q = np.where(q == 0.0, -tiny, q)
    count = (q < 0.0).astype(np.int64)
    for i in range(1, n):
        q = diag[i] - shifts - offdiag_sq[i - 1] / q
        q = np.where(q == 0.0, -tiny, q)
        count += q < 0.0
    return count


def _sturm_counts_py(diag, offdiag_sq, shifts):
    n = diag.shape[0]
    m = shifts.shape[0]
    out = np.zeros(m, dtype=np.int64)
    tiny = 1e-300
    for j in range(m):
        x = shifts[j]
        q = diag[0] - x
        if q == 0.0:
            q = -tiny
        c = 1 if q < 0.0 else 0
        for i in range(1, n):
            q = diag[i] - x - offdiag_sq[i - 1] / q
            if q == 0.0:
                q = -tiny
            if q < 0.0:
                c += 1
        out[j] = c
    return out


# ---------------------------------------------------------------------------
# Tridiagonal solves
# ---------------------------------------------------------------------------


def _thomas_py(lower, diag, upper, rhs):
    """Thomas elimination; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    tiny = 1e-300
    piv = diag[0]
    if piv == 0.0:
        piv = tiny
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i] * cp[i - 1]
        if piv == 0.0:
            piv = tiny
        cp[i] = upper[i] / piv
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / piv
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def thomas_np(lower, diag, upper, rhs):
    return _thomas_py(
        np.asarray(lower, dtype=np.float64),
        np.asarray(diag, dtype=np.float64),
        np.asarray(upper, dtype=np.float64),
        np.asarray(rhs, dtype=np.float64),
    )


def pcr_solve_np(lower, diag, upper, rhs):
    """Parallel cyclic reduction, fully vectorised.

    Intended for the diagonally dominant systems of the implicit diffusion
    step; no pivoting is attempted.
    """
    a = np.array(lower, dtype=np.float64)
    b = np.array(diag, dtype=np.float64)
    c = np.array(upper, dtype=np.float64)
    d = np.array(rhs, dtype=np.float64)
    n = b.shape[0]
    a[0] = 0.0
    c[-1] = 0.0
    stride = 1
    while stride < n:
        # neighbours at i - stride and i + stride, padded with identity rows
        am = np.zeros(n)
        bm = np.ones(n)
        cm = np.zeros(n)
        dm = np.zeros(n)
        am[stride:] = a[:-stride]
        bm[stride:] = b[:-stride]
        cm[stride:] = c[:-stride]
        dm[stride:] = d[:-stride]
        ap = np.zeros(n)
        bp = np.ones(n)
        cp = np.zeros(n)
        dp = np.zeros(n)
        ap[:-stride] = a[stride:]
        bp[:-stride] = b[stride:]
        cp[:-stride] = c[stride:]
        dp[:-stride] = d[stride:]
        k1 = a / bm
        k2 = c / bp
        a, b, c, d = (
            -am * k1,
            b - cm * k1 - ap * k2,
            -cp * k2,
            d - dm * k1 - dp * k2,
        )
        stride *= 2
    return d / b


# ---------------------------------------------------------------------------
# RK4 loops for the modulation ODEs
# ---------------------------------------------------------------------------


def _stable_rhs(b, coef, corr):
    # b_s = -coef * b^{5/2} + corr * b^3
    return -coef * b * b * math.sqrt(b) + corr * b * b * b


def _make_stable_loop(rhs):
    def run(b0, l0, s0, s_end, b_stop, ds_frac, max_dlog, coef, corr, max_steps):
        s_out = np.empty(max_steps + 1)
        b_out = np.empty(max_steps + 1)
        l_out = np.empty(max_steps + 1)
        logdt = np.empty(max_steps + 1)
        s_out[0] = s0
        b_out[0] = b0
        l_out[0] = l0
        logdt[0] = -np.inf
        s = s0
        b = b0
        lg = l0
        n = 0
        while n < max_steps and s < s_end and b > b_stop:
            ds = ds_frac * s
            if max_dlog > 0.0 and ds * b > max_dlog:
                ds = max_dlog / b
            if s + ds > s_end:
                ds = s_end - s
            k1b = rhs(b, coef, corr)
            b2 = b + 0.5 * ds * k1b
            if b2 <= 0.0:
                break
            k2b = rhs(b2, coef, corr)
            b3 = b + 0.5 * ds * k2b
            if b3 <= 0.0:
                break
            k3b = rhs(b3, coef, corr)
            b4 = b + ds * k3b
            if b4 <= 0.0:
                break
            k4b = rhs(b4, coef, corr)
            bn = b + ds / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            if bn <= 0.0:
                break
            # (log lambda)_s = -b at the four stages
            l2 = lg - 0.5 * ds * b
            l3 = lg - 0.5 * ds * b2
            l4 = lg - ds * b3
            # exponents clipped so diverging trajectories give inf, not errors
            acc = (1.0 + 2.0 * math.exp(min(2.0 * (l2 - lg), 700.0))
                   + 2.0 * math.exp(min(2.0 * (l3 - lg), 700.0))
                   + math.exp(min(2.0 * (l4 - lg), 700.0)))
            lg_new = lg - ds / 6.0 * (b + 2.0 * b2 + 2.0 * b3 + b4)
            n += 1
            logdt[n] = 2.0 * lg + math.log(ds / 6.0 * acc)
            s = s + ds
            b = bn
            lg = lg_new
            s_out[n] = s
            b_out[n] = b
            l_out[n] = lg
        return s_out[: n + 1], b_out[: n + 1], l_out[: n + 1], logdt[: n + 1]

    return run


def _make_excited_loop(rhs):
    def run(u0, l0, s0, s_end, ds_frac, gmat, cvec, k, alpha, amp, gamma, omega, phases, max_steps):
        m = u0.shape[0]
        s_out = np.empty(max_steps + 1)
        u_out = np.empty((max_steps + 1, m))
        l_out = np.empty(max_steps + 1)
        logdt = np.empty(max_steps + 1)
        s_out[0] = s0
        u_out[0, :] = u0
        l_out[0] = l0
        logdt[0] = -np.inf
        u = u0.copy()
        lg = l0
        s = s0
        k1 = np.empty(m)
        k2 = np.empty(m)
        k3 = np.empty(m)
        k4 = np.empty(m)
        tmp = np.empty(m)
        n = 0
        while n < max_steps and s < s_end:
            ds = ds_frac * s
            if s + ds > s_end:
                ds = s_end - s
            g1 = rhs(s, u, gmat, cvec, k, alpha, amp, gamma, omega, phases, k1)
            for i in range(m):
                tmp[i] = u[i] + 0.5 * ds * k1[i]
            g2 = rhs(s + 0.5 * ds, tmp, gmat, cvec, k, alpha, amp, gamma, omega, phases, k2)
            for i in range(m):
                tmp[i] = u[i] + 0.5 * ds * k2[i]
            g3 = rhs(s + 0.5 * ds, tmp, gmat, cvec, k, alpha, amp, gamma, omega, phases, k3)
            for i in range(m):
                tmp[i] = u[i] + ds * k3[i]
            g4 = rhs(s + ds, tmp, gmat, cvec, k, alpha, amp, gamma, omega, phases, k4)
            l2 = lg + 0.5 * ds * g1
            l3 = lg + 0.5 * ds * g2
            l4 = lg + ds * g3
            # exponents clipped so diverging trajectories give inf, not errors
            acc = (1.0 + 2.0 * math.exp(min(2.0 * (l2 - lg), 700.0))
                   + 2.0 * math.exp(min(2.0 * (l3 - lg), 700.0))
                   + math.exp(min(2.0 * (l4 - lg), 700.0)))
            for i in range(m):
                u[i] = u[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            lg_new = lg + ds / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
            n += 1
            logdt[n] = 2.0 * lg + math.log(ds / 6.0 * acc)
            s = s + ds
            lg = lg_new
            s_out[n] = s
            u_out[n, :] = u
            l_out[n] = lg
        return s_out[: n + 1], u_out[: n + 1], l_out[: n + 1], logdt[: n + 1]

    return run


_stable_rk4_py = _make_stable_loop(_stable_rhs)


def stable_rk4_np(b0, l0, s0, s_end, b_stop, ds_frac, max_dlog, coef, corr, max_steps):
    """Integrate ``b_s = -coef b^{5/2} + corr b^3``, ``(log lam)_s = -b``.

    Returns arrays ``(s, b, log_lambda, log_dt)`` where ``log_dt[i]`` is the
    log of the physical time elapsed during step ``i`` (``-inf`` at i=0),
    kept in log form because lambda underflows long before b is small.
    ``max_dlog`` caps the change of log lambda per step (0 disables it).
    """
    return _stable_rk4_py(
        float(b0), float(l0), float(s0), float(s_end), float(b_stop),
        float(ds_frac), float(max_dlog), float(coef), float(corr), int(max_steps),
    )


def _excited_rhs(s, u, gmat, cvec, k, alpha, amp, gamma, omega, phases, out_u):
    m = u.shape[0]
    inv_s = 1.0 / s
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += gmat[i, j] * u[j]
        out_u[i] = acc * inv_s
    if amp != 0.0:
        band = amp * s ** (-1.0 - gamma)
        ls = math.log(s)
        for i in range(m):
            out_u[i] += band * math.sin(omega * ls + phases[i])
    proj = 0.0
    for j in range(m):
        proj += cvec[j] * u[j]
    a = (k + 1.0) / (2.0 * k * s) - math.sqrt(2.0 * k) * proj * s ** (-1.0 - alpha)
    return -a


_excited_rk4_py = _make_excited_loop(_excited_rhs)


def excited_rk4_np(u0, l0, s0, s_end, ds_frac, gmat, cvec, k, alpha, amp, gamma, omega, phases, max_steps):
    """Integrate ``U_s = G U / s + forcing(s)`` together with log lambda.

    ``(log lam)_s = -a`` with ``a = (k+1)/(2ks) - sqrt(2k) sum_j C_j U_j s^{-1-alpha}``.
    Forcing component i is ``amp * s^{-1-gamma} * sin(omega log s + phases[i])``.
    """
    return _excited_rk4_py(
        np.asarray(u0, dtype=np.float64), float(l0), float(s0), float(s_end), float(ds_frac),
        np.ascontiguousarray(gmat, dtype=np.float64), np.asarray(cvec, dtype=np.float64),
        float(k), float(alpha), float(amp), float(gamma), float(omega),
        np.asarray(phases, dtype=np.float64), int(max_steps),
    )


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    _sturm_nb = _jit(_sturm_counts_py)
    _thomas_nb = _jit(_thomas_py)
    # the loop factories close over the right-hand side, so jitting the
    # closure with a jitted right-hand side yields the compiled twin
    _stable_rk4_nb_raw = numba.njit(nogil=True)(_make_stable_loop(_jit(_stable_rhs)))
    _excited_rk4_nb_raw = numba.njit(nogil=True)(_make_excited_loop(_jit(_excited_rhs)))

    def sturm_counts_nb(diag, offdiag_sq, shifts):
        return _sturm_nb(
            np.ascontiguousarray(diag, dtype=np.float64),
            np.ascontiguousarray(offdiag_sq, dtype=np.float64),
            np.ascontiguousarray(shifts, dtype=np.float64),
        )

    def thomas_nb(lower, diag, upper, rhs):
        return _thomas_nb(
            np.ascontiguousarray(lower, dtype=np.float64),
            np.ascontiguousarray(diag, dtype=np.float64),
            np.ascontiguousarray(upper, dtype=np.float64),
            np.ascontiguousarray(rhs, dtype=np.float64),
        )

    def stable_rk4_nb(b0, l0, s0, s_end, b_stop, ds_frac, max_dlog, coef, corr, max_steps):
        return _stable_rk4_nb_raw(
            float(b0), float(l0), float(s0), float(s_end), float(b_stop),
            float(ds_frac), float(max_dlog), float(coef), float(corr), int(max_steps),
        )

    def excited_rk4_nb(u0, l0, s0, s_end, ds_frac, gmat, cvec, k, alpha, amp, gamma, omega, phases, max_steps):
        return _excited_rk4_nb_raw(
            np.ascontiguousarray(u0, dtype=np.float64), float(l0), float(s0), float(s_end), float(ds_frac),
            np.ascontiguousarray(gmat, dtype=np.float64), np.ascontiguousarray(cvec, dtype=np.float64),
            float(k), float(alpha), float(amp), float(gamma), float(omega),
            np.ascontiguousarray(phases, dtype=np.float64), int(max_steps),
        )


def _select_backend() -> str:
    requested = os.environ.get("STEFAN_MELT_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"STEFAN_MELT_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        return "numpy"
    return requested


BACKEND = _select_backend()

if BACKEND == "numba":
    sturm_counts = sturm_counts_nb
    thomas = thomas_nb
    diffusion_solve = thomas_nb
    stable_rk4 = stable_rk4_nb
    excited_rk4 = excited_rk4_nb
else:
    sturm_counts = sturm_counts_np
    thomas = thomas_np
    diffusion_solve = pcr_solve_np
    stable_rk4 = stable_rk4_np
    excited_rk4 = excited_rk4_np

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "sturm_counts",
    "thomas",
    "diffusion_solve",
    "stable_rk4",
    "excited_rk4",
]
