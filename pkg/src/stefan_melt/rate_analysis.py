"""Extinction-time estimation and melting-rate fits.

Rates are fitted in log variables against ``tau = T - t``:

* ``stable_log``:  ``log lambda = log c + p log tau - q log|log tau|``
* ``pure_power``:  the same with ``q = 0``

Series are resampled uniformly in ``log tau`` before fitting, so each decade
carries equal weight however densely it was sampled.  Because the stable
regime drives ``tau`` far below the double-precision range, all routines
accept ``log tau`` and ``log lambda`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "RateFit",
    "TEstimate",
    "BsReport",
    "RateError",
    "estimate_T",
    "fit_rate",
    "fit_rate_t",
    "bs_asymptote",
    "synthetic_stable_log_lambda",
    "calibrate_stable_bias",
    "STABLE_AMPLITUDE",
]

Model = Literal["stable_log", "pure_power"]
STABLE_AMPLITUDE = 4.0 * math.sqrt(math.pi)
_LN10 = math.log(10.0)


class RateError(ValueError):
    """Raised for series or windows that cannot support an estimate."""


@dataclass(frozen=True)
class TEstimate:
    T: float
    T_alt: float
    agreement: float  # |T - T_alt| / (T - t_0)
    exponent: float  # power m used in lambda^m

    @property
    def consistent(self) -> bool:
        return self.agreement <= 0.01


def _secant_zero(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Linear extrapolation of each consecutive pair of samples to y = 0."""
    dy = y[:-1] - y[1:]
    return t[1:] + y[1:] * (t[1:] - t[:-1]) / dy


def _intercept(t_hat: np.ndarray, y: np.ndarray) -> float:
    """Richardson-style limit: regress the secant estimates on y and read off y -> 0."""
    if t_hat.size == 1:
        return float(t_hat[0])
    design = np.column_stack((np.ones_like(y), y))
    coef, *_ = np.linalg.lstsq(design, t_hat, rcond=None)
    return float(coef[0])


def estimate_T(t, lam, k: int | None = None, exponent: float | None = None) -> TEstimate:
    """Extinction time from ``lambda^m`` vs t, m = 2 (stable) or 2/(k+1) (excited).

    ``lambda^m`` is close to linear in ``T - t``; the zero of the secant
    through each pair of consecutive samples gives a sequence of estimates
    converging to T, which is extrapolated to ``lambda -> 0`` on the final
    decade of ``lambda^m``.  The same extrapolation on the decade before
    provides the cross-validation value.
    """
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if t.size != lam.size or t.size < 4:
        raise RateError("need matching t and lambda arrays with at least 4 samples")
    if exponent is None:
        exponent = 2.0 if k is None or k == 0 else 2.0 / (k + 1)
    if not lam[-1] <= 1e-2 * lam[0]:
        raise RateError(f"final lambda {lam[-1]:.3e} is not below 1e-2 of the initial {lam[0]:.3e}")
    tail = slice(max(0, lam.size - max(8, lam.size // 4)), None)
    if np.any(np.diff(lam[tail]) >= 0.0) or np.any(np.diff(t) <= 0.0):
        raise RateError("lambda must be strictly decreasing (and t increasing) on the tail")
    y = lam**exponent
    t_hat = _secant_zero(t, y)
    yy = y[1:]
    y_end = yy[-1]
    last = yy <= 10.0 * y_end
    prev = (yy > 10.0 * y_end) & (yy <= 100.0 * y_end)
    T = _intercept(t_hat[last], yy[last])
    T_alt = _intercept(t_hat[prev], yy[prev]) if np.count_nonzero(prev) >= 2 else float(t_hat[last][0])
    return TEstimate(T, T_alt, abs(T - T_alt) / (T - t[0]), float(exponent))


@dataclass(frozen=True)
class RateFit:
    T: float
    p: float
    q: float
    c: float
    residual: float
    window: tuple[float, float]  # (t_lo, t_hi); NaN where T - tau is not representable
    log_tau_window: tuple[float, float]
    model: str = "stable_log"

    def __post_init__(self) -> None:
        if not self.residual >= 0.0:
            raise RateError("fit residual must be nonnegative")


def _resample(log_tau: np.ndarray, log_lambda: np.ndarray, lo: float, hi: float, n: int):
    order = np.argsort(log_tau)
    xs, ys = log_tau[order], log_lambda[order]
    grid = np.linspace(lo, hi, n)
    return grid, np.interp(grid, xs, ys)


def fit_rate(log_tau, log_lambda, model: Model = "stable_log", window: tuple[float, float] | None = None,
             T: float = math.nan, samples: int = 400) -> RateFit:
    """Least-squares rate fit in log variables on a window of ``log tau``.

    ``window`` is ``(log_tau_lo, log_tau_hi)``; the default is the last two
    decades of the series.  The window must span at least one decade and
    lie below ``tau = 1`` (where ``log|log tau|`` is defined).
    """
    log_tau = np.asarray(log_tau, dtype=np.float64)
    log_lambda = np.asarray(log_lambda, dtype=np.float64)
    if window is None:
        lo = float(np.min(log_tau))
        window = (lo, lo + 2.0 * _LN10)
    lo, hi = float(min(window)), float(max(window))
    lo = max(lo, float(np.min(log_tau)))
    hi = min(hi, float(np.max(log_tau)))
    if hi - lo < _LN10 * (1.0 - 1e-9):
        raise RateError(f"fit window spans {(hi - lo) / _LN10:.2f} decades; need at least 1")
    if model == "stable_log" and hi >= 0.0:
        raise RateError("stable_log needs the window below tau = 1")
    x, y = _resample(log_tau, log_lambda, lo, hi, samples)
    if model == "stable_log":
        design = np.column_stack((np.ones_like(x), x, -np.log(np.abs(x))))
    elif model == "pure_power":
        design = np.column_stack((np.ones_like(x), x))
    else:
        raise RateError(f"unknown model {model!r}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rms = float(math.sqrt(np.mean(resid * resid)))
    q = float(coef[2]) if model == "stable_log" else 0.0
    t_window = (T - math.exp(hi), T - math.exp(lo)) if math.isfinite(T) and hi > -700 else (math.nan, math.nan)
    return RateFit(T, float(coef[1]), q, float(math.exp(coef[0])), rms, t_window, (lo, hi), model)


def fit_rate_t(t, lam, T: float, model: Model = "stable_log", window: tuple[float, float] | None = None,
               samples: int = 400) -> RateFit:
    """``fit_rate`` for series given in physical time; ``window`` is in t."""
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    keep = (t < T) & (lam > 0.0)
    if not np.any(keep):
        raise RateError("no samples before the extinction time")
    log_tau = np.log(T - t[keep])
    log_lam = np.log(lam[keep])
    lw = None if window is None else (math.log(T - window[1]), math.log(T - window[0]))
    return fit_rate(log_tau, log_lam, model, lw, T, samples)


@dataclass(frozen=True, eq=False)
class BsReport:
    ratio: np.ndarray
    slope: float  # d log b / d log s over the series
    regime_ok: bool


def bs_asymptote(s, b) -> BsReport:
    """``b(s) ((3/2) sqrt(2/pi) s)^{2/3}``, flagged when the series is not in the stable regime."""
    s = np.asarray(s, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ratio = b * (1.5 * math.sqrt(2.0 / math.pi) * s) ** (2.0 / 3.0)
    half = s.size // 2
    slope = float(np.polyfit(np.log(s[half:]), np.log(b[half:]), 1)[0])
    return BsReport(ratio, slope, abs(slope + 2.0 / 3.0) < 0.1)


def synthetic_stable_log_lambda(log_tau, c: float = STABLE_AMPLITUDE, p: float = 0.5, q: float = 1.0):
    """``log(c tau^p / |log tau|^q)``."""
    log_tau = np.asarray(log_tau, dtype=np.float64)
    return math.log(c) + p * log_tau - q * np.log(np.abs(log_tau))


def calibrate_stable_bias(window: tuple[float, float], model: Model = "stable_log", samples: int = 400) -> dict:
    """Fit the generator law on ``window`` and report the parameter bias of the fit itself."""
    lo, hi = min(window), max(window)
    x = np.linspace(lo, hi, 4 * samples)
    fit = fit_rate(x, synthetic_stable_log_lambda(x), model, (lo, hi), samples=samples)
    return {"p_bias": fit.p - 0.5, "q_bias": fit.q - 1.0, "c_ratio": fit.c / STABLE_AMPLITUDE, "fit": fit}
