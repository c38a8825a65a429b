"""Univariate AR, ARMA and seasonal ARMA baselines.

Seasonal terms are additive: the regression gains lag-``s`` AR and MA terms
next to the ordinary ones, so SARIMA(p,d,q)[s] with one seasonal AR and one
seasonal MA term reads

    y_t = c + sum_i phi_i y_{t-i} + Phi y_{t-s} + sum_j theta_j e_{t-j} + Theta e_{t-s} + e_t

ARMA-type models are fitted by conditional sum of squares (pre-sample
residuals fixed at zero), starting from a Hannan-Rissanen two-stage
regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

from trustdsem.estimation.predict import classify_over_under

FAMILIES = ("AR", "ARMA", "SARIMA")
MA_BOUND = 0.99
MAX_NFEV = 500


class SeriesTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineSpec:
    family: str
    p: int = 1
    d: int = 0
    q: int = 0
    s: int = 0
    P: int = 1
    Q: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if min(self.p, self.d, self.q, self.s, self.P, self.Q) < 0:
            raise ValueError("orders must be non-negative")
        if self.family == "AR" and (self.q or self.d or self.s):
            raise ValueError("AR has q = d = s = 0")
        if self.family == "ARMA" and (self.d or self.s):
            raise ValueError("ARMA has d = s = 0")
        if self.s == 1 or (self.family == "SARIMA" and self.s and self.s < 2):
            raise ValueError("seasonal period must be >= 2")

    @property
    def seasonal_p(self) -> int:
        return self.P if self.s else 0

    @property
    def seasonal_q(self) -> int:
        return self.Q if self.s else 0

    @property
    def ar_lags(self) -> list[int]:
        return list(range(1, self.p + 1)) + [self.s * k for k in range(1, self.seasonal_p + 1)]

    @property
    def ma_lags(self) -> list[int]:
        return list(range(1, self.q + 1)) + [self.s * k for k in range(1, self.seasonal_q + 1)]

    @property
    def history_needed(self) -> int:
        return max([self.p, self.q, self.s * self.seasonal_p, self.s * self.seasonal_q, 0]) + self.d

    def __str__(self):
        if self.family == "AR":
            return f"AR({self.p})"
        if self.family == "ARMA":
            return f"ARMA({self.p},{self.q})"
        return f"SARIMA({self.p},{self.d},{self.q})[{self.s}]"


def AR(p: int = 1) -> BaselineSpec:
    return BaselineSpec("AR", p=p)


def ARMA(p: int = 1, q: int = 1) -> BaselineSpec:
    return BaselineSpec("ARMA", p=p, q=q)


def SARIMA(p: int = 1, d: int = 0, q: int = 1, s: int = 0) -> BaselineSpec:
    return BaselineSpec("SARIMA", p=p, d=d, q=q, s=s)


@dataclass(frozen=True)
class BaselineFit:
    spec: BaselineSpec
    ar: tuple[float, ...]  # aligned with spec.ar_lags
    ma: tuple[float, ...]  # aligned with spec.ma_lags
    intercept: float
    sigma2: float
    css: float
    converged: bool = True
    stationary: bool = True

    @property
    def ar_poly_lags(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for lag, c in zip(self.spec.ar_lags, self.ar):
            out[lag] = out.get(lag, 0.0) + c
        return out


def _css_residuals(y: np.ndarray, ar_lags, ma_lags, c: float, ar, ma) -> np.ndarray:
    """Conditional residuals e_t for t >= max AR lag; earlier residuals are zero."""
    n = y.size
    start = max(ar_lags + [0])
    e = np.zeros(n)
    if start >= n:
        return e
    w = y[start:] - c
    for lag, a in zip(ar_lags, ar):
        w = w - a * y[start - lag:n - lag]
    if not ma_lags:
        e[start:] = w
        return e
    # e_t + sum_k m_k e_{t-k} = w_t is an all-pole filter over the residuals
    den = np.zeros(max(ma_lags) + 1)
    den[0] = 1.0
    for lag, m in zip(ma_lags, ma):
        den[lag] += m
    e[start:] = lfilter([1.0], den, w)
    return e


def _stationary(ar_lags, ar) -> bool:
    if not ar_lags:
        return True
    top = max(ar_lags)
    poly = np.zeros(top + 1)
    poly[0] = 1.0
    for lag, a in zip(ar_lags, ar):
        poly[lag] -= a
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0)) if roots.size else True


def _ols_lags(y: np.ndarray, lags: list[int]) -> tuple[np.ndarray, float]:
    """OLS of y_t on the given lags plus intercept; zero-variance lag columns get 0."""
    start = max(lags + [0])
    target = y[start:]
    cols = [y[start - lag:y.size - lag] for lag in lags]
    keep = [i for i, c in enumerate(cols) if np.ptp(c) > 1e-12]
    X = np.column_stack([cols[i] for i in keep] + [np.ones(target.size)])
    beta = np.linalg.lstsq(X, target, rcond=None)[0]
    coefs = np.zeros(len(lags))
    coefs[keep] = beta[:-1]
    return coefs, float(beta[-1])


def fit_ar(series, p: int = 1) -> BaselineFit:
    """OLS fit of an AR(p) with intercept."""
    y = np.asarray(series, dtype=float)
    if y.size <= p + 2:
        raise SeriesTooShortError(f"AR({p}) needs more than {p + 2} points, got {y.size}")
    spec = AR(p)
    coefs, c = _ols_lags(y, spec.ar_lags)
    e = _css_residuals(y, spec.ar_lags, [], c, coefs, [])[p:]
    css = float(e @ e)
    return BaselineFit(spec, tuple(coefs), (), c, css / max(e.size, 1), css,
                       stationary=_stationary(spec.ar_lags, coefs))


def _hannan_rissanen(y: np.ndarray, ar_lags, ma_lags) -> tuple[float, np.ndarray, np.ndarray]:
    n = y.size
    m = min(max(len(ar_lags) + len(ma_lags) + 1, 3), max((n - 1) // 4, 1))
    long_ar, c0 = _ols_lags(y, list(range(1, m + 1)))
    ehat = _css_residuals(y, list(range(1, m + 1)), [], c0, long_ar, [])
    start = max(ar_lags + [0])
    target = y[start:]
    cols = [y[start - lag:n - lag] for lag in ar_lags]
    for lag in ma_lags:
        col = np.zeros(target.size)
        idx = np.arange(start, n) - lag
        ok = idx >= 0
        col[ok] = ehat[idx[ok]]
        cols.append(col)
    X = np.column_stack(cols + [np.ones(target.size)])
    beta = np.linalg.lstsq(X, target, rcond=None)[0]
    k = len(ar_lags)
    return float(beta[-1]), beta[:k], beta[k:-1]


def _fit_css(y: np.ndarray, spec: BaselineSpec) -> BaselineFit:
    ar_lags, ma_lags = spec.ar_lags, spec.ma_lags
    if not ma_lags:
        coefs, c = _ols_lags(y, ar_lags)
        e = _css_residuals(y, ar_lags, [], c, coefs, [])[max(ar_lags + [0]):]
        css = float(e @ e)
        return BaselineFit(spec, tuple(coefs), (), c, css / max(e.size, 1), css,
                           stationary=_stationary(ar_lags, coefs))
    start = max(ar_lags + [0])
    if np.ptp(y) <= 1e-12:
        return BaselineFit(spec, tuple(np.zeros(len(ar_lags))), tuple(np.zeros(len(ma_lags))),
                           float(y[0]), 0.0, 0.0)
    c0, ar0, ma0 = _hannan_rissanen(y, ar_lags, ma_lags)
    k = len(ar_lags)

    def resid(theta):
        return _css_residuals(y, ar_lags, ma_lags, theta[0], theta[1:k + 1], theta[k + 1:])[start:]

    # MA terms stay inside (-1, 1) so the residual recursion cannot blow up
    nm = len(ma_lags)
    lo = np.concatenate([np.full(1 + k, -np.inf), np.full(nm, -MA_BOUND)])
    hi = -lo
    x0 = np.clip(np.concatenate([[c0], ar0, ma0]), lo, hi)
    r0 = resid(x0)
    init_css = float(r0 @ r0)
    if not np.isfinite(init_css):
        x0 = np.concatenate([[np.mean(y)], np.zeros(k), np.zeros(nm)])
        r0 = resid(x0)
        init_css = float(r0 @ r0)
    sol = least_squares(resid, x0, bounds=(lo, hi), method="trf", max_nfev=MAX_NFEV)
    x = sol.x
    css = float(sol.fun @ sol.fun)
    converged = bool(sol.success)
    if not np.isfinite(css) or css > init_css:
        x, css, converged = x0, init_css, False
    e_count = y.size - start
    return BaselineFit(spec, tuple(x[1:k + 1]), tuple(x[k + 1:]), float(x[0]), css / max(e_count, 1), css,
                       converged, _stationary(ar_lags, x[1:k + 1]))


def fit_arma(series, p: int = 1, q: int = 1) -> BaselineFit:
    y = np.asarray(series, dtype=float)
    if y.size <= p + q + 4:
        raise SeriesTooShortError(f"ARMA({p},{q}) needs more than {p + q + 4} points, got {y.size}")
    return _fit_css(y, ARMA(p, q) if q else BaselineSpec("ARMA", p=p, q=0))


def fit_sarima(series, spec: BaselineSpec) -> BaselineFit:
    """Seasonal ARMA by CSS; ``d > 0`` differences the series first."""
    y = np.asarray(series, dtype=float)
    if spec.s == 0:
        inner = fit_arma(np.diff(y, n=spec.d) if spec.d else y, spec.p, spec.q)
        return BaselineFit(spec, inner.ar, inner.ma, inner.intercept, inner.sigma2, inner.css,
                           inner.converged, inner.stationary)
    if y.size < 2 * spec.s:
        raise SeriesTooShortError(f"{spec} needs at least {2 * spec.s} points, got {y.size}")
    z = np.diff(y, n=spec.d) if spec.d else y
    n_coef = 1 + len(spec.ar_lags) + len(spec.ma_lags)
    rows = z.size - max(spec.ar_lags + [0])
    if rows <= n_coef + 1:
        raise SeriesTooShortError(f"{spec}: {rows} usable rows for {n_coef} coefficients")
    return _fit_css(z, spec)


def fit_baseline(series, spec: BaselineSpec) -> BaselineFit:
    if spec.family == "AR":
        return fit_ar(series, spec.p)
    if spec.family == "ARMA":
        return fit_arma(series, spec.p, spec.q)
    return fit_sarima(series, spec)


def forecast_one_step(fit: BaselineFit, history) -> float:
    """Conditional-mean forecast of the value following ``history``."""
    y = np.asarray(history, dtype=float)
    spec = fit.spec
    if y.size < max(spec.history_needed, 1):
        raise SeriesTooShortError(f"{spec} needs {spec.history_needed} past values, got {y.size}")
    z = np.diff(y, n=spec.d) if spec.d else y
    ar_lags, ma_lags = spec.ar_lags, spec.ma_lags
    e = _css_residuals(z, ar_lags, ma_lags, fit.intercept, fit.ar, fit.ma) if ma_lags else np.zeros(z.size)
    n = z.size
    pred = fit.intercept
    for lag, a in zip(ar_lags, fit.ar):
        pred += a * z[n - lag]
    for lag, m in zip(ma_lags, fit.ma):
        if n - lag >= 0:
            pred += m * e[n - lag]
    if spec.d:
        pred = _integrate(pred, y, spec.d)
    return float(pred)


def _integrate(diff_forecast: float, y: np.ndarray, d: int) -> float:
    """Turn a forecast of the d-th difference into a forecast of the level."""
    # level_n = diff_d_n - sum_{k=1..d} C(d,k) (-1)^k y_{n-k}
    level = diff_forecast
    for k in range(1, d + 1):
        level -= comb(d, k) * (-1) ** k * y[y.size - k]
    return float(level)


def forecast_label(fit: BaselineFit, history, threshold: float = 0.5) -> tuple[float, int]:
    value = forecast_one_step(fit, history)
    return value, classify_over_under(value, threshold)
