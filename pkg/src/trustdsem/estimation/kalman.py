"""Kalman filtering and RTS smoothing, batched over same-length series.

With complete data and time-invariant matrices the filter and smoother
covariances do not depend on the observations, so they are computed once per
series length and shared by every participant in the batch; only the means
carry a participant axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from trustdsem.estimation.statespace import StateSpaceModel, series_arrays

LOG_2PI = np.log(2.0 * np.pi)


class SingularInnovationError(np.linalg.LinAlgError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"innovation covariance is singular at step {step}")


@dataclass(frozen=True)
class FilterOutput:
    pred_means: np.ndarray  # (N, T, d)
    pred_covs: np.ndarray  # (T, d, d)
    means: np.ndarray  # (N, T, d) filtered
    covs: np.ndarray  # (T, d, d)
    loglik: np.ndarray  # (N,)


@dataclass(frozen=True)
class SmootherOutput:
    means: np.ndarray  # (N, T, d)
    covs: np.ndarray  # (T, d, d)
    cross_covs: np.ndarray  # (T, d, d); [t] = Cov(x_t, x_{t-1} | all), [0] unused
    filtered: FilterOutput


def filter_batch(model: StateSpaceModel, y: np.ndarray, offsets: np.ndarray | None = None) -> FilterOutput:
    """Filter (N, T, m) residualised observations; ``offsets`` is (N, T, d)."""
    n, T, m = y.shape
    d = model.state_dim
    A, H, Q, R = model.transition, model.observation, model.process_cov, model.observation_cov
    if offsets is None:
        offsets = np.zeros((n, T, d))
    pm = np.empty((n, T, d))
    pP = np.empty((T, d, d))
    fm = np.empty((n, T, d))
    fP = np.empty((T, d, d))
    loglik = np.zeros(n)
    eye = np.eye(d)
    for t in range(T):
        if t == 0:
            mean = np.broadcast_to(model.initial_mean, (n, d)).copy()
            P = model.initial_cov.copy()
        else:
            mean = fm[:, t - 1] @ A.T + offsets[:, t]
            P = A @ fP[t - 1] @ A.T + Q
            P = 0.5 * (P + P.T)
        pm[:, t], pP[t] = mean, P
        if m == 0:
            fm[:, t], fP[t] = mean, P
            continue
        S = H @ P @ H.T + R
        try:
            cho = linalg.cho_factor(S, lower=True)
        except linalg.LinAlgError:
            raise SingularInnovationError(t) from None
        if not np.all(np.isfinite(cho[0])) or np.min(np.abs(np.diag(cho[0]))) <= 0:
            raise SingularInnovationError(t)
        K = linalg.cho_solve(cho, H @ P).T  # P H' S^-1
        resid = y[:, t] - mean @ H.T
        fm[:, t] = mean + resid @ K.T
        IKH = eye - K @ H
        Pf = IKH @ P @ IKH.T + K @ R @ K.T
        fP[t] = 0.5 * (Pf + Pf.T)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        maha = np.einsum("ij,ij->i", resid, linalg.cho_solve(cho, resid.T).T)
        loglik += -0.5 * (m * LOG_2PI + logdet + maha)
    return FilterOutput(pm, pP, fm, fP, loglik)


def _right_solve_psd(M: np.ndarray, P: np.ndarray) -> np.ndarray:
    """M @ P^+ for symmetric positive semidefinite P."""
    try:
        cho = linalg.cho_factor(P, lower=True)
        return linalg.cho_solve(cho, M.T).T
    except linalg.LinAlgError:
        return M @ linalg.pinvh(P)


def smooth_batch(model: StateSpaceModel, y: np.ndarray, offsets: np.ndarray | None = None) -> SmootherOutput:
    filt = filter_batch(model, y, offsets)
    n, T, d = filt.means.shape
    A = model.transition
    sm = filt.means.copy()
    sP = filt.covs.copy()
    cross = np.zeros((T, d, d))
    for t in range(T - 2, -1, -1):
        J = _right_solve_psd(filt.covs[t] @ A.T, filt.pred_covs[t + 1])
        sm[:, t] = filt.means[:, t] + (sm[:, t + 1] - filt.pred_means[:, t + 1]) @ J.T
        P = filt.covs[t] + J @ (sP[t + 1] - filt.pred_covs[t + 1]) @ J.T
        sP[t] = 0.5 * (P + P.T)
        cross[t + 1] = sP[t + 1] @ J.T
    return SmootherOutput(sm, sP, cross, filt)


def _model_inputs(model: StateSpaceModel, series):
    """Residualised observations and offsets for one series (or a batch)."""
    if model.inputs is None:
        y = np.asarray(series, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim == 2:
            y = y[None]
        return y, None
    names = {eq.target for eq in model.inputs.equations} | {
        src for eq in model.inputs.equations for src, _, _ in eq.known}
    data = series_arrays(series, names)
    return model.inputs.prepare(data)


@dataclass(frozen=True)
class FilterResult:
    means: np.ndarray  # (T, d)
    covs: np.ndarray  # (T, d, d)
    pred_means: np.ndarray
    pred_covs: np.ndarray
    loglik: float


@dataclass(frozen=True)
class SmoothResult:
    means: np.ndarray
    covs: np.ndarray
    cross_covs: np.ndarray
    filtered: FilterResult


def kalman_filter(model: StateSpaceModel, series) -> FilterResult:
    """Filtered state means/covariances and the exact log-likelihood of one series.

    ``series`` is a (T, m) observation array for a bare model, or a
    participant's records for a model compiled from a diagram. An empty
    series has log-likelihood 0.
    """
    y, a = _model_inputs(model, series)
    if y.shape[1] == 0:
        d = model.state_dim
        empty = np.zeros((0, d))
        return FilterResult(empty, np.zeros((0, d, d)), empty, np.zeros((0, d, d)), 0.0)
    out = filter_batch(model, y, a)
    return FilterResult(out.means[0], out.covs, out.pred_means[0], out.pred_covs, float(out.loglik[0]))


def kalman_smooth(model: StateSpaceModel, series) -> SmoothResult:
    """RTS-smoothed means/covariances plus lag-one cross-covariances.

    ``cross_covs[t]`` is Cov(x_t, x_{t-1}) given the whole series.
    """
    y, a = _model_inputs(model, series)
    if y.shape[1] == 0:
        f = kalman_filter(model, series)
        return SmoothResult(f.means, f.covs, f.covs.copy(), f)
    out = smooth_batch(model, y, a)
    f = out.filtered
    fr = FilterResult(f.means[0], f.covs, f.pred_means[0], f.pred_covs, float(f.loglik[0]))
    return SmoothResult(out.means[0], out.covs, out.cross_covs, fr)
