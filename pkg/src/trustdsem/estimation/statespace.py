"""Compile a path diagram into a linear-Gaussian state-space model.

State layout: each latent variable ``v`` occupies ``depth(v)`` slots holding
``v`` at lags ``0..depth(v)-1``. Observed variables never enter the state:
observed parents act as known regressors, and observed endogenous variables
form the observation vector. Because the lag-0 system is triangular, the
density of the observation vector given the state factorises into per-variable
Gaussians, so regressing each observed variable on its observed parents
before the Kalman update is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from trustdsem.pathmodel import LaggedEdge, PathDiagram, _lag0_order, validate_diagram

VARIANCE_FLOOR = 1e-8

Key = tuple[str, str, int]


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class Equation:
    """One structural equation ``target = sum(coef * parent) + intercept + noise``.

    ``random`` lists latent parents as ``(index, coef)`` into the stacked
    vector ``[x_t, x_{t-1}]``; ``known`` lists observed parents as
    ``(source, lag, coef)``.
    """

    target: str
    latent: bool
    random: tuple[tuple[int, Key], ...]
    known: tuple[tuple[str, int, Key], ...]
    intercept: bool


@dataclass(frozen=True)
class InputMap:
    """Everything needed to turn raw panel arrays into filter inputs."""

    state_labels: tuple[tuple[str, int], ...]
    obs_names: tuple[str, ...]
    equations: tuple[Equation, ...]
    coefficients: Mapping[Key, float]
    intercepts: Mapping[str, float]
    mixing: np.ndarray  # (I - B0)^{-1} over current latent slots
    current_slots: tuple[int, ...]
    t_start: int

    @property
    def latent_equations(self) -> list[Equation]:
        return [e for e in self.equations if e.latent]

    @property
    def observed_equations(self) -> list[Equation]:
        return [e for e in self.equations if not e.latent]

    def _known_sum(self, eq: Equation, data: Mapping[str, np.ndarray], t0: int, t1: int) -> np.ndarray:
        n = next(iter(data.values())).shape[0]
        out = np.full((n, t1 - t0), self.intercepts.get(eq.target, 0.0) if eq.intercept else 0.0)
        for src, lag, key in eq.known:
            out = out + self.coefficients[key] * data[src][:, t0 - lag:t1 - lag]
        return out

    def prepare(self, data: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Residualised observations (N, T', m) and transition offsets (N, T', d).

        ``data`` maps variable names to (N, T) arrays; the first ``t_start``
        steps only serve as lagged regressors.
        """
        n, total = next(iter(data.values())).shape
        steps = max(total - self.t_start, 0)
        d = len(self.state_labels)
        y = np.empty((n, steps, len(self.obs_names)))
        for i, eq in enumerate(self.observed_equations):
            y[:, :, i] = data[eq.target][:, self.t_start:] - self._known_sum(eq, data, self.t_start, total)
        a = np.zeros((n, steps, d))
        if self.current_slots and steps:
            raw = np.stack([self._known_sum(eq, data, self.t_start, total) for eq in self.latent_equations],
                           axis=-1)
            a[:, :, list(self.current_slots)] = raw @ self.mixing.T
        return y, a

    def predict_observed(self, x_mean: np.ndarray, data: Mapping[str, np.ndarray],
                         H: np.ndarray, t0: int) -> dict[str, np.ndarray]:
        """Conditional means of observed endogenous variables at steps ``t0..``.

        ``x_mean`` is (N, T'', d) predicted state means for those steps. Lag-0
        endogenous parents are replaced by their own predicted means; lagged
        parents come from ``data``.
        """
        total = next(iter(data.values())).shape[1]
        preds: dict[str, np.ndarray] = {}
        for i, eq in enumerate(self.observed_equations):
            val = x_mean @ H[i]
            if eq.intercept:
                val = val + self.intercepts.get(eq.target, 0.0)
            for src, lag, key in eq.known:
                if lag == 0 and src in preds:
                    val = val + self.coefficients[key] * preds[src]
                else:
                    val = val + self.coefficients[key] * data[src][:, t0 - lag:total - lag]
            preds[eq.target] = val
        return preds


@dataclass(frozen=True)
class StateSpaceModel:
    """x_t = A x_{t-1} + a_t + w_t,  y_t = H x_t + e_t,  x_0 ~ N(m0, P0)."""

    transition: np.ndarray
    observation: np.ndarray
    process_cov: np.ndarray
    observation_cov: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    inputs: InputMap | None = None
    diagram: PathDiagram | None = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.observation_cov, dtype=float))
        if R.size:
            R = R.copy()
            idx = np.diag_indices_from(R)
            R[idx] = np.maximum(R[idx], VARIANCE_FLOOR)
        object.__setattr__(self, "observation_cov", R)
        for name in ("transition", "observation", "process_cov", "initial_cov"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "initial_mean", np.atleast_1d(np.asarray(self.initial_mean, dtype=float)))
        d = self.initial_mean.shape[0]
        if d == 0:
            m = R.shape[0]
            for name in ("transition", "process_cov", "initial_cov"):
                object.__setattr__(self, name, np.zeros((0, 0)))
            object.__setattr__(self, "observation", np.zeros((m, 0)))

    @property
    def state_dim(self) -> int:
        return self.initial_mean.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observation_cov.shape[0]


def latent_depths(diagram: PathDiagram) -> dict[str, int]:
    depths = {}
    for v in diagram.latent_names:
        need = [1]
        for e in diagram.outgoing(v):
            if diagram.variable(e.target).latent:
                need.append(e.lag)
            else:
                need.append(e.lag + 1)
        depths[v] = max(need)
    return depths


def check_estimable(diagram: PathDiagram) -> None:
    endog = set(diagram.endogenous)
    for e in diagram.edges:
        tgt = diagram.variable(e.target)
        src = diagram.variable(e.source)
        if tgt.latent and not src.latent and e.source in endog and e.lag == 0:
            raise CompileError(f"latent {e.target} cannot depend on endogenous observed {e.source} at lag 0")


def build_equations(diagram: PathDiagram) -> tuple[tuple, tuple, tuple[Equation, ...], int]:
    """Structural equations plus state labels and observation order."""
    check_estimable(diagram)
    order = _lag0_order(diagram.names, diagram.edges)
    depths = latent_depths(diagram)
    latents = [n for n in order if n in depths]
    labels = tuple((v, k) for v in latents for k in range(depths[v]))
    idx = {lab: i for i, lab in enumerate(labels)}
    d = len(labels)
    endog = set(diagram.endogenous)
    obs_names = tuple(n for n in order if n in endog and not diagram.variable(n).latent)

    equations = []
    for v in latents + list(obs_names):
        is_latent = v in depths
        rand, known = [], []
        for e in diagram.incoming(v):
            if diagram.variable(e.source).latent:
                if is_latent and e.lag >= 1:
                    j = d + idx[(e.source, e.lag - 1)]
                else:
                    j = idx[(e.source, e.lag)]
                rand.append((j, e.key))
            else:
                known.append((e.source, e.lag, e.key))
        equations.append(Equation(v, is_latent, tuple(rand), tuple(known), intercept=not is_latent))
    t_start = max([e.lag for e in diagram.edges if not diagram.variable(e.source).latent] + [0])
    return labels, obs_names, tuple(equations), t_start


def to_state_space(diagram: PathDiagram, coefficients: Mapping[Key, float] | None = None,
                   variances: Mapping[str, float] | None = None,
                   intercepts: Mapping[str, float] | None = None,
                   initial_latent_mean: float = 0.5, initial_cov: float = 1.0,
                   variance_floor: float = VARIANCE_FLOOR) -> StateSpaceModel:
    """Compile ``diagram`` with the given parameters.

    Coefficients default to those stored on the diagram's edges; every
    endogenous variable needs a strictly positive variance (unit by default).
    """
    diagram = validate_diagram(diagram)
    coefs = {k: c for k, c in diagram.coefficients.items() if c is not None}
    coefs.update(coefficients or {})
    missing = [k for k in diagram.coefficients if k not in coefs]
    if missing:
        raise CompileError(f"unset coefficients for edges {missing}")
    labels, obs_names, equations, t_start = build_equations(diagram)
    variances = dict(variances or {})
    for eq in equations:
        var = variances.setdefault(eq.target, 1.0)
        if not var > 0:
            raise CompileError(f"variance of {eq.target} must be positive, got {var}")
    intercepts = dict(intercepts or {})

    d = len(labels)
    idx = {lab: i for i, lab in enumerate(labels)}
    cur = [idx[(v, 0)] for v, k in labels if k == 0]
    cur_pos = {s: i for i, s in enumerate(cur)}
    nl = len(cur)

    B0 = np.zeros((nl, nl))
    B1 = np.zeros((nl, d))
    q = np.zeros(nl)
    for eq in equations:
        if not eq.latent:
            continue
        r = cur_pos[idx[(eq.target, 0)]]
        q[r] = max(variances[eq.target], variance_floor)
        for j, key in eq.random:
            if j < d:
                B0[r, cur_pos[j]] += coefs[key]
            else:
                B1[r, j - d] += coefs[key]
    mixing = np.linalg.inv(np.eye(nl) - B0) if nl else np.zeros((0, 0))

    A = np.zeros((d, d))
    Q = np.zeros((d, d))
    if nl:
        A[cur, :] = mixing @ B1
        Q[np.ix_(cur, cur)] = mixing @ np.diag(q) @ mixing.T
    for (v, k), i in idx.items():
        if k > 0:
            A[i, idx[(v, k - 1)]] = 1.0

    H = np.zeros((len(obs_names), d))
    R = np.zeros((len(obs_names), len(obs_names)))
    obs_eqs = [eq for eq in equations if not eq.latent]
    for i, eq in enumerate(obs_eqs):
        for j, key in eq.random:
            H[i, j] += coefs[key]
        R[i, i] = max(variances[eq.target], variance_floor)

    inputs = InputMap(labels, obs_names, equations, coefs, intercepts, mixing, tuple(cur), t_start)
    m0 = np.full(d, float(initial_latent_mean))
    P0 = float(initial_cov) * np.eye(d)
    return StateSpaceModel(A, H, Q, R, m0, P0, inputs, diagram.with_coefficients(coefs))


def series_arrays(series, names) -> dict[str, np.ndarray]:
    """(1, T) arrays for one participant, or (N, T) arrays for a same-length batch.

    Also accepts a list of per-step records (mappings of name to value).
    """
    if isinstance(series, (list, tuple)) and (not series or isinstance(series[0], Mapping)):
        return {n: np.array([[float(r[n]) for r in series]]).reshape(1, len(series)) for n in names}
    if isinstance(series, Mapping):
        return {n: np.atleast_2d(np.asarray(series[n], dtype=float)) for n in names if n in series}
    if hasattr(series, "participants"):
        return {n: series.array(n) for n in names}
    return {n: np.atleast_2d(np.asarray(series[n], dtype=float)) for n in names}
