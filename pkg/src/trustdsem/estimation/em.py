"""Maximum-likelihood fitting of path diagrams by EM with Kalman smoothing.

Each structural equation is a linear regression of its target on its parents.
The E-step supplies expected sufficient statistics for latent parents and
latent targets; the M-step solves every regression in closed form. Latent
noise variances are held fixed: together with zero latent intercepts this
pins the latent scale and location, which the likelihood does not identify.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from trustdsem.estimation.kalman import smooth_batch
from trustdsem.estimation.statespace import (
    Equation,
    Key,
    StateSpaceModel,
    build_equations,
    to_state_space,
)
from trustdsem.pathmodel import PanelDataset, PathDiagram, parse_diagram, serialize_diagram, validate_diagram

log = logging.getLogger(__name__)


class DegenerateDataError(ValueError):
    def __init__(self, variables):
        self.variables = sorted(set(variables))
        super().__init__(f"zero-variance regressor(s): {', '.join(self.variables)}")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-6
    max_iter: int = 500
    variance_floor: float = 1e-8
    latent_variance: float = 0.01
    initial_latent_mean: float = 0.5
    initial_cov: float = 1.0
    proxy_smoothing: float = 0.5
    mask_latent: bool = True


@dataclass(frozen=True)
class FitResult:
    diagram: PathDiagram
    variances: Mapping[str, float]
    intercepts: Mapping[str, float]
    loglik: float
    aic: float
    n_params: int
    n_iterations: int
    converged: bool
    loglik_trace: tuple[float, ...] = ()
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def coefficients(self) -> dict[Key, float]:
        return {k: float(c) for k, c in self.diagram.coefficients.items()}

    def coefficient(self, source: str, target: str, lag: int = 0) -> float:
        return self.coefficients[(source, target, lag)]

    def model(self) -> StateSpaceModel:
        return to_state_space(self.diagram, None, self.variances, self.intercepts,
                              self.config.initial_latent_mean, self.config.initial_cov,
                              self.config.variance_floor)


def aic(fit) -> float:
    """-2 log L + 2 k."""
    return -2.0 * float(fit.loglik) + 2.0 * int(fit.n_params)


def count_params(diagram: PathDiagram) -> int:
    """Free edges plus, per observed endogenous variable, a variance and an intercept."""
    _, obs_names, _, _ = build_equations(diagram)
    return len(diagram.edges) + 2 * len(obs_names)


# --- data plumbing -------------------------------------------------------------

@dataclass
class _Group:
    data: dict[str, np.ndarray]  # (N, T) raw arrays
    n: int
    steps: int  # T' = T - t_start
    known: dict[str, np.ndarray] = field(default_factory=dict)  # per equation (N, rows, p)


def _equation_rows(eq: Equation) -> int:
    return 1 if eq.latent else 0


def _known_matrix(eq: Equation, data: Mapping[str, np.ndarray], t_start: int, first: int) -> np.ndarray:
    total = next(iter(data.values())).shape[1]
    cols = [data[src][:, t_start + first - lag:total - lag] for src, lag, _ in eq.known]
    if eq.intercept:
        cols.append(np.ones((next(iter(data.values())).shape[0], total - t_start - first)))
    if not cols:
        return np.zeros((next(iter(data.values())).shape[0], total - t_start - first, 0))
    return np.stack(cols, axis=-1)


def _groups(panel: PanelDataset, names, t_start: int, equations) -> list[_Group]:
    by_len: dict[int, list[int]] = {}
    for i, T in enumerate(panel.lengths):
        if T > t_start:
            by_len.setdefault(T, []).append(i)
    groups = []
    for T in sorted(by_len):
        sub = panel.subset(by_len[T])
        data = {n: sub.array(n) for n in names}
        g = _Group(data, len(by_len[T]), T - t_start)
        for eq in equations:
            g.known[eq.target] = _known_matrix(eq, data, t_start, _equation_rows(eq))
        groups.append(g)
    return groups


def _check_degenerate(equations, groups, t_start) -> None:
    bad = []
    for eq in equations:
        for j, (src, lag, _) in enumerate(eq.known):
            vals = np.concatenate([g.known[eq.target][..., j].ravel() for g in groups])
            if vals.size and np.ptp(vals) <= 1e-12:
                bad.append(src)
    if bad:
        raise DegenerateDataError(bad)


# --- initialisation --------------------------------------------------------------

def _latent_proxy(diagram: PathDiagram, v: str, data: Mapping[str, np.ndarray], alpha: float,
                  n: int, T: int) -> np.ndarray:
    col = data.get(v)
    if col is not None and not np.isnan(col).all():
        return np.where(np.isnan(col), np.nanmean(col), col)
    parents = [e.source for e in diagram.incoming(v)
               if e.lag == 0 and not diagram.variable(e.source).latent and e.source in data]
    if parents:
        x = data[parents[0]]
        out = np.empty_like(x)
        out[:, 0] = x[:, 0]
        for t in range(1, T):
            out[:, t] = (1 - alpha) * out[:, t - 1] + alpha * x[:, t]
        return out
    children = [e.target for e in diagram.outgoing(v)
                if not diagram.variable(e.target).latent and e.target in data]
    if children:
        return data[children[0]].copy()
    return np.zeros((n, T))


def _ols_init(diagram, equations, groups, t_start, config, names):
    coefs: dict[Key, float] = {}
    variances: dict[str, float] = {}
    intercepts: dict[str, float] = {}
    proxies = []
    for g in groups:
        n, T = next(iter(g.data.values())).shape
        p = dict(g.data)
        for v in diagram.latent_names:
            p[v] = _latent_proxy(diagram, v, g.data, config.proxy_smoothing, n, T)
        proxies.append(p)
    for eq in equations:
        incoming = diagram.incoming(eq.target)
        first = max([e.lag for e in incoming] + [t_start])
        X, y = [], []
        for p in proxies:
            T = next(iter(p.values())).shape[1]
            if T <= first:
                continue
            cols = [p[e.source][:, first - e.lag:T - e.lag].ravel() for e in incoming]
            if eq.intercept:
                cols.append(np.ones((T - first) * p[eq.target].shape[0]))
            X.append(np.column_stack(cols) if cols else np.zeros(((T - first) * p[eq.target].shape[0], 0)))
            y.append(p[eq.target][:, first:].ravel())
        X = np.vstack(X)
        y = np.concatenate(y)
        beta = np.linalg.lstsq(X, y, rcond=None)[0] if X.shape[1] else np.zeros(0)
        for e, b in zip(incoming, beta):
            coefs[e.key] = float(b)
        if eq.intercept:
            intercepts[eq.target] = float(beta[-1])
        if eq.latent:
            variances[eq.target] = config.latent_variance
        else:
            resid = y - X @ beta
            variances[eq.target] = max(float(np.mean(resid ** 2)), config.variance_floor)
    return coefs, variances, intercepts


# --- EM ---------------------------------------------------------------------------

def _e_step(diagram, params, groups, config):
    coefs, variances, intercepts = params
    model = to_state_space(diagram, coefs, variances, intercepts, config.initial_latent_mean,
                           config.initial_cov, config.variance_floor)
    total = 0.0
    stats = []
    for g in groups:
        y, a = model.inputs.prepare(g.data)
        sm = smooth_batch(model, y, a)
        total += float(np.sum(sm.filtered.loglik))
        stats.append(sm)
    return model, total, stats


def _m_step(diagram, equations, groups, stats, model, config):
    d = model.state_dim
    coefs: dict[Key, float] = {}
    variances: dict[str, float] = {}
    intercepts: dict[str, float] = {}
    for eq in equations:
        J = [j for j, _ in eq.random]
        nj = len(J)
        p = len(eq.known) + (1 if eq.intercept else 0)
        k = nj + p
        Srr = np.zeros((k, k))
        Sry = np.zeros(k)
        Syy = 0.0
        rows = 0
        for g, sm in zip(groups, stats):
            K = g.known[eq.target]
            if eq.latent:
                if g.steps < 2:
                    continue
                mean = np.concatenate([sm.means[:, 1:], sm.means[:, :-1]], axis=-1)
                top = np.concatenate([sm.covs[1:], sm.cross_covs[1:]], axis=-1)
                bottom = np.concatenate([np.transpose(sm.cross_covs[1:], (0, 2, 1)), sm.covs[:-1]], axis=-1)
                cov = np.concatenate([top, bottom], axis=-2)
                i0 = model.inputs.state_labels.index((eq.target, 0))
                ymean = mean[..., i0]
                yvar = cov[:, i0, i0]
            else:
                mean, cov = sm.means, sm.covs
                ymean = g.data[eq.target][:, model.inputs.t_start:]
                yvar = None
            n, steps = ymean.shape
            muJ = mean[..., J]
            VJ = cov[:, J][:, :, J].sum(axis=0)
            Srr[:nj, :nj] += np.einsum("ntj,ntk->jk", muJ, muJ) + n * VJ
            Srr[:nj, nj:] += np.einsum("ntj,ntk->jk", muJ, K)
            Srr[nj:, nj:] += np.einsum("ntj,ntk->jk", K, K)
            Sry[:nj] += np.einsum("ntj,nt->j", muJ, ymean)
            Sry[nj:] += np.einsum("ntj,nt->j", K, ymean)
            Syy += float(np.sum(ymean ** 2))
            if eq.latent:
                Sry[:nj] += n * cov[:, J, i0].sum(axis=0)
                Syy += n * float(np.sum(yvar))
            rows += n * steps
        Srr[nj:, :nj] = Srr[:nj, nj:].T
        if rows == 0:
            raise InsufficientDataError(f"no rows to estimate the equation of {eq.target}")
        if k:
            beta = np.linalg.lstsq(Srr, Sry, rcond=None)[0]
        else:
            beta = np.zeros(0)
        for (_, key), b in zip(eq.random, beta[:nj]):
            coefs[key] = float(b)
        for (_, _, key), b in zip(eq.known, beta[nj:]):
            coefs[key] = float(b)
        if eq.intercept:
            intercepts[eq.target] = float(beta[-1])
        if eq.latent:
            variances[eq.target] = config.latent_variance
        else:
            rss = Syy - 2.0 * beta @ Sry + beta @ Srr @ beta
            variances[eq.target] = max(float(rss) / rows, config.variance_floor)
    return coefs, variances, intercepts


def em_fit(diagram: PathDiagram, panel: PanelDataset, config: FitConfig | None = None,
           initial: tuple | None = None) -> FitResult:
    """Fit all edge coefficients of ``diagram`` to ``panel`` by EM.

    Latent columns are ignored when ``config.mask_latent`` is set. Returns the
    last iterate; ``converged`` is False when ``max_iter`` E-steps pass without
    the relative log-likelihood change dropping below ``tol``.
    """
    config = config or FitConfig()
    diagram = validate_diagram(diagram).without_coefficients()
    if panel.n_participants < 2 and sum(panel.lengths) < 10:
        raise InsufficientDataError("need at least 2 participants or 10 steps in total")
    labels, obs_names, equations, t_start = build_equations(diagram)
    names = sorted({eq.target for eq in equations if eq.target in panel.names}
                   | {src for eq in equations for src, _, _ in eq.known})
    missing = [n for n in names if n not in panel.names]
    if missing:
        raise InsufficientDataError(f"panel lacks variables {missing}")
    data_names = [n for n in names if not diagram.variable(n).latent]
    if not config.mask_latent:
        data_names += [n for n in diagram.latent_names if n in panel.names]
    groups = _groups(panel, data_names, t_start, equations)
    if not groups:
        raise InsufficientDataError(f"every series is shorter than {t_start + 1} steps")
    _check_degenerate(equations, groups, t_start)

    params = initial or _ols_init(diagram, equations, groups, t_start, config, data_names)
    trace: list[float] = []
    converged = False
    for it in range(config.max_iter):
        model, ll, stats = _e_step(diagram, params, groups, config)
        trace.append(ll)
        if not math.isfinite(ll):
            raise FloatingPointError(f"log-likelihood became {ll} at iteration {it}")
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
        if it == config.max_iter - 1:
            break
        params = _m_step(diagram, equations, groups, stats, model, config)
    if not converged:
        log.warning("EM stopped after %d iterations without converging", len(trace))
    coefs, variances, intercepts = params
    fitted = diagram.with_coefficients(coefs)
    k = count_params(diagram)
    return FitResult(fitted, dict(variances), dict(intercepts), trace[-1], -2.0 * trace[-1] + 2.0 * k,
                     k, len(trace), converged, tuple(trace), config)


# --- serialisation -----------------------------------------------------------------

_TRAILER = "[fit]"


def serialize_fit(fit: FitResult) -> str:
    lines = [serialize_diagram(fit.diagram).rstrip("\n"), _TRAILER,
             f"loglik={fit.loglik!r}", f"aic={fit.aic!r}", f"n_params={fit.n_params}",
             f"n_iterations={fit.n_iterations}", f"converged={'true' if fit.converged else 'false'}"]
    lines += [f"variance.{k}={v!r}" for k, v in sorted(fit.variances.items())]
    lines += [f"intercept.{k}={v!r}" for k, v in sorted(fit.intercepts.items())]
    lines += [f"config.{f.name}={getattr(fit.config, f.name)!r}" for f in fields(FitConfig)]
    return "\n".join(lines) + "\n"


def parse_fit(text: str) -> FitResult:
    if _TRAILER not in text.splitlines():
        raise ValueError("fit file lacks the [fit] trailer")
    lines = text.splitlines()
    cut = lines.index(_TRAILER)
    diagram = parse_diagram("\n".join(lines[:cut]))
    meta: dict[str, str] = {}
    for lineno, line in enumerate(lines[cut + 1:], start=cut + 2):
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    cfg_kwargs = {}
    for f in fields(FitConfig):
        raw = meta.get(f"config.{f.name}")
        if raw is None:
            continue
        cfg_kwargs[f.name] = raw == "True" if f.type in ("bool", bool) else type(getattr(FitConfig(), f.name))(raw)
    variances = {k[len("variance."):]: float(v) for k, v in meta.items() if k.startswith("variance.")}
    intercepts = {k[len("intercept."):]: float(v) for k, v in meta.items() if k.startswith("intercept.")}
    return FitResult(diagram, variances, intercepts, float(meta["loglik"]), float(meta["aic"]),
                     int(meta["n_params"]), int(meta["n_iterations"]), meta["converged"] == "true",
                     (), FitConfig(**cfg_kwargs))
