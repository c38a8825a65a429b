"""Threshold-gated diagram selection and brute-force search over trust lags.

Candidates differ only in which autoregressive lags of the latent trust
variable they carry; every other edge comes from the base diagram.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence

import numpy as np

from trustdsem.estimation.em import FitConfig, FitResult, em_fit
from trustdsem.estimation.predict import DEFAULT_THRESHOLD, predict_panel
from trustdsem.pathmodel import TRUST, LaggedEdge, PanelDataset, PathDiagram, validate_diagram

CRITERIA = ("aic", "rolling_cv_accuracy", "rolling_cv_rmse")
CRITERION_ALIASES = {"cv_acc": "rolling_cv_accuracy", "cv_rmse": "rolling_cv_rmse"}
DEFAULT_CAP = 2 ** 20
REPORT_HEADER = ("lag_subset", "criterion", "score", "aic", "loglik", "converged")


class EnumerationCapError(ValueError):
    pass


class SearchError(RuntimeError):
    def __init__(self, message: str, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


@dataclass(frozen=True)
class SearchConfig:
    tau: float = 0.9
    eta: int = 1
    criterion: str = "aic"
    min_train_origin: int = 2
    horizon: int = 1
    threshold: float = DEFAULT_THRESHOLD
    cap: int = DEFAULT_CAP
    fit: FitConfig = field(default_factory=FitConfig)
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "criterion", CRITERION_ALIASES.get(self.criterion, self.criterion))
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA} (or {sorted(CRITERION_ALIASES)})")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.eta < 1:
            raise ValueError("eta must be a positive integer")
        if self.horizon != 1:
            raise ValueError("only one-step-ahead horizons are supported")
        if self.min_train_origin < self.eta + 1:
            raise ValueError(f"min_train_origin must be >= eta + 1 = {self.eta + 1}")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")

    def check_panel(self, panel: PanelDataset) -> None:
        shortest = min(panel.lengths)
        if self.eta > shortest - 1:
            raise ValueError(f"eta={self.eta} exceeds shortest series length - 1 = {shortest - 1}")


def enumerate_lag_subsets(eta: int, cap: int = DEFAULT_CAP) -> list[tuple[int, ...]]:
    """All nonempty subsets of 1..eta, by size then lexicographically."""
    if eta < 1:
        raise ValueError("eta must be >= 1")
    if 2 ** eta - 1 > cap:
        raise EnumerationCapError(f"eta={eta} gives {2 ** eta - 1} candidates, above the cap of {cap};"
                                  f" lower eta to at most {int(math.log2(cap + 1))}")
    lags = range(1, eta + 1)
    return [c for k in lags for c in combinations(lags, k)]


def _trust_variable(diagram: PathDiagram) -> str:
    latents = diagram.latent_names
    if TRUST in latents:
        return TRUST
    if len(latents) == 1:
        return latents[0]
    raise ValueError(f"cannot tell which latent carries the searched lags: {latents}")


def lag_variant(base: PathDiagram, lags: Sequence[int]) -> PathDiagram:
    """``base`` with its latent self-lags replaced by ``lags`` (coefficients cleared)."""
    lags = sorted(set(int(k) for k in lags))
    if not lags or lags[0] < 1:
        raise ValueError("lag subsets must be nonempty and positive")
    v = _trust_variable(base)
    kept = [replace(e, coefficient=None) for e in base.edges
            if not (e.source == v and e.target == v and e.lag >= 1)]
    edges = kept + [LaggedEdge(v, v, k) for k in lags]
    max_lag = max([e.lag for e in edges] + [1])
    return validate_diagram(PathDiagram(base.variables, tuple(edges), max_lag, base.target))


@dataclass(frozen=True)
class OriginRecord:
    origin: int
    n_predicted: int
    accuracy: float
    rmse: float
    converged: bool


@dataclass(frozen=True)
class CVResult:
    accuracy: float
    rmse: float
    records: tuple[OriginRecord, ...]


def _origin_panels(panel: PanelDataset, origin: int) -> tuple[PanelDataset, PanelDataset]:
    """Training panel (steps < origin) and the step-``origin`` prediction panel."""
    train = PanelDataset(panel.variables, tuple(p.head(min(origin, len(p))) for p in panel.participants))
    idx = [i for i, T in enumerate(panel.lengths) if T > origin]
    test = panel.subset(idx).head(origin + 1)
    return train, test


def rolling_origin_cv(diagram: PathDiagram, panel: PanelDataset, config: SearchConfig) -> CVResult:
    """Expanding-window one-step-ahead cross-validation.

    At origin ``o`` the model is fitted on steps ``0..o-1`` of every series
    and predicts step ``o``; origins run from ``min_train_origin`` to the last
    step. Returns the unweighted means over origins.
    """
    m = config.min_train_origin
    if min(panel.lengths) <= m:
        raise ValueError(f"every series must be longer than min_train_origin={m}")
    target = diagram.target
    records = []
    for o in range(m, max(panel.lengths)):
        train, test = _origin_panels(panel, o)
        fit = em_fit(diagram, train, config.fit)
        values, labels = predict_panel(fit, test, o, config.threshold)
        actual = test.array(target)[:, o]
        acc = float(np.mean(labels[:, 0] == np.rint(actual)))
        err = float(np.sqrt(np.mean((values[:, 0] - actual) ** 2)))
        records.append(OriginRecord(o, int(actual.size), acc, err, fit.converged))
    return CVResult(float(np.mean([r.accuracy for r in records])),
                    float(np.mean([r.rmse for r in records])), tuple(records))


@dataclass(frozen=True)
class StaticSelection:
    diagram: PathDiagram
    score: float
    index: int
    above_threshold: bool
    scores: tuple[float, ...]


def select_static_diagram(candidates: Sequence[PathDiagram], panel: PanelDataset, config: SearchConfig,
                          scorer=None) -> StaticSelection:
    """First candidate whose rolling-CV accuracy reaches ``tau``, else the best one.

    ``scorer(diagram, panel, config) -> accuracy`` defaults to rolling-origin CV.
    Candidates after the first accepted one are not scored.
    """
    if not candidates:
        raise ValueError("no candidate diagrams")
    scorer = scorer or (lambda d, p, c: rolling_origin_cv(d, p, c).accuracy)
    scores = []
    for i, d in enumerate(candidates):
        s = float(scorer(d, panel, config))
        scores.append(s)
        if s >= config.tau:
            return StaticSelection(d, s, i, True, tuple(scores))
    best = int(np.argmax(scores))
    return StaticSelection(candidates[best], scores[best], best, False, tuple(scores))


@dataclass(frozen=True)
class CandidateScore:
    lag_subset: tuple[int, ...]
    score: float
    fit: FitResult | None
    aic: float = math.nan
    loglik: float = math.nan
    converged: bool = False
    cv: CVResult | None = None
    error: str | None = None

    def __post_init__(self):
        if not self.lag_subset or min(self.lag_subset) < 1:
            raise ValueError("lag_subset must be nonempty and positive")

    @property
    def ok(self) -> bool:
        return self.error is None


def score_candidate(base: PathDiagram, lags: tuple[int, ...], panel: PanelDataset,
                    config: SearchConfig) -> CandidateScore:
    try:
        diagram = lag_variant(base, lags)
        fit = em_fit(diagram, panel, config.fit)
        cv = None
        if config.criterion == "aic":
            score = fit.aic
        else:
            cv = rolling_origin_cv(diagram, panel, config)
            score = cv.accuracy if config.criterion == "rolling_cv_accuracy" else cv.rmse
        return CandidateScore(lags, float(score), fit, fit.aic, fit.loglik, fit.converged, cv)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return CandidateScore(lags, math.nan, None, error=f"{type(exc).__name__}: {exc}")


def ranking_key(candidate: CandidateScore, criterion: str) -> tuple:
    """Smaller is better: criterion value, then fewer lags, then lexicographic subset."""
    primary = -candidate.score if criterion == "rolling_cv_accuracy" else candidate.score
    return (primary, len(candidate.lag_subset), candidate.lag_subset)


def best_candidate(candidates: Sequence[CandidateScore], criterion: str) -> CandidateScore:
    ok = [c for c in candidates if c.ok and math.isfinite(c.score)]
    if not ok:
        raise SearchError("every candidate failed", candidates)
    return min(ok, key=lambda c: ranking_key(c, criterion))


def _score_job(args):
    return score_candidate(*args)


def optimize_structure(base: PathDiagram, panel: PanelDataset, config: SearchConfig
                       ) -> tuple[CandidateScore, list[CandidateScore]]:
    """Score every nonempty trust-lag subset of 1..eta and pick the winner.

    Failed candidates carry an error message instead of a fit. The returned
    list follows the enumeration order whatever ``n_jobs`` is.
    """
    validate_diagram(base)
    config.check_panel(panel)
    subsets = enumerate_lag_subsets(config.eta, config.cap)
    jobs = [(base, s, panel, config) for s in subsets]
    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_score_job, jobs))
    else:
        results = [_score_job(j) for j in jobs]
    return best_candidate(results, config.criterion), results


def format_subset(lags: Sequence[int]) -> str:
    return ";".join(str(k) for k in lags)


def search_report_csv(candidates: Sequence[CandidateScore], criterion: str) -> str:
    def num(x):
        return repr(float(x)) if x is not None and math.isfinite(x) else "NA"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for c in candidates:
        w.writerow([format_subset(c.lag_subset), criterion, num(c.score), num(c.aic), num(c.loglik),
                    "true" if c.converged else ("error" if c.error else "false")])
    return buf.getvalue()
