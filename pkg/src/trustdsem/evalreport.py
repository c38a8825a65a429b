"""Prediction metrics, significance tests and model-comparison reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from trustdsem.baselines import BaselineSpec, fit_baseline, forecast_one_step
from trustdsem.estimation.em import FitResult
from trustdsem.estimation.predict import DEFAULT_THRESHOLD, classify_array, classify_over_under, predict_panel
from trustdsem.pathmodel import PanelDataset

PM = "PM"
SUMMARY_HEADER = ("model", "acc_mean", "acc_sd", "rmse_mean", "rmse_sd", "precision", "recall")
CURVES_HEADER = ("step", "actual_prop", "predicted_prop")
STATS_HEADER = ("pair", "raw_p", "adjusted_p")
PARTICIPANT_HEADER = ("participant", "model", "acc", "rmse")


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=float).ravel()
    b = np.asarray(actual, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} predicted vs {b.size} actual")
    return a, b


def accuracy(predicted, actual) -> float:
    a, b = _pair(predicted, actual)
    if a.size == 0:
        raise ValueError("accuracy of empty sequences is undefined")
    return float(np.mean(a == b))


def rmse(predicted, actual) -> float:
    a, b = _pair(predicted, actual)
    if a.size == 0:
        raise ValueError("rmse of empty sequences is undefined")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def to_binary(labels) -> np.ndarray:
    """Collapse ternary labels to over-trust (1) versus everything else (0)."""
    return (np.asarray(labels) == 1).astype(int)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float | None  # None when nothing was predicted positive
    recall: float | None  # None when nothing is actually positive

    @property
    def precision_undefined(self) -> bool:
        return self.precision is None

    @property
    def recall_undefined(self) -> bool:
        return self.recall is None

    def __iter__(self):
        yield self.precision
        yield self.recall


def precision_recall(predicted, actual, positive_class: int = 1) -> PrecisionRecall:
    if positive_class not in (-1, 1):
        raise ValueError("positive_class must be 1 or -1")
    a, b = _pair(predicted, actual)
    pp = a == positive_class
    ap = b == positive_class
    tp = int(np.sum(pp & ap))
    prec = tp / int(pp.sum()) if pp.any() else None
    rec = tp / int(ap.sum()) if ap.any() else None
    return PrecisionRecall(prec, rec)


@dataclass(frozen=True)
class ProportionRow:
    step: int
    actual_prop: float
    predicted_prop: float


def _signed_share(labels: np.ndarray) -> np.ndarray:
    return (np.sum(labels == 1, axis=0) - np.sum(labels == -1, axis=0)) / labels.shape[0]


def per_step_proportions(actual, predicted, steps: Sequence[int] | None = None) -> list[ProportionRow]:
    """Signed over/under-trust share per step: (#over - #under) / n_participants.

    ``actual`` and ``predicted`` are participants x steps label tables.
    """
    def table(rows, what):
        rows = [np.asarray(r) for r in rows]
        if not rows or len({r.size for r in rows}) != 1:
            raise ValueError(f"{what} labels must cover every participant at every step")
        return np.vstack(rows)

    A = table(actual, "actual")
    P = table(predicted, "predicted")
    if A.shape != P.shape:
        raise ValueError(f"actual {A.shape} and predicted {P.shape} tables differ")
    steps = list(range(A.shape[1])) if steps is None else list(steps)
    if len(steps) != A.shape[1]:
        raise ValueError("steps must label every column")
    a, p = _signed_share(A), _signed_share(P)
    return [ProportionRow(int(s), float(x), float(y)) for s, x, y in zip(steps, a, p)]


@dataclass(frozen=True)
class AnovaResult:
    F: float
    p: float
    df_between: int
    df_within: int
    infinite_f: bool = False  # zero within-group variance with differing means


def _check_groups(groups) -> list[np.ndarray]:
    gs = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(gs) < 2:
        raise ValueError("need at least two groups")
    if any(g.size < 2 for g in gs):
        raise ValueError("every group needs at least two samples")
    if not all(np.all(np.isfinite(g)) for g in gs):
        raise ValueError("samples must be finite")
    return gs


def anova_one_way(groups) -> AnovaResult:
    gs = _check_groups(groups)
    k = len(gs)
    n = sum(g.size for g in gs)
    grand = np.concatenate(gs).mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in gs)
    dfb, dfw = k - 1, n - k
    # tiny sums of squares are round-off from identical means
    scale = max(float(np.abs(np.concatenate(gs)).max()), 1.0) ** 2 * n * 1e-24
    if ss_between <= scale:
        return AnovaResult(0.0, 1.0, dfb, dfw)
    if ss_within <= scale:
        return AnovaResult(math.inf, 0.0, dfb, dfw, infinite_f=True)
    F = (ss_between / dfb) / (ss_within / dfw)
    return AnovaResult(float(F), float(stats.f.sf(F, dfb, dfw)), dfb, dfw)


def student_t(a, b) -> tuple[float, float]:
    """Pooled-variance two-sample t statistic and two-sided p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    df = a.size + b.size - 2
    diff = a.mean() - b.mean()
    pooled = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / df
    se = math.sqrt(pooled * (1 / a.size + 1 / b.size))
    tol = 1e-12 * max(abs(a.mean()), abs(b.mean()), 1.0)
    if abs(diff) <= tol:
        return 0.0, 1.0
    if se == 0.0:
        return math.copysign(math.inf, diff), 0.0
    t = diff / se
    return float(t), float(2 * stats.t.sf(abs(t), df))


def holm_adjust(pvalues) -> np.ndarray:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adj[i] = running
    return adj


@dataclass(frozen=True)
class PairwiseResult:
    pair: tuple[str, str]
    t: float
    raw_p: float
    adjusted_p: float

    @property
    def label(self) -> str:
        return f"{self.pair[0]} vs {self.pair[1]}"


def pairwise_comparisons(groups, names: Sequence[str] | None = None, method: str = "holm") -> list[PairwiseResult]:
    if method != "holm":
        raise ValueError("only the holm adjustment is implemented")
    gs = _check_groups(groups)
    names = list(names) if names is not None else [str(i) for i in range(len(gs))]
    if len(names) != len(gs):
        raise ValueError("one name per group is required")
    pairs = list(combinations(range(len(gs)), 2))
    tests = [student_t(gs[i], gs[j]) for i, j in pairs]
    adj = holm_adjust([p for _, p in tests])
    return [PairwiseResult((names[i], names[j]), t, p, float(q))
            for (i, j), (t, p), q in zip(pairs, tests, adj)]


@dataclass(frozen=True)
class MetricsSummary:
    model: str
    participants: tuple[str, ...] = ()
    accuracies: tuple[float, ...] = ()
    rmses: tuple[float, ...] = ()
    precision: float | None = None
    recall: float | None = None
    failed: str | None = None

    @staticmethod
    def _sd(x) -> float:
        return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else math.nan

    @property
    def acc_sd(self) -> float:
        return self._sd(self.accuracies)

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmses)) if self.rmses else math.nan

    @property
    def rmse_sd(self) -> float:
        return self._sd(self.rmses)


def summarize(model: str, pids, pred_values, pred_labels, actual_values, actual_labels,
              binary: bool = False) -> MetricsSummary:
    """Per-participant accuracy and RMSE plus pooled over-trust precision/recall.

    Array arguments are participants x evaluation-steps.
    """
    pl, al = np.asarray(pred_labels), np.asarray(actual_labels)
    if binary:
        pl, al = to_binary(pl), to_binary(al)
    accs = tuple(accuracy(p, a) for p, a in zip(pl, al))
    errs = tuple(rmse(p, a) for p, a in zip(pred_values, actual_values))
    pr = precision_recall(pl.ravel(), al.ravel(), 1)
    return MetricsSummary(model, tuple(pids), accs, errs, pr.precision, pr.recall)


@dataclass(frozen=True)
class CompareConfig:
    threshold: float = DEFAULT_THRESHOLD
    binary: bool = False
    eval_start: int | None = None  # default: the first step every arm can predict


@dataclass(frozen=True)
class ComparisonReport:
    summaries: tuple[MetricsSummary, ...]
    anova: AnovaResult | None
    pairwise: tuple[PairwiseResult, ...]
    curves: tuple[ProportionRow, ...]
    eval_start: int
    binary: bool = False
    adjustment: str = "holm"
    notes: tuple[str, ...] = field(default=())

    @property
    def models(self) -> list[str]:
        return [s.model for s in self.summaries]

    def summary(self, model: str) -> MetricsSummary:
        for s in self.summaries:
            if s.model == model:
                return s
        raise KeyError(model)

    def pair(self, a: str, b: str) -> PairwiseResult:
        for r in self.pairwise:
            if set(r.pair) == {a, b}:
                return r
        raise KeyError((a, b))


def baseline_predictions(panel: PanelDataset, spec: BaselineSpec, target: str, start: int,
                         threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``spec`` to each participant's target series, forecast steps start..T-1."""
    vals, labs = [], []
    for p in panel.participants:
        y = np.asarray(p[target], dtype=float)
        fit = fit_baseline(y, spec)
        f = np.array([forecast_one_step(fit, y[:t]) for t in range(start, y.size)])
        if not np.all(np.isfinite(f)):
            raise FloatingPointError(f"{spec} produced non-finite forecasts for {p.pid}")
        vals.append(f)
        labs.append([classify_over_under(v, threshold) for v in f])
    return np.array(vals), np.array(labs)


def compare_models(panel: PanelDataset, pm_fit: FitResult, baseline_specs: Sequence[BaselineSpec],
                   config: CompareConfig | None = None) -> ComparisonReport:
    """One-step-ahead comparison of the path model against univariate baselines.

    Every arm is scored on the same steps: from the first step at which all
    arms can forecast to the end of each series. ANOVA and Holm-adjusted
    pairwise t tests run over per-participant accuracies of the arms that
    did not fail.
    """
    config = config or CompareConfig()
    target = pm_fit.diagram.target
    pm_start = max(pm_fit.model().inputs.t_start, pm_fit.diagram.max_lag)
    start = config.eval_start
    if start is None:
        start = max([pm_start] + [s.history_needed for s in baseline_specs])
    T = min(panel.lengths)
    if len(set(panel.lengths)) != 1:
        raise ValueError("comparison needs equal-length series")
    if start >= T:
        raise ValueError(f"evaluation would start at step {start} but series have {T} steps")
    actual_vals = panel.array(target)
    actual_labs = np.rint(actual_vals).astype(int)
    pids = [p.pid for p in panel.participants]

    summaries, notes = [], []
    pm_vals, pm_labs = predict_panel(pm_fit, panel, pm_start, config.threshold)
    off = start - pm_start
    summaries.append(summarize(PM, pids, pm_vals[:, off:], pm_labs[:, off:], actual_vals[:, start:],
                               actual_labs[:, start:], config.binary))
    curves = per_step_proportions(actual_labs[:, pm_start:], pm_labs, range(pm_start, T))

    for spec in baseline_specs:
        name = str(spec)
        try:
            v, l = baseline_predictions(panel, spec, target, start, config.threshold)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            summaries.append(MetricsSummary(name, failed=str(exc)))
            notes.append(f"{name} failed: {exc}")
            continue
        summaries.append(summarize(name, pids, v, l, actual_vals[:, start:], actual_labs[:, start:], config.binary))

    ok = [s for s in summaries if s.failed is None]
    anova, pairwise = None, []
    if len(ok) >= 2 and len(pids) >= 2:
        groups = [s.accuracies for s in ok]
        anova = anova_one_way(groups)
        pairwise = pairwise_comparisons(groups, [s.model for s in ok])
    return ComparisonReport(tuple(summaries), anova, tuple(pairwise), tuple(curves), start,
                            config.binary, "holm", tuple(notes))


def _fmt(x) -> str:
    if x is None:
        return "NA"
    return repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_csv(report: ComparisonReport) -> str:
    rows = []
    for s in report.summaries:
        if s.failed:
            rows.append([s.model, "NA", "NA", "NA", "NA", "NA", "NA"])
        else:
            rows.append([s.model, _fmt(s.acc_mean), _fmt(s.acc_sd), _fmt(s.rmse_mean), _fmt(s.rmse_sd),
                         _fmt(s.precision), _fmt(s.recall)])
    return _csv_text(SUMMARY_HEADER, rows)


def curves_csv(report: ComparisonReport) -> str:
    return _csv_text(CURVES_HEADER, [[r.step, _fmt(r.actual_prop), _fmt(r.predicted_prop)] for r in report.curves])


def stats_csv(report: ComparisonReport) -> str:
    return _csv_text(STATS_HEADER, [[r.label, _fmt(r.raw_p), _fmt(r.adjusted_p)] for r in report.pairwise])


def participants_csv(report: ComparisonReport) -> str:
    rows = [[pid, s.model, _fmt(a), _fmt(e)]
            for s in report.summaries for pid, a, e in zip(s.participants, s.accuracies, s.rmses)]
    return _csv_text(PARTICIPANT_HEADER, rows)


def text_summary(report: ComparisonReport) -> str:
    lines = [f"evaluation steps: {report.eval_start} onward"
             f" ({'binary over-trust' if report.binary else 'ternary'} labels)", ""]
    lines.append(f"{'model':<22}{'ACC':>16}{'RMSE':>16}{'prec':>8}{'recall':>8}")
    for s in report.summaries:
        if s.failed:
            lines.append(f"{s.model:<22}failed: {s.failed}")
            continue
        pr = "NA" if s.precision is None else f"{s.precision:.2f}"
        rc = "NA" if s.recall is None else f"{s.recall:.2f}"
        lines.append(f"{s.model:<22}{s.acc_mean:>9.2f}({s.acc_sd:.2f}){s.rmse_mean:>9.2f}({s.rmse_sd:.2f})"
                     f"{pr:>8}{rc:>8}")
    if report.anova is not None:
        a = report.anova
        lines += ["", f"one-way ANOVA on per-participant accuracy: F({a.df_between},{a.df_within}) = {a.F:.3f},"
                      f" p = {a.p:.3g}", f"pairwise t tests, {report.adjustment} adjusted:"]
        for r in report.pairwise:
            lines.append(f"  {r.label:<40} raw p = {r.raw_p:.3g}  adjusted p = {r.adjusted_p:.3g}")
    lines += [f"note: {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


def write_report(report: ComparisonReport, outdir) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "summary": ("summary.csv", summary_csv(report)),
        "curves": ("curves.csv", curves_csv(report)),
        "stats": ("stats.csv", stats_csv(report)),
        "participants": ("participants.csv", participants_csv(report)),
        "text": ("summary.txt", text_summary(report)),
    }
    paths = {}
    for key, (name, text) in files.items():
        path = out / name
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        paths[key] = path
    return paths
