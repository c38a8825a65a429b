"""One-step-ahead prediction and over/under-trust labelling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from trustdsem.estimation.em import FitResult
from trustdsem.estimation.kalman import filter_batch
from trustdsem.estimation.statespace import StateSpaceModel, series_arrays
from trustdsem.pathmodel import PanelDataset

DEFAULT_THRESHOLD = 0.5


def classify_over_under(value: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """1 above ``threshold``, -1 below ``-threshold``, otherwise 0."""
    if not math.isfinite(value):
        raise ValueError(f"cannot classify non-finite value {value}")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if value > threshold:
        return 1
    if value < -threshold:
        return -1
    return 0


def classify_array(values: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot classify non-finite values")
    return np.where(values > threshold, 1, np.where(values < -threshold, -1, 0))


@dataclass(frozen=True)
class PredictionRecord:
    pid: str
    t: int
    predicted: Mapping[str, float]
    label: int
    actual_label: int | None = None


def _data_names(model: StateSpaceModel) -> set[str]:
    eqs = model.inputs.equations
    return {eq.target for eq in eqs if not eq.latent} | {src for eq in eqs for src, _, _ in eq.known}


def predict_steps(fit: FitResult, data: Mapping[str, np.ndarray], model: StateSpaceModel | None = None
                  ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Predicted state means and observed-variable means at every step of a batch.

    ``data`` holds (N, T) arrays. The value at step ``t`` conditions only on
    observations before ``t`` plus exogenous inputs at ``t``. Returns arrays
    covering steps ``t_start..T-1``.
    """
    model = model or fit.model()
    y, a = model.inputs.prepare(data)
    out = filter_batch(model, y, a)
    preds = model.inputs.predict_observed(out.pred_means, data, model.observation, model.inputs.t_start)
    return out.pred_means, preds


def predict_one_step(fit: FitResult, history, next_values: Mapping[str, float],
                     threshold: float = DEFAULT_THRESHOLD, pid: str = "") -> PredictionRecord:
    """Predict step ``len(history)`` given the records before it.

    ``next_values`` must hold the exogenous inputs of the predicted step; if it
    also holds the target's realised value, that becomes ``actual_label``.
    """
    model = fit.model()
    diagram = fit.diagram
    names = _data_names(model)
    hist = series_arrays(history, names)
    T = next(iter(hist.values())).shape[1] if hist else 0
    if T < diagram.max_lag:
        raise ValueError(f"history of {T} steps is shorter than max_lag={diagram.max_lag}")
    ext = {}
    endog = set(diagram.endogenous)
    for n in names:
        nxt = np.nan
        if n not in endog:
            if n not in next_values:
                raise KeyError(f"next_values lacks exogenous input {n!r}")
            nxt = float(next_values[n])
        ext[n] = np.concatenate([hist[n], [[nxt]]], axis=1)
    # endogenous values at the predicted step are unknown; lag-0 uses get predictions
    state, preds = predict_steps(fit, {n: np.nan_to_num(v, nan=0.0) for n, v in ext.items()}, model)
    predicted = {n: float(v[0, -1]) for n, v in preds.items()}
    for (v, k), i in zip(model.inputs.state_labels, range(model.state_dim)):
        if k == 0:
            predicted[v] = float(state[0, -1, i])
    label = classify_over_under(predicted[diagram.target], threshold)
    actual = next_values.get(diagram.target)
    actual_label = None if actual is None or math.isnan(actual) else int(round(actual))
    return PredictionRecord(pid, T, predicted, label, actual_label)


def predict_panel(fit: FitResult, panel: PanelDataset, start: int,
                  threshold: float = DEFAULT_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Continuous target predictions and labels for steps ``start..T-1``.

    Returns (N, T - start) arrays; the panel must have equal-length series.
    """
    model = fit.model()
    names = _data_names(model)
    data = {n: panel.array(n) for n in names}
    _, preds = predict_steps(fit, data, model)
    t0 = model.inputs.t_start
    if start < t0:
        raise ValueError(f"cannot predict before step {t0}")
    values = preds[fit.diagram.target][:, start - t0:]
    return values, classify_array(values, threshold)
