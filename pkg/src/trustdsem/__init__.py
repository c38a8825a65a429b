"""Trust-dynamics prediction with dynamic path diagrams.

Latent-trust path models are compiled to linear-Gaussian state-space form,
fitted by EM, searched over autoregressive lag structures and compared
against univariate AR-family baselines on simulated human-AI cohorts.
"""

__version__ = "0.1.0"

from trustdsem.pathmodel import (
    LaggedEdge,
    PanelDataset,
    ParticipantSeries,
    PathDiagram,
    VariableSpec,
    build_paper_diagram,
    parse_diagram,
    serialize_diagram,
    validate_diagram,
)
from trustdsem.estimation import (
    FitConfig,
    FitResult,
    PredictionRecord,
    aic,
    classify_over_under,
    em_fit,
    kalman_filter,
    kalman_smooth,
    predict_one_step,
    to_state_space,
)

__all__ = [
    "FitConfig",
    "FitResult",
    "LaggedEdge",
    "PanelDataset",
    "ParticipantSeries",
    "PathDiagram",
    "PredictionRecord",
    "VariableSpec",
    "aic",
    "build_paper_diagram",
    "classify_over_under",
    "em_fit",
    "kalman_filter",
    "kalman_smooth",
    "parse_diagram",
    "predict_one_step",
    "serialize_diagram",
    "to_state_space",
    "validate_diagram",
]
