from trustdsem.estimation.em import (
    DegenerateDataError,
    FitConfig,
    FitResult,
    InsufficientDataError,
    aic,
    count_params,
    em_fit,
    parse_fit,
    serialize_fit,
)
from trustdsem.estimation.kalman import (
    FilterResult,
    SingularInnovationError,
    SmoothResult,
    kalman_filter,
    kalman_smooth,
)
from trustdsem.estimation.predict import (
    PredictionRecord,
    classify_array,
    classify_over_under,
    predict_one_step,
    predict_panel,
    predict_steps,
)
from trustdsem.estimation.simulate import simulate_structural
from trustdsem.estimation.statespace import CompileError, StateSpaceModel, to_state_space

__all__ = [
    "CompileError",
    "DegenerateDataError",
    "FilterResult",
    "FitConfig",
    "FitResult",
    "InsufficientDataError",
    "PredictionRecord",
    "SingularInnovationError",
    "SmoothResult",
    "StateSpaceModel",
    "aic",
    "classify_array",
    "classify_over_under",
    "count_params",
    "em_fit",
    "kalman_filter",
    "kalman_smooth",
    "parse_fit",
    "predict_one_step",
    "predict_panel",
    "predict_steps",
    "serialize_fit",
    "simulate_structural",
    "to_state_space",
]
