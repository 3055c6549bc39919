"""Gaze-driven intention recognition and assistive planning."""

from ._core import (
    GazeError,
    IntentModel,
    build_prompt,
    canonical_plan,
    classify_region,
    confirm,
    execute,
    gaze_ratio,
    gradient_check,
    half_diagonal,
    infer_intentions,
    mock_reply,
    parse_numbered_list,
    replay,
    separable_windows,
    system_eval,
    train,
    train_session_model,
    validate_plan,
)

__all__ = [
    "GazeError",
    "IntentModel",
    "build_prompt",
    "canonical_plan",
    "classify_region",
    "confirm",
    "execute",
    "gaze_ratio",
    "gradient_check",
    "half_diagonal",
    "infer_intentions",
    "mock_reply",
    "parse_numbered_list",
    "replay",
    "separable_windows",
    "system_eval",
    "train",
    "train_session_model",
    "validate_plan",
]
