"""Learned forward/inverse models of the commanded -> physical map."""
from .core import (
    AblationRow,
    Ensemble,
    Model,
    ModelSpec,
    TrainConfig,
    evaluate,
    gradient_check,
    horizon_ablation,
    load_model,
    predict,
    rollout,
    save_model,
    train,
    train_ensemble,
    train_many,
)
from .lasso import lasso_fit

__all__ = [
    "AblationRow", "Ensemble", "Model", "ModelSpec", "TrainConfig", "evaluate",
    "gradient_check", "horizon_ablation", "lasso_fit", "load_model", "predict",
    "rollout", "save_model", "train", "train_ensemble", "train_many",
]
