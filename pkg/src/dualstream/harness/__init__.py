"""Training, evaluation protocols and reporting."""

from .baseline import random_baseline
from .experiment import (
    CVRun,
    ExperimentSpec,
    OptimizerConfig,
    PreparedCohort,
    TrainingDivergence,
    TrainResult,
    cross_validate,
    derive_seed,
    drug_protocol,
    prepare_cohort,
    run_cv,
    train_model,
)
from .folds import FoldSplit, stratified_kfold
from .metrics import METRICS, MetricsReport, auroc, compute_metrics, confusion
from .probes import extract_features, fold_feature_probe, linear_probe, pca_features, raw_features

__all__ = [
    "CVRun",
    "ExperimentSpec",
    "FoldSplit",
    "METRICS",
    "MetricsReport",
    "OptimizerConfig",
    "PreparedCohort",
    "TrainResult",
    "TrainingDivergence",
    "auroc",
    "compute_metrics",
    "confusion",
    "cross_validate",
    "derive_seed",
    "drug_protocol",
    "extract_features",
    "fold_feature_probe",
    "linear_probe",
    "pca_features",
    "prepare_cohort",
    "random_baseline",
    "raw_features",
    "run_cv",
    "stratified_kfold",
    "train_model",
]
