"""Iterative uncertainty quantification for continual open-world learning."""

from .engine import CouqConfig, CouqState, TaskResult, run_task, score_initial, score_iter
from .featstore import (
    FeatureRecord,
    FeatureSet,
    SyntheticSpec,
    TaskSpec,
    TaskStream,
    build_task_stream,
    gen_synthetic,
    load_features,
    save_features,
)
from .evalkit import RunReport, auroc, continual_accuracy, emit_report
from .mapper import Mapper, assign, fit_kmeans, fit_shallow_net
from .scoring import CategorizationRule, ScoredSample, categorize, select_pseudolabels
from .selection import BudgetLedger, LabelOracle, QueryBatch, select_active
from .subspace import ClassSubspace, fit_subspace, fre, min_fre

__version__ = "0.1.0"

__all__ = [
    "BudgetLedger",
    "CategorizationRule",
    "ClassSubspace",
    "CouqConfig",
    "CouqState",
    "FeatureRecord",
    "FeatureSet",
    "LabelOracle",
    "Mapper",
    "QueryBatch",
    "RunReport",
    "ScoredSample",
    "SyntheticSpec",
    "TaskResult",
    "TaskSpec",
    "TaskStream",
    "assign",
    "auroc",
    "build_task_stream",
    "categorize",
    "continual_accuracy",
    "emit_report",
    "fit_kmeans",
    "fit_shallow_net",
    "fit_subspace",
    "fre",
    "gen_synthetic",
    "load_features",
    "min_fre",
    "run_task",
    "save_features",
    "score_initial",
    "score_iter",
    "select_active",
    "select_pseudolabels",
    "__version__",
]
