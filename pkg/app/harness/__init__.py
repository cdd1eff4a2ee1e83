"""
Valutazione a valle, metriche, studio percettivo, sweep e ablazioni
"""

from app.harness.predictor import build_predictor, predict, train_predictor
from app.harness.evaluation import (
    CumulativeCurve,
    DriftReport,
    EvalResult,
    annotation_drift,
    downstream_comparison,
    eval_predictor,
    probe_realism,
)
from app.harness.study_export import confusion_accuracy, export_confusion
from app.harness.experiment import DataSplits, evaluate_run, generate_data, load_splits, run_training
from app.harness.sweep import run_ablation, sweep_lambda

__all__ = [
    "build_predictor",
    "predict",
    "train_predictor",
    "CumulativeCurve",
    "DriftReport",
    "EvalResult",
    "annotation_drift",
    "downstream_comparison",
    "eval_predictor",
    "probe_realism",
    "confusion_accuracy",
    "export_confusion",
    "DataSplits",
    "evaluate_run",
    "generate_data",
    "load_splits",
    "run_training",
    "run_ablation",
    "sweep_lambda",
]
