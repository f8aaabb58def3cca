"""
Core modules for hyperspectral band selection
"""

from app.core.classifier import SvmParams, score_subset, svm_predict, svm_train
from app.core.ingest import load_dataset, quantize, split_labeled
from app.core.pipeline import ExperimentSpec, emit_report, run_experiment
from app.core.selection import SelectionConfig, baseline_ig, baseline_mi_filter, run_hybrid

__all__ = [
    "ExperimentSpec",
    "SelectionConfig",
    "SvmParams",
    "baseline_ig",
    "baseline_mi_filter",
    "emit_report",
    "load_dataset",
    "quantize",
    "run_experiment",
    "run_hybrid",
    "score_subset",
    "split_labeled",
    "svm_predict",
    "svm_train",
]
