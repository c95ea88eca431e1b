"""Machine-learning-enhanced FIB-4: a compact s-DNN and its evaluation toolkit."""

__version__ = "0.1.0"

from .cohort import (FEATURES, Cohort, PatientRecord, SyntheticSpec, compute_fib4, generate_synthetic_cohort,
                     load_cohort, split_cohort)
from .metrics import ScoredSet, evaluate, probability_auc, thresholded_auc
from .sdnn import Architecture, SdnnModel, TrainingConfig, count_parameters, predict, train

__all__ = [
    "FEATURES", "Cohort", "PatientRecord", "SyntheticSpec", "compute_fib4", "generate_synthetic_cohort",
    "load_cohort", "split_cohort", "ScoredSet", "evaluate", "probability_auc", "thresholded_auc",
    "Architecture", "SdnnModel", "TrainingConfig", "count_parameters", "predict", "train",
]
