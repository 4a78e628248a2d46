"""Boosted uplift decision trees for treatment/control data."""

from .boosting import (
    ADABOOST,
    BAGGING,
    BALANCED,
    BALANCED_FORGETTING,
    VARIANTS,
    BoostConfig,
    BoostingEnsemble,
    EmptyEnsembleError,
    adaboost_cvt_oracle,
    fit_boosting,
    fit_ensemble,
)
from .dataset import (
    SyntheticSpec,
    UpliftDataset,
    UpliftRule,
    generate_synthetic,
    load_csv,
    split_train_test,
    survival_to_binary,
    write_csv,
)
from .evaluation import ExperimentReport, UpliftCurve, auuc, run_experiment, uplift_curve
from .tree import UpliftTree, e_divergence, e_gain, fit_tree

__all__ = [
    "ADABOOST", "BAGGING", "BALANCED", "BALANCED_FORGETTING", "VARIANTS",
    "BoostConfig", "BoostingEnsemble", "EmptyEnsembleError", "ExperimentReport",
    "SyntheticSpec", "UpliftCurve", "UpliftDataset", "UpliftRule", "UpliftTree",
    "adaboost_cvt_oracle", "auuc", "e_divergence", "e_gain", "fit_boosting", "fit_ensemble",
    "fit_tree", "generate_synthetic", "load_csv", "run_experiment", "split_train_test",
    "survival_to_binary", "uplift_curve", "write_csv",
]
