"""Doubly-robust estimation of linear-functional estimands via Riesz representers."""

from .data import ColumnRole, Dataset, FoldAssignment, assign_folds, load_csv, write_csv
from .eif import (
    EifVector,
    EstimateReport,
    contrast,
    eif_single,
    eif_sequential,
    eif_two_phase,
    wald,
)
from .estimands import (
    EstimandSpec,
    HTransform,
    ate_spec,
    contrast_spec,
    longitudinal_spec,
    nde_m_functional_spec,
    nde_spec,
    tsm_spec,
)
from .learners import (
    Family,
    FittedLearner,
    SuperLearner,
    fit_constant_mean,
    fit_glm,
    fit_super_learner,
    nnls,
    predict,
)
from .riesz import (
    CumulativeWeights,
    Representer,
    basis_from_columns,
    cumulative_weights,
    plugin_indicator,
    plugin_mediation_ratio,
    plugin_two_phase,
    riesz_regression,
)
from .tmle import (
    FitBundle,
    LearnerSetup,
    RieszSetup,
    estimate,
    fit_bundle,
    one_step,
    plugin_estimate,
    riesz_tmle,
    sdr_riesz_tmle,
    two_phase_tmle,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnRole",
    "CumulativeWeights",
    "Dataset",
    "EifVector",
    "EstimandSpec",
    "EstimateReport",
    "Family",
    "FitBundle",
    "FittedLearner",
    "FoldAssignment",
    "HTransform",
    "LearnerSetup",
    "Representer",
    "RieszSetup",
    "SuperLearner",
    "assign_folds",
    "ate_spec",
    "basis_from_columns",
    "contrast",
    "contrast_spec",
    "cumulative_weights",
    "eif_sequential",
    "eif_single",
    "eif_two_phase",
    "estimate",
    "fit_bundle",
    "fit_constant_mean",
    "fit_glm",
    "fit_super_learner",
    "load_csv",
    "longitudinal_spec",
    "nde_m_functional_spec",
    "nde_spec",
    "nnls",
    "one_step",
    "plugin_estimate",
    "plugin_indicator",
    "plugin_mediation_ratio",
    "plugin_two_phase",
    "predict",
    "riesz_regression",
    "riesz_tmle",
    "sdr_riesz_tmle",
    "tsm_spec",
    "two_phase_tmle",
    "wald",
    "write_csv",
]
