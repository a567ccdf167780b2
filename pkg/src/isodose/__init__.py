"""Monotone covariate-adjusted dose-response estimation.

Isotonic regression of doubly-robust pseudo-outcomes with pointwise
confidence intervals based on the Chernoff limit distribution, plus a
seeded simulation harness and CSV-driven command line interface.
"""

from isodose.chernoff import ChernoffTable, chernoff_quantile, generate_chernoff_table
from isodose.estimator import (
    DoseResponseFit,
    FoldAssignment,
    LearnerConfig,
    PseudoOutcomes,
    evaluate,
    fit_causal_isotonic,
    fit_cross_fitted,
    fit_discrete,
    fit_no_transform,
    fit_sample_split,
    make_folds,
    primitive_gamma,
    pseudo_outcomes,
)
from isodose.inference import (
    ConfidenceInterval,
    ScaleEstimate,
    effect_ci,
    estimate_psi_prime,
    kappa_dr,
    kappa_plugin,
    scale_estimate,
    split_ci,
    wald_ci,
)
from isodose.isotonic import (
    ConvexMinorant,
    PlanarPoints,
    StepFunction,
    gcm,
    isotonic_regression,
    left_derivative,
    pava_weighted,
)
from isodose.nuisance import (
    ConvergenceError,
    Dataset,
    DensityRatioModel,
    OutcomeModel,
    RankTransform,
    SingularMatrixError,
    clamp_ratio,
    fit_linear_slope_density,
    fit_logistic,
    rank_wrap_outcome,
)
from isodose.simulation import (
    DGPConfig,
    ExperimentConfig,
    MetricsRow,
    generate_dataset,
    run_experiment,
    true_theta,
)

__version__ = "0.1.0"

__all__ = [
    "ChernoffTable",
    "chernoff_quantile",
    "generate_chernoff_table",
    "DoseResponseFit",
    "FoldAssignment",
    "LearnerConfig",
    "PseudoOutcomes",
    "evaluate",
    "fit_causal_isotonic",
    "fit_cross_fitted",
    "fit_discrete",
    "fit_no_transform",
    "fit_sample_split",
    "make_folds",
    "primitive_gamma",
    "pseudo_outcomes",
    "ConfidenceInterval",
    "ScaleEstimate",
    "effect_ci",
    "estimate_psi_prime",
    "kappa_dr",
    "kappa_plugin",
    "scale_estimate",
    "split_ci",
    "wald_ci",
    "ConvexMinorant",
    "PlanarPoints",
    "StepFunction",
    "gcm",
    "isotonic_regression",
    "left_derivative",
    "pava_weighted",
    "ConvergenceError",
    "Dataset",
    "DensityRatioModel",
    "OutcomeModel",
    "RankTransform",
    "SingularMatrixError",
    "clamp_ratio",
    "fit_linear_slope_density",
    "fit_logistic",
    "rank_wrap_outcome",
    "DGPConfig",
    "ExperimentConfig",
    "MetricsRow",
    "generate_dataset",
    "run_experiment",
    "true_theta",
]
