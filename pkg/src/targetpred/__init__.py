"""Targeted point prediction from Bayesian posterior predictive
distributions: optimal sparse linear actions, out-of-sample evaluation
without model refits, and acceptable-predictor selection."""

from .models import (
    Dataset,
    ConjugateLinearModel,
    FosrModel,
    PosteriorDrawSet,
    PredictiveDrawSet,
    fit_conjugate,
    gibbs_fosr,
    predictive_draws,
    functional_draws,
    star_round,
    star_transform,
    star_inverse,
    design_matrix,
    standardize_covariates,
)
from .functionals import FunctionalSpec, apply, apply_to_draws, hbar
from .solver import (
    ActionSpec,
    FitResult,
    LambdaPath,
    SolverError,
    adaptive_weights,
    solve_penalized,
    solve_unrestricted,
    lambda_path,
    lambda_max,
)
from .evaluation import (
    FoldPlan,
    FoldWeights,
    LossReport,
    AcceptanceConfig,
    make_folds,
    importance_weights,
    hbar_train,
    fit_per_fold,
    sir_resample,
    losses,
    acceptable_set,
    simplest_acceptable,
)
from .simulation import SimConfig, SimTruth, EngineSettings, simulate, \
    run_replication, epsilon_max, metrics

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ConjugateLinearModel", "FosrModel", "PosteriorDrawSet",
    "PredictiveDrawSet", "fit_conjugate", "gibbs_fosr", "predictive_draws",
    "functional_draws", "star_round", "star_transform", "star_inverse",
    "design_matrix", "standardize_covariates",
    "FunctionalSpec", "apply", "apply_to_draws", "hbar",
    "ActionSpec", "FitResult", "LambdaPath", "SolverError",
    "adaptive_weights", "solve_penalized", "solve_unrestricted",
    "lambda_path", "lambda_max",
    "FoldPlan", "FoldWeights", "LossReport", "AcceptanceConfig",
    "make_folds", "importance_weights", "hbar_train", "fit_per_fold",
    "sir_resample", "losses", "acceptable_set", "simplest_acceptable",
    "SimConfig", "SimTruth", "EngineSettings", "simulate",
    "run_replication", "epsilon_max", "metrics",
]
