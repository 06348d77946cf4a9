"""Out-of-sample evaluation of targeted predictors without model refits.

The full-data posterior serves as an importance-sampling proposal for each
fold's training-data posterior, with weights proportional to the reciprocal
held-out likelihood. Those weights drive (i) training-data predictive
expectations for per-fold action fits, and (ii) sampling-importance
resampling of predictive draws for the held-out points, which yields draws
of the out-of-sample predictive loss. Acceptable-predictor sets and the
simplest acceptable action are computed from the paired loss draws.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .solver import LambdaPath, lambda_path, _sigmoid, PROB_CLIP


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Fold plans
# ---------------------------------------------------------------------------

@dataclass
class FoldPlan:
    """Random K-fold split: mutually exclusive, exhaustive, balanced."""

    n: int
    K: int
    assignments: np.ndarray      # (n,) fold ids in 1..K
    seed: int

    def validation_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def training_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)


def make_folds(n: int, K: int, seed: int = 0) -> FoldPlan:
    """Balanced random fold assignment; fold sizes differ by at most one."""
    if not 2 <= K <= n:
        raise EvaluationError(f"need 2 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x66)))
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=int)
    for k, chunk in enumerate(np.array_split(perm, K), start=1):
        assignments[chunk] = k
    return FoldPlan(n=n, K=K, assignments=assignments, seed=seed)


# ---------------------------------------------------------------------------
# Importance weights over posterior draws
# ---------------------------------------------------------------------------

@dataclass
class FoldWeights:
    """Normalized importance weights per fold, with diagnostics."""

    weights: np.ndarray          # (K, S), rows sum to 1
    ess: np.ndarray              # (K,)
    n_truncated: np.ndarray      # (K,) count of clipped weights
    truncate: bool

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def S(self) -> int:
        return self.weights.shape[1]


def uniform_fold_weights(K: int, S: int) -> FoldWeights:
    return FoldWeights(weights=np.full((K, S), 1.0 / S),
                       ess=np.full(K, float(S)),
                       n_truncated=np.zeros(K, dtype=int), truncate=False)


def weights_from_loglik(loglik: np.ndarray, validation_sets,
                        truncate: bool = True) -> FoldWeights:
    """Importance weights proportional to 1/p(held-out data | theta^s).

    Log weights are the negated sum of held-out pointwise log likelihoods,
    max-subtracted before exponentiation, optionally truncated at the
    (1 - 1/sqrt(S)) quantile, then normalized. ESS = 1/sum(w^2).
    """
    loglik = np.asarray(loglik, dtype=float)
    S = loglik.shape[0]
    K = len(validation_sets)
    weights = np.empty((K, S))
    ess = np.empty(K)
    n_trunc = np.zeros(K, dtype=int)
    for k, idx in enumerate(validation_sets):
        idx = np.asarray(idx, dtype=int)
        logw = -loglik[:, idx].sum(axis=1) if idx.size else np.zeros(S)
        logw = logw - logw.max()
        w = np.exp(logw)
        if not np.any(w > 0):
            raise EvaluationError(
                "all importance weights underflowed; increase the number "
                "of posterior draws S")
        if truncate and S > 1:
            cap = np.quantile(w, 1.0 - 1.0 / np.sqrt(S))
            n_trunc[k] = int(np.sum(w > cap))
            if cap > 0:
                w = np.minimum(w, cap)
        w = w / w.sum()
        weights[k] = w
        ess[k] = 1.0 / np.sum(w ** 2)
    return FoldWeights(weights=weights, ess=ess, n_truncated=n_trunc,
                       truncate=truncate)


def importance_weights(post, data, plan: FoldPlan,
                       truncate: bool = True) -> FoldWeights:
    """FoldWeights for approximating each training-data posterior."""
    loglik = post.log_likelihood(data)
    sets = [plan.validation_indices(k) for k in range(1, plan.K + 1)]
    return weights_from_loglik(loglik, sets, truncate=truncate)


def hbar_train(func_draws: np.ndarray, weights: FoldWeights) -> np.ndarray:
    """Training-posterior predictive expectations, one row per fold.

    Row k is the importance-weighted mean of the functional draws, i.e.
    the approximation of E[h(y~_j) | training data of fold k] for every j.
    """
    return weights.weights @ np.asarray(func_draws, dtype=float)


# ---------------------------------------------------------------------------
# Per-fold action fits
# ---------------------------------------------------------------------------

def fit_per_fold(plan: FoldPlan, weights: FoldWeights,
                 func_draws: np.ndarray, design: np.ndarray,
                 pen_weights: np.ndarray, lambdas: np.ndarray,
                 loss: str = "squared", tol: float = 1e-8) -> list:
    """One LambdaPath per fold, trained on the fold's training rows only.

    The response for fold k is the importance-weighted predictive
    expectation restricted to training rows; the lambda grid and penalty
    weights are shared across folds so that an action means the same
    (penalty, lambda) everywhere.
    """
    if plan.K < 2:
        raise EvaluationError("need at least 2 folds for held-out evaluation")
    design = np.asarray(design, dtype=float)
    hb = hbar_train(func_draws, weights)
    paths = []
    for k in range(1, plan.K + 1):
        rows = plan.training_indices(k)
        paths.append(lambda_path(hb[k - 1][rows], design[rows], pen_weights,
                                 loss=loss, tol=tol, lambdas=lambdas))
    return paths


# ---------------------------------------------------------------------------
# Sampling-importance resampling
# ---------------------------------------------------------------------------

@dataclass
class SirDraws:
    """Resampled posterior-draw indices per fold."""

    indices: np.ndarray          # (K, R)
    with_replacement: np.ndarray  # (K,) bool, fallback flag
    warnings: list = field(default_factory=list)


def sir_indices(weights: FoldWeights, R: int, seed: int = 0,
                max_fraction: float = 0.1) -> SirDraws:
    """Subsample R draw indices per fold according to the fold weights.

    Sampling is without replacement (proposal adequacy requires
    R <= max_fraction * S); when the effective sample size falls below R
    (or too few weights are positive) the fold falls back to sampling with
    replacement and a warning is recorded.
    """
    K, S = weights.K, weights.S
    if R < 1:
        raise EvaluationError("R must be >= 1")
    if R > max_fraction * S:
        raise EvaluationError(
            f"R={R} exceeds {max_fraction:.0%} of S={S}; increase S or "
            "relax max_fraction")
    indices = np.empty((K, R), dtype=int)
    replaced = np.zeros(K, dtype=bool)
    warnings = []
    for k in range(K):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x51, k)))
        w = weights.weights[k]
        nnz = int(np.sum(w > 0))
        if weights.ess[k] < R or nnz < R:
            replaced[k] = True
            warnings.append(
                f"fold {k + 1}: ESS {weights.ess[k]:.1f} < R={R}; "
                "resampled with replacement")
            indices[k] = rng.choice(S, size=R, replace=True, p=w)
        else:
            indices[k] = rng.choice(S, size=R, replace=False, p=w)
    return SirDraws(indices=indices, with_replacement=replaced,
                    warnings=warnings)


def sir_resample(preds_full, weights: FoldWeights, plan: FoldPlan, R: int,
                 seed: int = 0, max_fraction: float = 0.1):
    """Out-of-sample predictive curve draws for each fold's validation points.

    Returns (per_fold, sir) where per_fold[k] has shape (R, |I_k|, m) and
    approximates R draws from the fold-k training predictive distribution
    at the validation design points.
    """
    sir = sir_indices(weights, R, seed=seed, max_fraction=max_fraction)
    per_fold = []
    for k in range(1, plan.K + 1):
        val = plan.validation_indices(k)
        per_fold.append(preds_full.draws[np.ix_(sir.indices[k - 1], val)])
    return per_fold, sir


def sir_functional_draws(func_draws: np.ndarray, sir: SirDraws,
                         plan: FoldPlan) -> list:
    """Functional values of the SIR draws: per fold an (R, |I_k|) array."""
    func_draws = np.asarray(func_draws, dtype=float)
    out = []
    for k in range(1, plan.K + 1):
        val = plan.validation_indices(k)
        out.append(func_draws[np.ix_(sir.indices[k - 1], val)])
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass
class LossReport:
    """Empirical and predictive out-of-sample losses for a path of actions.

    empirical[a] is the K-fold average held-out loss of action a against
    the observed functionals; predictive[a] holds R draws of the same
    quantity against resampled predictive functionals; dtilde[a] are the
    paired percent-increase draws relative to the empirical best action.
    """

    lambdas: np.ndarray
    sizes: np.ndarray
    empirical: np.ndarray        # (A,)
    predictive: np.ndarray       # (A, R)
    dtilde: np.ndarray           # (A, R), percent
    amin: int
    loss_kind: str
    K: int
    R: int
    warnings: list = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return len(self.lambdas)


def _pointwise_loss(target: np.ndarray, pred: np.ndarray,
                    loss_kind: str) -> np.ndarray:
    if loss_kind == "squared":
        return (target - pred) ** 2
    prob = np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP)
    return -target * np.log(prob) - (1.0 - target) * np.log1p(-prob)


def _predict(delta: np.ndarray, design: np.ndarray,
             loss_kind: str) -> np.ndarray:
    eta = design @ delta
    return eta if loss_kind == "squared" else _sigmoid(eta)


def losses(plan: FoldPlan, fold_paths: list, emp_values: np.ndarray,
           sir_func: list, design: np.ndarray,
           loss_kind: str = "squared",
           warnings: list | None = None,
           sizes: np.ndarray | None = None) -> LossReport:
    """Out-of-sample empirical and predictive loss draws for every action.

    emp_values are the observed functionals h(y_i); sir_func[k] holds the
    fold-k resampled predictive functional draws at the validation points,
    shared across actions (common random numbers) so that the paired
    percent-increase draws reflect action differences only. sizes reports
    each action's active-set size (pass the full-data path sizes so the
    report describes the deployed actions).
    """
    design = np.asarray(design, dtype=float)
    emp_values = np.asarray(emp_values, dtype=float)
    lambdas = np.asarray(fold_paths[0].lambdas, dtype=float)
    A = len(lambdas)
    for path in fold_paths:
        if len(path) != A or not np.array_equal(path.lambdas, lambdas):
            raise EvaluationError("fold paths must share one lambda grid")
    R = sir_func[0].shape[0]
    K = plan.K
    empirical = np.zeros(A)
    predictive = np.zeros((A, R))
    for k in range(1, K + 1):
        val = plan.validation_indices(k)
        Xval = design[val]
        F = sir_func[k - 1]                       # (R, |I_k|)
        deltas = np.stack([f.delta for f in fold_paths[k - 1].fits])
        preds = _predict(deltas.T, Xval, loss_kind).T   # (A, |I_k|)
        empirical += _pointwise_loss(emp_values[val][None, :], preds,
                                     loss_kind).mean(axis=1)
        ploss = _pointwise_loss(F[None, :, :], preds[:, None, :], loss_kind)
        predictive += ploss.mean(axis=2)          # (A, R)
    empirical /= K
    predictive /= K
    amin = int(np.argmin(empirical))
    base = predictive[amin]
    with np.errstate(divide="ignore", invalid="ignore"):
        dtilde = 100.0 * (predictive - base[None, :]) / base[None, :]
    dtilde = np.where(predictive == base[None, :], 0.0, dtilde)
    if sizes is None:
        sizes = np.array([len(f.active_set) for f in fold_paths[0].fits])
    else:
        sizes = np.asarray(sizes, dtype=int)
    return LossReport(lambdas=lambdas, sizes=sizes, empirical=empirical,
                      predictive=predictive, dtilde=dtilde, amin=amin,
                      loss_kind=loss_kind, K=K, R=R,
                      warnings=list(warnings or []))


# ---------------------------------------------------------------------------
# Acceptable predictor sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AcceptanceConfig:
    """Margin eta (percent) and probability level epsilon."""

    eta: float = 0.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.eta < 0:
            raise EvaluationError("eta must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise EvaluationError("epsilon must lie in [0, 1]")


@dataclass
class AcceptableSet:
    indices: np.ndarray
    probs: np.ndarray
    config: AcceptanceConfig
    amin: int


def _count_threshold(epsilon: float, R: int) -> int:
    """Smallest integer c with c/R >= epsilon, using the same float
    comparisons as the probability route."""
    t = int(np.ceil(epsilon * R))
    while t > 0 and (t - 1) / R >= epsilon:
        t -= 1
    while t <= R and t / R < epsilon:
        t += 1
    return t


def _accept_by_probability(report: LossReport,
                           config: AcceptanceConfig) -> tuple:
    probs = (report.dtilde < config.eta).mean(axis=1)
    probs[report.amin] = 1.0   # the best action is acceptable by definition
    return probs >= config.epsilon, probs


def _accept_by_quantile(report: LossReport,
                        config: AcceptanceConfig) -> np.ndarray:
    """Lemma-style route: action is acceptable iff a lower prediction
    interval at level 1 - epsilon for the percent increase contains eta,
    i.e. iff the ceil(eps*R)-th smallest draw lies strictly below eta."""
    R = report.R
    t = _count_threshold(config.epsilon, R)
    accept = np.empty(report.n_actions, dtype=bool)
    if t == 0:
        accept[:] = True
    else:
        ordered = np.sort(report.dtilde, axis=1)
        accept = ordered[:, t - 1] < config.eta
    accept[report.amin] = True
    return accept


def acceptable_set(report: LossReport,
                   config: AcceptanceConfig) -> AcceptableSet:
    """Actions within eta percent of the best with probability >= epsilon.

    Computed by thresholding the empirical probability of the paired
    percent-increase draws; an independent order-statistic (prediction
    interval) computation is cross-checked on every call.
    """
    accept, probs = _accept_by_probability(report, config)
    accept_q = _accept_by_quantile(report, config)
    if not np.array_equal(accept, accept_q):
        raise RuntimeError(
            "probability and prediction-interval acceptability disagree; "
            "this indicates an internal inconsistency")
    return AcceptableSet(indices=np.flatnonzero(accept), probs=probs,
                         config=config, amin=report.amin)


def simplest_acceptable(accset: AcceptableSet, report: LossReport) -> int:
    """Index of the acceptable action with the largest complexity penalty."""
    idx = accset.indices
    if idx.size == 0:
        raise EvaluationError("acceptable set is empty")
    return int(idx[np.argmax(report.lambdas[idx])])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def report_to_json_dict(report: LossReport, eta: float = 0.0) -> dict:
    qs = np.percentile(report.predictive, [5, 20, 50, 80, 95], axis=1)
    prob = (report.dtilde < eta).mean(axis=1)
    prob[report.amin] = 1.0
    actions = []
    for a in range(report.n_actions):
        actions.append({
            "lambda": float(report.lambdas[a]),
            "active_set_size": int(report.sizes[a]),
            "empirical_loss": float(report.empirical[a]),
            "predictive_loss_quantiles": {
                "5%": qs[0, a], "20%": qs[1, a], "50%": qs[2, a],
                "80%": qs[3, a], "95%": qs[4, a]},
            "prob_within_eta": float(prob[a]),
        })
    return {
        "schema": "targetpred-report/v1",
        "loss": report.loss_kind,
        "K": report.K,
        "R": report.R,
        "eta": eta,
        "amin_index": report.amin,
        "actions": actions,
        "warnings": report.warnings,
    }


def write_report_json(report: LossReport, path, eta: float = 0.0):
    with open(path, "w") as fh:
        json.dump(report_to_json_dict(report, eta), fh, indent=1)


def write_size_table_csv(report: LossReport, path):
    """Model size against percent increase in loss, with 80% intervals."""
    emp_base = report.empirical[report.amin]
    q10, q50, q90 = np.percentile(report.dtilde, [10, 50, 90], axis=1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "size", "empirical_pct_increase",
                         "predictive_pct_q10", "predictive_pct_median",
                         "predictive_pct_q90"])
        for a in range(report.n_actions):
            emp_pct = (100.0 * (report.empirical[a] - emp_base) / emp_base
                       if emp_base > 0 else 0.0)
            writer.writerow([report.lambdas[a], report.sizes[a],
                             f"{emp_pct:.10g}", f"{q10[a]:.10g}",
                             f"{q50[a]:.10g}", f"{q90[a]:.10g}"])
