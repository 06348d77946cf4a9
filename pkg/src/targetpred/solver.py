"""Optimal parametrized actions by penalized least squares.

Minimizing the posterior predictive expected loss over a parametrized
predictor reduces, under squared error, to penalized least squares on the
predictive expectations hbar_i. This module solves that problem for linear
predictors with an adaptive l1 penalty:

    (1/n) sum_i (hbar_i - x_i' delta)^2 + lam * sum_j w_j |delta_j|

via cyclic coordinate descent with weighted soft thresholding, warm starts
down a log-spaced lambda path, and KKT certification of every returned
solution. A cross-entropy variant (proximal Newton on the Bernoulli deviance
with predictive probabilities as soft labels) covers binary functionals.
The intercept (design column 0) is always present and never penalized.

All lambda-dependent constants (the coordinate update threshold lam*w_j/2,
lambda_max = max_j 2|<x_j, hbar - mean>|/(n w_j)) follow from the mean
squared error normalization above; no other convention is used anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 100_000
DEFAULT_WEIGHT_CAP = 1e6
RIDGE_EPS = 1e-6   # stabilizer for rank-deficient projection in the weights
PROB_CLIP = 1e-8   # probability floor/ceiling inside the logistic solver


class SolverError(RuntimeError):
    """Penalized solver failed to converge; carries iteration diagnostics."""

    def __init__(self, message, n_sweeps=None, last_change=None,
                 kkt_residual=None):
        super().__init__(message)
        self.n_sweeps = n_sweeps
        self.last_change = last_change
        self.kkt_residual = kkt_residual


@dataclass(frozen=True)
class ActionSpec:
    """A parametrized action: predictor family, penalty, complexity level.

    weights are the adaptive l1 weights for the penalized columns (length
    p = design columns minus intercept); required when penalty is
    adaptive_l1. loss selects squared error or cross-entropy.
    """

    g_kind: str = "linear"                    # linear | unrestricted
    penalty: str = "adaptive_l1"              # none | adaptive_l1
    lam: float = 0.0
    weights: np.ndarray | None = None
    loss: str = "squared"                     # squared | cross_entropy

    def __post_init__(self):
        if self.g_kind not in ("linear", "unrestricted"):
            raise ValueError(f"unknown g_kind {self.g_kind!r}")
        if self.penalty not in ("none", "adaptive_l1"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.loss not in ("squared", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.g_kind == "unrestricted" and self.penalty != "none":
            raise ValueError("unrestricted action must be unpenalized")
        if self.penalty == "none" and self.lam > 0:
            raise ValueError("penalty 'none' requires lambda = 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and >= 0")
            object.__setattr__(self, "weights", w)


@dataclass
class FitResult:
    """Optimal action parameters for one (penalty, lambda) pair.

    delta has the intercept first; active_set holds design-column indices
    (>= 1) of the penalized coefficients that are exactly nonzero.
    """

    delta: np.ndarray
    active_set: np.ndarray
    lam: float
    objective: float
    kkt_residual: float
    n_sweeps: int

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "delta": [float(v) for v in self.delta],
            "active_set": [int(j) for j in self.active_set],
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "n_sweeps": self.n_sweeps,
        }


@dataclass
class LambdaPath:
    """Fits along a decreasing lambda sequence (terminal entry lambda = 0)."""

    lambdas: np.ndarray
    fits: list
    weights: np.ndarray | None = None
    loss: str = "squared"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.fits)

    def supports(self) -> list:
        return [frozenset(int(j) for j in f.active_set) for f in self.fits]

    def to_json_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "loss": self.loss,
            "weights": None if self.weights is None
                       else [float(v) for v in self.weights],
            "fits": [f.to_json_dict() for f in self.fits],
            "meta": self.meta,
        }


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def _check_design(design: np.ndarray) -> np.ndarray:
    design = np.atleast_2d(np.asarray(design, dtype=float))
    if not np.all(design[:, 0] == 1.0):
        raise ValueError("design column 0 must be the all-ones intercept")
    return design


def _full_weights(design: np.ndarray, spec: ActionSpec) -> np.ndarray:
    """Per-column penalty weights; zero for the intercept."""
    p = design.shape[1] - 1
    if spec.penalty == "none":
        return np.zeros(p + 1)
    if spec.weights is None:
        w = np.ones(p)
    else:
        w = np.asarray(spec.weights, dtype=float)
        if w.shape[0] != p:
            raise ValueError(
                f"weights length {w.shape[0]} != penalized columns {p}")
    return np.concatenate([[0.0], w])


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _cross_entropy(y: np.ndarray, prob: np.ndarray) -> float:
    prob = np.clip(prob, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(np.mean(-y * np.log(prob) - (1 - y) * np.log1p(-prob)))


def objective_value(hbar, design, delta, lam, wfull, loss) -> float:
    fit = design @ delta
    if loss == "squared":
        data_term = float(np.mean((hbar - fit) ** 2))
    else:
        data_term = _cross_entropy(hbar, _sigmoid(fit))
    return data_term + lam * float(np.sum(wfull * np.abs(delta)))


def kkt_residual(hbar, design, delta, lam, wfull, loss) -> float:
    """Max violation of the subgradient stationarity conditions.

    grad is the gradient of the unpenalized (mean) data term. At a solution,
    unpenalized coordinates have zero gradient, zero coordinates satisfy
    |grad_j| <= lam*w_j, and active ones grad_j = -lam*w_j*sign(delta_j).
    """
    n = design.shape[0]
    fit = design @ delta
    if loss == "squared":
        grad = -2.0 / n * (design.T @ (hbar - fit))
    else:
        prob = np.clip(_sigmoid(fit), PROB_CLIP, 1.0 - PROB_CLIP)
        grad = design.T @ (prob - hbar) / n
    thr = lam * wfull
    resid = np.where(
        delta != 0.0,
        np.abs(grad + thr * np.sign(delta)),
        np.maximum(0.0, np.abs(grad) - thr),
    )
    # unpenalized coordinates (thr == 0) reduce to |grad| under both branches
    return float(resid.max())


def _cd_sweeps(y, design, delta, resid, lam, wfull, obs_w, half, tol,
               max_sweeps, history=None):
    """Cyclic coordinate descent on a (possibly observation-weighted)
    quadratic objective; mutates delta/resid in place, returns sweep count.

    half=True solves (1/n)sum (y - x'd)^2 (threshold lam*w/2); half=False
    solves (1/2n)sum obs_w (y - x'd)^2 (threshold lam*w), the proximal
    Newton subproblem.
    """
    n, d = design.shape
    if obs_w is None:
        cols_sq = np.einsum("ij,ij->j", design, design) / n
        wdesign = design
    else:
        wdesign = design * obs_w[:, None]
        cols_sq = np.einsum("ij,ij->j", wdesign, design) / n
    thr = lam * wfull * (0.5 if half else 1.0)
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(d):
            vj = cols_sq[j]
            if vj <= 0.0:
                continue
            old = delta[j]
            zj = wdesign[:, j] @ resid / n + vj * old
            new = soft_threshold(zj, thr[j]) / vj
            if new != old:
                resid -= design[:, j] * (new - old)
                change = abs(new - old)
                if change > max_change:
                    max_change = change
                delta[j] = new
        if history is not None:
            history.append(objective_value(y, design, delta, lam, wfull,
                                           "squared"))
        if max_change < tol:
            return sweep
    raise SolverError(
        f"coordinate descent did not converge in {max_sweeps} sweeps "
        f"(last max coefficient change {max_change:.3e})",
        n_sweeps=max_sweeps, last_change=max_change)


def _solve_squared(hbar, design, spec, wfull, tol, max_iters, warm_start,
                   history):
    n, d = design.shape
    if spec.lam == 0.0:
        # unpenalized case: exact least squares
        delta, *_ = np.linalg.lstsq(design, hbar, rcond=None)
        return delta, 1
    delta = np.zeros(d) if warm_start is None else np.array(warm_start,
                                                            dtype=float)
    resid = hbar - design @ delta
    sweeps = 0
    stall = 0
    while sweeps < max_iters:
        sweeps += _cd_sweeps(hbar, design, delta, resid, spec.lam, wfull,
                             None, True, tol, max_iters - sweeps, history)
        kkt = kkt_residual(hbar, design, delta, spec.lam, wfull, "squared")
        if kkt <= 10 * tol:
            return delta, sweeps
        stall += 1
        if stall > 50:
            raise SolverError(
                "coefficients converged but KKT conditions not certified "
                f"(residual {kkt:.3e} after {sweeps} sweeps)",
                n_sweeps=sweeps, kkt_residual=kkt)
    raise SolverError(f"exceeded {max_iters} sweeps", n_sweeps=sweeps)


def _solve_cross_entropy(hbar, design, spec, wfull, tol, max_iters,
                         warm_start):
    if np.any(hbar < 0) or np.any(hbar > 1):
        raise ValueError("cross_entropy targets must lie in [0, 1]")
    n, d = design.shape
    delta = np.zeros(d) if warm_start is None else np.array(warm_start,
                                                            dtype=float)
    total_sweeps = 0
    for _ in range(200):
        eta = design @ delta
        prob = np.clip(_sigmoid(eta), PROB_CLIP, 1.0 - PROB_CLIP)
        obs_w = np.maximum(prob * (1.0 - prob), 1e-10)
        z = eta + (hbar - prob) / obs_w
        old = delta.copy()
        if spec.lam == 0.0:
            wd = design * obs_w[:, None]
            delta = np.linalg.solve(design.T @ wd + 1e-12 * np.eye(d),
                                    wd.T @ z)
            total_sweeps += 1
        else:
            resid = z - design @ delta
            total_sweeps += _cd_sweeps(z, design, delta, resid, spec.lam,
                                       wfull, obs_w, False, tol,
                                       max(1, max_iters - total_sweeps))
        step = float(np.max(np.abs(delta - old)))
        kkt = kkt_residual(hbar, design, delta, spec.lam, wfull,
                           "cross_entropy")
        if step < max(tol, 1e-12) and kkt <= 10 * tol:
            return delta, total_sweeps
    raise SolverError(
        "proximal Newton did not converge "
        f"(last step {step:.3e}, KKT residual {kkt:.3e})",
        n_sweeps=total_sweeps, last_change=step, kkt_residual=kkt)


def solve_penalized(hbar: np.ndarray, design: np.ndarray, spec: ActionSpec,
                    tol: float = DEFAULT_TOL,
                    max_iters: int = DEFAULT_MAX_ITERS,
                    warm_start: np.ndarray | None = None,
                    history: list | None = None) -> FitResult:
    """Optimal linear action parameters for the given penalty and lambda.

    Squared loss runs cyclic coordinate descent with weighted soft
    thresholding; cross-entropy runs iteratively reweighted penalized least
    squares. Converges when the max coefficient change drops below tol and
    the KKT subgradient residual is at most 10*tol, else raises SolverError
    with diagnostics. Pure function of its inputs.
    """
    if spec.g_kind != "linear":
        raise ValueError("solve_penalized handles linear actions only")
    design = _check_design(design)
    hbar = np.asarray(hbar, dtype=float).ravel()
    if hbar.shape[0] != design.shape[0]:
        raise ValueError("hbar length != design rows")
    if not (np.all(np.isfinite(hbar)) and np.all(np.isfinite(design))):
        raise ValueError("inputs must be finite")
    wfull = _full_weights(design, spec)
    if spec.loss == "squared":
        delta, sweeps = _solve_squared(hbar, design, spec, wfull, tol,
                                       max_iters, warm_start, history)
    else:
        delta, sweeps = _solve_cross_entropy(hbar, design, spec, wfull, tol,
                                             max_iters, warm_start)
    kkt = kkt_residual(hbar, design, delta, spec.lam, wfull, spec.loss)
    active = np.flatnonzero(delta[1:] != 0.0) + 1
    return FitResult(
        delta=delta,
        active_set=active,
        lam=spec.lam,
        objective=objective_value(hbar, design, delta, spec.lam, wfull,
                                  spec.loss),
        kkt_residual=kkt,
        n_sweeps=sweeps,
    )


def solve_unrestricted(func_draws: np.ndarray,
                       design: np.ndarray | None = None) -> np.ndarray:
    """Bayes estimator of the unrestricted, unpenalized action.

    The optimal point prediction at each design point is the predictive
    expectation of the functional there, so this is exactly the per-point
    mean of the functional draws.
    """
    func_draws = np.asarray(func_draws, dtype=float)
    if design is not None and func_draws.shape[1] != np.shape(design)[0]:
        raise ValueError("func_draws and design disagree on design points")
    return func_draws.mean(axis=0)


def projection_coefficients(targets: np.ndarray,
                            design: np.ndarray) -> np.ndarray:
    """l2 projection of each target row onto the linear predictor.

    targets is (S, n); returns (S, d). Falls back to a ridge-stabilized
    solve (RIDGE_EPS on the Gram diagonal) when the design is rank
    deficient.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    gram = design.T @ design
    rhs = design.T @ targets.T
    try:
        coef = cho_solve(cho_factor(gram), rhs)
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(gram + RIDGE_EPS * np.eye(gram.shape[0]), rhs)
    return coef.T


def adaptive_weights(func_draws: np.ndarray, design: np.ndarray,
                     weight_cap: float = DEFAULT_WEIGHT_CAP) -> np.ndarray:
    """Adaptive l1 weights: posterior mean of inverse projection magnitudes.

    For each posterior draw s the functional draws are l2-projected onto the
    linear predictor, and the weight for covariate j is the mean over draws
    of min(1/|coef_j^s|, weight_cap). The intercept carries no weight.
    """
    func_draws = np.atleast_2d(np.asarray(func_draws, dtype=float))
    design = _check_design(design)
    if func_draws.shape[0] < 2:
        raise ValueError("need at least 2 posterior draws for the weights")
    if func_draws.shape[1] != design.shape[0]:
        raise ValueError("func_draws columns != design rows")
    zero_cols = np.flatnonzero(~design.any(axis=0))
    if zero_cols.size:
        raise ValueError(f"design column {zero_cols[0]} is identically zero")
    coef = projection_coefficients(func_draws, design)[:, 1:]  # drop intercept
    with np.errstate(divide="ignore"):
        inv = np.minimum(1.0 / np.abs(coef), weight_cap)
    return inv.mean(axis=0)


def lambda_max(hbar: np.ndarray, design: np.ndarray, weights: np.ndarray,
               loss: str = "squared") -> float:
    """Smallest lambda at which every penalized coefficient is exactly zero.

    Under the mean squared error objective this is
    max_j 2 |<x_j, hbar - mean(hbar)>| / (n w_j); the cross-entropy analogue
    replaces the centered response with the null-model gradient.
    """
    design = _check_design(design)
    hbar = np.asarray(hbar, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float)
    n = design.shape[0]
    if loss == "squared":
        grad = 2.0 / n * np.abs(design[:, 1:].T @ (hbar - hbar.mean()))
    else:
        p0 = np.clip(hbar.mean(), PROB_CLIP, 1.0 - PROB_CLIP)
        grad = np.abs(design[:, 1:].T @ (p0 - hbar)) / n
    with np.errstate(divide="ignore"):
        vals = np.where(weights > 0, grad / weights, np.inf)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0 or not vals.max() > 0:
        raise SolverError("lambda_max is degenerate (no penalized signal)")
    return float(vals.max())


def lambda_path(hbar: np.ndarray, design: np.ndarray, weights: np.ndarray,
                n_lambda: int = 100, ratio: float = 1e-3,
                loss: str = "squared", tol: float = DEFAULT_TOL,
                max_iters: int = DEFAULT_MAX_ITERS,
                lambdas: np.ndarray | None = None) -> LambdaPath:
    """Pathwise fits on a log-spaced lambda grid plus a terminal lambda = 0.

    The grid runs from lambda_max (empty penalized active set) down to
    ratio * lambda_max; fits are warm-started down the path and every
    solution is KKT-certified. Pass lambdas to reuse a precomputed grid so
    that actions align across data subsets.
    """
    if lambdas is None:
        if not n_lambda >= 2:
            raise ValueError("n_lambda must be >= 2")
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        lmax = lambda_max(hbar, design, weights, loss) * (1.0 + 1e-12)
        grid = np.geomspace(lmax, lmax * ratio, n_lambda)
        lambdas = np.concatenate([grid, [0.0]])
    else:
        lambdas = np.asarray(lambdas, dtype=float)
    fits = []
    warm = None
    for lam in lambdas:
        spec = ActionSpec(g_kind="linear",
                          penalty="adaptive_l1" if lam > 0 else "none",
                          lam=float(lam),
                          weights=weights if lam > 0 else None,
                          loss=loss)
        fit = solve_penalized(hbar, design, spec, tol=tol,
                              max_iters=max_iters, warm_start=warm)
        warm = fit.delta
        fits.append(fit)
    return LambdaPath(lambdas=lambdas, fits=fits, weights=np.asarray(weights),
                      loss=loss)
