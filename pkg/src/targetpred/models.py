"""Bayesian reference models, their samplers, and predictive simulation.

Two models are provided:

* a conjugate Gaussian linear regression with known noise variance, whose
  posterior and predictive moments are available in closed form (used as an
  exact oracle throughout the test suite), and
* a function-on-scalars regression of curves on covariates through an
  orthogonalized spline basis, with heavy-tailed t innovations fit by a
  Gibbs sampler.

The module also houses the latent-to-count rounding/transformation operators
used when curve data are counts, dataset and draw-archive serialization, and
streaming generation of posterior predictive draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import gammaln


class ModelError(ValueError):
    """Invalid model specification or data/model mismatch."""


# ---------------------------------------------------------------------------
# Data container
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Paired covariates and curve responses on a common evaluation grid.

    X : (n, p) covariate matrix, assumed standardized.
    Y : (n, m) responses; row i is the curve of subject i evaluated at tau.
    tau : (m,) strictly increasing evaluation points inside [0, 1].
    """

    X: np.ndarray
    Y: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        n, _ = self.X.shape
        if n < 2:
            raise ModelError(f"need at least 2 subjects, got n={n}")
        if self.Y.shape[0] != n:
            raise ModelError(
                f"X has {n} rows but Y has {self.Y.shape[0]}")
        m = self.Y.shape[1]
        if m < 1 or self.tau.shape[0] != m:
            raise ModelError(
                f"tau length {self.tau.shape[0]} != response grid size {m}")
        if np.any(np.diff(self.tau) <= 0):
            raise ModelError("tau must be strictly increasing")
        if self.tau[0] < 0.0 or self.tau[-1] > 1.0:
            raise ModelError("tau must lie within [0, 1]")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ModelError("X and Y must be finite (no missing entries)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]


def standardize_covariates(X: np.ndarray) -> np.ndarray:
    """Center continuous columns and scale them to sample sd 0.5.

    Columns with at most two distinct values (binary indicators) are left
    untouched. Idempotent, so re-ingesting already standardized data is safe.
    """
    X = np.array(X, dtype=float, copy=True)
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.unique(col).size <= 2:
            continue
        sd = col.std(ddof=1)
        if sd <= 0:
            continue
        X[:, j] = (col - col.mean()) / sd * 0.5
    return X


def design_matrix(X: np.ndarray) -> np.ndarray:
    """Prepend an all-ones intercept column (never standardized)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.ones((X.shape[0], 1)), X])


# ---------------------------------------------------------------------------
# Conjugate Gaussian linear regression (closed-form oracle model)
# ---------------------------------------------------------------------------

@dataclass
class ConjugateLinearModel:
    """Gaussian linear regression with known noise variance.

    y_i ~ N(x_i' theta, noise_variance), theta ~ N(0, prior_precision^{-1}).
    """

    prior_precision: np.ndarray
    noise_variance: float

    def __post_init__(self):
        self.prior_precision = np.atleast_2d(
            np.asarray(self.prior_precision, dtype=float))
        P = self.prior_precision
        if P.shape[0] != P.shape[1]:
            raise ModelError("prior_precision must be square")
        if not np.allclose(P, P.T):
            raise ModelError("prior_precision must be symmetric")
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise ModelError("prior_precision must be positive definite")
        if not self.noise_variance > 0:
            raise ModelError("noise_variance must be > 0")


@dataclass
class ConjugatePosterior:
    """Exact Gaussian posterior over regression coefficients."""

    mean: np.ndarray
    cov: np.ndarray
    noise_variance: float

    def predictive_mean(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.mean

    def draws(self, S: int, seed: int = 0) -> "PosteriorDrawSet":
        """Sample S coefficient draws from the exact posterior."""
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        L = np.linalg.cholesky(self.cov)
        theta = self.mean + rng.standard_normal((S, len(self.mean))) @ L.T
        return PosteriorDrawSet(
            kind="conjugate",
            params={"theta": theta},
            meta={"noise_variance": float(self.noise_variance)},
        )


def fit_conjugate(data: Dataset, model: ConjugateLinearModel) -> ConjugatePosterior:
    """Exact posterior for the conjugate model on a scalar response.

    Returns N(mu, Sigma) with Sigma = (X'X/s2 + P0)^{-1} and
    mu = Sigma X'y / s2. Deterministic.
    """
    if data.m != 1:
        raise ModelError("conjugate model expects a scalar response (m=1)")
    X, y = data.X, data.Y[:, 0]
    p = X.shape[1]
    if model.prior_precision.shape[0] != p:
        raise ModelError(
            f"prior_precision is {model.prior_precision.shape[0]}x"
            f"{model.prior_precision.shape[0]} but X has p={p} columns")
    s2 = model.noise_variance
    prec = X.T @ X / s2 + model.prior_precision
    cov = np.linalg.inv(prec)
    cov = (cov + cov.T) / 2.0
    mean = cov @ (X.T @ y / s2)
    return ConjugatePosterior(mean=mean, cov=cov, noise_variance=s2)


# ---------------------------------------------------------------------------
# Function-on-scalars regression with t innovations
# ---------------------------------------------------------------------------

def default_num_basis(m: int) -> int:
    return min(15, max(1, int(np.ceil(m / 4))))


def _raw_spline_basis(tau: np.ndarray, L: int) -> np.ndarray:
    """Cubic B-splines on an equally spaced knot grid (polynomials if L < 4)."""
    tau = np.asarray(tau, dtype=float)
    if L < 4:
        return np.vander(tau, N=L, increasing=True)
    k = 3
    a, b = tau[0], tau[-1]
    inner = np.linspace(a, b, L - k + 1)
    knots = np.r_[[a] * k, inner, [b] * k]
    return BSpline(knots, np.eye(L), k, extrapolate=True)(tau)


def orthogonalize_basis(B: np.ndarray) -> np.ndarray:
    """Canonical orthonormal basis for the column span of B.

    Columns are first brought into a canonical (lexicographic) order so
    that permuted inputs become the identical matrix, then the left
    singular vectors are taken with a tie-stable sign convention. The
    result is therefore bitwise invariant to basis column permutation,
    and so are all downstream fitted curves.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    order = sorted(range(B.shape[1]), key=lambda j: tuple(B[:, j]))
    B = B[:, order]
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size else 0
    if rank < B.shape[1]:
        raise ModelError(
            f"basis is rank deficient (rank {rank} < {B.shape[1]} columns)")
    U = U[:, :rank]
    # sign fixed by the first significant entry per column (tie stable)
    absU = np.abs(U)
    first = (absU > absU.max(axis=0) * 1e-8).argmax(axis=0)
    flip = np.sign(U[first, np.arange(rank)])
    flip[flip == 0] = 1.0
    return U * flip


@dataclass
class FosrModel:
    """Function-on-scalars regression model specification.

    The curve for subject i is b(tau)' theta_i plus t-distributed noise
    (t_dof = inf gives Gaussian innovations), and each basis coefficient is
    linearly regressed on the covariates with a subject-specific deviation
    scale. The basis is canonicalized to be orthonormal (basis' basis =
    identity) at construction.
    """

    basis: np.ndarray
    t_dof: float = 3.0
    hyper_a: float = 0.01
    hyper_b: float = 0.01

    def __post_init__(self):
        self.basis = orthogonalize_basis(self.basis)
        m, L = self.basis.shape
        if L > m:
            raise ModelError(f"num_basis L={L} exceeds grid size m={m}")
        if not self.t_dof > 0:
            raise ModelError("t_dof must be > 0")
        if not (self.hyper_a > 0 and self.hyper_b > 0):
            raise ModelError("Gamma hyperparameters must be > 0")

    @classmethod
    def bspline(cls, tau: np.ndarray, L: int | None = None,
                t_dof: float = 3.0) -> "FosrModel":
        """Model with L cubic B-spline basis functions evaluated on tau."""
        tau = np.asarray(tau, dtype=float)
        if L is None:
            L = default_num_basis(tau.size)
        return cls(basis=_raw_spline_basis(tau, L), t_dof=t_dof)

    @property
    def num_basis(self) -> int:
        return self.basis.shape[1]

    @property
    def gaussian(self) -> bool:
        return np.isinf(self.t_dof)


@dataclass
class PosteriorDrawSet:
    """Joint posterior draws of all model parameters.

    params maps field names to arrays whose leading axis indexes the S draws
    (model constants such as the basis matrix are stored without that axis
    and listed in meta["constants"]). Immutable by convention after
    construction; safe to share across threads.
    """

    kind: str
    params: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("conjugate", "fosr"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        consts = set(self.meta.get("constants", ()))
        sizes = {k: v.shape[0] for k, v in self.params.items()
                 if k not in consts}
        if len(set(sizes.values())) != 1:
            raise ModelError(f"inconsistent draw counts across fields: {sizes}")

    @property
    def S(self) -> int:
        consts = set(self.meta.get("constants", ()))
        for k, v in self.params.items():
            if k not in consts:
                return v.shape[0]
        raise ModelError("draw set has no draw fields")

    def log_likelihood(self, data: Dataset) -> np.ndarray:
        """Matrix of log p(y_i | theta^s), shape (S, n).

        For the curve model this is the t likelihood of the subject's curve
        around its fitted spline (latent noise scales marginalized out).
        """
        if self.kind == "conjugate":
            theta = self.params["theta"]
            s2 = float(self.meta["noise_variance"])
            resid = data.Y[:, 0][None, :] - theta @ data.X.T  # (S, n)
            out = -0.5 * (np.log(2 * np.pi * s2) + resid ** 2 / s2)
        else:
            basis = self.params["basis"]
            nu = float(self.meta["nu"])
            theta = self.params["theta"]          # (S, n, L)
            sig = self.params["sigma_eps"]        # (S,)
            S, n = theta.shape[0], data.n
            out = np.empty((S, n))
            if np.isinf(nu):
                for s in range(S):
                    r = (data.Y - theta[s] @ basis.T) / sig[s]
                    ll = -0.5 * np.log(2 * np.pi) - np.log(sig[s]) \
                        - 0.5 * r ** 2
                    out[s] = ll.sum(axis=1)
            else:
                const = (gammaln((nu + 1) / 2) - gammaln(nu / 2)
                         - 0.5 * np.log(nu * np.pi))
                for s in range(S):
                    r = (data.Y - theta[s] @ basis.T) / sig[s]
                    ll = const - np.log(sig[s]) \
                        - (nu + 1) / 2 * np.log1p(r ** 2 / nu)
                    out[s] = ll.sum(axis=1)
        if not np.all(np.isfinite(out)):
            raise ModelError("non-finite log likelihood for observed data")
        return out


def gibbs_fosr(data: Dataset, model: FosrModel, iters: int, burnin: int,
               seed: int = 0) -> PosteriorDrawSet:
    """Gibbs sampler for the function-on-scalars regression model.

    The t innovations are handled as a normal scale mixture with
    per-observation latent inverse-gamma scales. Returns iters - burnin
    draws of the basis-coefficient regression (alpha), subject coefficients
    (theta), and all variance parameters. Bitwise reproducible given seed.

    Parameters
    ----------
    data : Dataset
    model : FosrModel
    iters, burnin : total sweeps and discarded warmup, iters > burnin >= 0.
    seed : RNG seed for the chain.
    """
    if not (iters > burnin >= 0):
        raise ModelError("need iters > burnin >= 0")
    B = model.basis                          # (m, L), B'B = I
    n, m, p1 = data.n, data.m, data.p + 1
    L = model.num_basis
    X = design_matrix(data.X)
    if np.linalg.matrix_rank(X) < min(n, p1):
        raise ModelError("design matrix is rank deficient")
    nu = model.t_dof
    gaussian = model.gaussian
    a0, b0 = model.hyper_a, model.hyper_b
    Y = data.Y
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x61)))

    # Initialization: basis-space least squares, then ridge regression on X.
    theta = Y @ B                            # (n, L); B'B = I makes this LS
    A = np.linalg.solve(X.T @ X + 1e-6 * np.eye(p1), X.T @ theta)  # (p1, L)
    sigma_eps2 = max(np.var(Y - theta @ B.T), 1e-12)
    sigma_gam2 = np.maximum(np.var(theta - X @ A, axis=1), 1e-12)  # (n,)
    sigma_alp2 = np.maximum(np.var(A, axis=1), 1e-12)              # (p1,)
    xi = np.ones((n, m))

    S = iters - burnin
    keep_alpha = np.empty((S, p1, L))
    keep_theta = np.empty((S, n, L))
    keep_sige = np.empty(S)
    keep_sigg = np.empty((S, n))
    keep_siga = np.empty((S, p1))

    eyeL = np.eye(L)
    for it in range(iters):
        # theta_i | rest: batched Gaussian updates, one L x L system per subject
        inv_xi = 1.0 / xi                     # (n, m)
        BtDB = np.einsum("im,ml,mk->ilk", inv_xi, B, B) / sigma_eps2
        prec = BtDB + eyeL[None] / sigma_gam2[:, None, None]
        prior_mean = X @ A                    # (n, L)
        rhs = (inv_xi * Y) @ B / sigma_eps2 + prior_mean / sigma_gam2[:, None]
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs[:, :, None])[:, :, 0]
        z = rng.standard_normal((n, L, 1))
        theta = mean + np.linalg.solve(np.transpose(chol, (0, 2, 1)), z)[:, :, 0]

        # alpha_l | rest: shared precision across basis indices
        w = 1.0 / sigma_gam2                  # (n,)
        prec_a = (X.T * w) @ X + np.diag(1.0 / sigma_alp2)
        chol_a = np.linalg.cholesky(prec_a)
        mean_a = np.linalg.solve(prec_a, (X.T * w) @ theta)    # (p1, L)
        A = mean_a + np.linalg.solve(chol_a.T, rng.standard_normal((p1, L)))

        # latent t scales (identically 1 for Gaussian innovations)
        resid = Y - theta @ B.T
        if not gaussian:
            r2 = resid ** 2 / sigma_eps2
            xi = 1.0 / rng.gamma((nu + 1) / 2, 2.0 / (nu + r2))
        rate_e = b0 + 0.5 * np.sum(resid ** 2 / xi)
        sigma_eps2 = 1.0 / rng.gamma(a0 + n * m / 2, 1.0 / rate_e)

        # subject and coefficient variance parameters
        dev = theta - X @ A
        rate_g = b0 + 0.5 * np.sum(dev ** 2, axis=1)
        sigma_gam2 = 1.0 / rng.gamma(a0 + L / 2, 1.0 / rate_g)
        rate_a = b0 + 0.5 * np.sum(A ** 2, axis=1)
        sigma_alp2 = 1.0 / rng.gamma(a0 + L / 2, 1.0 / rate_a)

        if it >= burnin:
            s = it - burnin
            keep_alpha[s] = A
            keep_theta[s] = theta
            keep_sige[s] = np.sqrt(sigma_eps2)
            keep_sigg[s] = np.sqrt(sigma_gam2)
            keep_siga[s] = np.sqrt(sigma_alp2)

    return PosteriorDrawSet(
        kind="fosr",
        params={
            "alpha": keep_alpha,
            "theta": keep_theta,
            "sigma_eps": keep_sige,
            "sigma_gamma": keep_sigg,
            "sigma_alpha": keep_siga,
            "basis": B,
        },
        meta={
            "nu": float(nu),
            "tau": [float(t) for t in data.tau],
            "L": int(L),
            "constants": ["basis"],
        },
    )


# ---------------------------------------------------------------------------
# Posterior predictive simulation
# ---------------------------------------------------------------------------

@dataclass
class PredictiveDrawSet:
    """Posterior predictive draws: draws[s, i, :] is curve s at design row i."""

    draws: np.ndarray            # (S, n_tilde, m)
    design: np.ndarray           # (n_tilde, d)
    tau: np.ndarray | None = None

    def __post_init__(self):
        if self.draws.ndim != 3:
            raise ModelError("draws must have shape (S, n_tilde, m)")
        if self.draws.shape[1] != self.design.shape[0]:
            raise ModelError("draws and design disagree on n_tilde")
        if self.tau is not None:
            self.tau = np.asarray(self.tau, dtype=float)
            if self.tau.shape[0] != self.draws.shape[2]:
                raise ModelError("tau length disagrees with curve grid")

    @property
    def S(self) -> int:
        return self.draws.shape[0]


def _draw_rng(seed: int, s: int) -> np.random.Generator:
    """Independent child stream for predictive draw s (order independent)."""
    return np.random.default_rng(np.random.SeedSequence((seed, 0x70, s)))


def _predictive_curves(post: PosteriorDrawSet, design: np.ndarray, s: int,
                       rng: np.random.Generator,
                       subject_rows: np.ndarray | None) -> np.ndarray:
    """One predictive curve per design row under parameter draw s.

    subject_rows maps design rows to fitted subjects, in which case the
    subject's own basis coefficients are replicated with fresh observation
    noise; otherwise a new subject is drawn from the covariate regression
    with a deviation scale resampled from the fitted subjects' scales.
    """
    if post.kind == "conjugate":
        theta = post.params["theta"][s]
        sd = np.sqrt(float(post.meta["noise_variance"]))
        mean = design @ theta
        return (mean + sd * rng.standard_normal(mean.shape))[:, None]
    B = post.params["basis"]                 # (m, L)
    sig_e = post.params["sigma_eps"][s]
    nu = float(post.meta["nu"])
    if subject_rows is not None:
        theta_new = post.params["theta"][s][subject_rows]
    else:
        A = post.params["alpha"][s]          # (p1, L)
        sig_g = post.params["sigma_gamma"][s]
        nt, L = design.shape[0], A.shape[1]
        scale = sig_g[rng.integers(0, sig_g.shape[0], size=nt)]
        theta_new = design @ A + scale[:, None] * rng.standard_normal((nt, L))
    curves = theta_new @ B.T
    if np.isinf(nu):
        curves += sig_e * rng.standard_normal(curves.shape)
    else:
        curves += sig_e * rng.standard_t(nu, size=curves.shape)
    return curves


def _iter_predictive(post: PosteriorDrawSet, design: np.ndarray, seed: int,
                     subject_rows: np.ndarray | None = None):
    design = np.atleast_2d(np.asarray(design, dtype=float))
    _check_design(post, design)
    if subject_rows is not None:
        subject_rows = np.asarray(subject_rows, dtype=int)
        if post.kind != "conjugate":
            n_train = post.params["theta"].shape[1]
            if subject_rows.shape[0] != design.shape[0]:
                raise ModelError("subject_rows length != design rows")
            if subject_rows.min() < 0 or subject_rows.max() >= n_train:
                raise ModelError("subject_rows out of range")
    for s in range(post.S):
        yield s, _predictive_curves(post, design, s, _draw_rng(seed, s),
                                    subject_rows)


def _check_design(post: PosteriorDrawSet, design: np.ndarray):
    d = design.shape[1]
    if post.kind == "conjugate":
        expect = post.params["theta"].shape[1]
    else:
        expect = post.params["alpha"].shape[1]
    if d != expect:
        raise ModelError(f"design has {d} columns, model expects {expect}")


def predictive_draws(post: PosteriorDrawSet, design: np.ndarray,
                     seed: int = 0,
                     subject_rows: np.ndarray | None = None,
                     ) -> PredictiveDrawSet:
    """Sample one predictive curve per posterior draw per design row.

    Each draw s uses its own derived RNG stream, so the draw set is
    reproducible given (post, design, seed) and independent of evaluation
    order across draws. Pass subject_rows (design row -> fitted subject)
    to draw replicate curves for observed subjects instead of new-subject
    curves; importance reweighting by the held-out likelihood then turns
    these into exact training-posterior predictive draws.
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    _check_design(post, design)
    if post.kind == "conjugate":
        m, tau = 1, np.zeros(1)
    else:
        m = post.params["basis"].shape[0]
        tau = np.asarray(post.meta["tau"], dtype=float)
    out = np.empty((post.S, design.shape[0], m))
    for s, curves in _iter_predictive(post, design, seed, subject_rows):
        out[s] = curves
    return PredictiveDrawSet(draws=out, design=design, tau=tau)


def functional_draws(post: PosteriorDrawSet, design: np.ndarray, spec,
                     seed: int = 0,
                     subject_rows: np.ndarray | None = None) -> np.ndarray:
    """(S, n_tilde) matrix of h(y~) draws without storing the curves.

    Streaming equivalent of applying the functional to predictive_draws;
    produces bitwise-identical values.
    """
    from .functionals import apply_matrix

    design = np.atleast_2d(np.asarray(design, dtype=float))
    if post.kind == "conjugate":
        tau = np.zeros(1)
    else:
        tau = np.asarray(post.meta["tau"], dtype=float)
    out = np.empty((post.S, design.shape[0]))
    for s, curves in _iter_predictive(post, design, seed, subject_rows):
        out[s] = apply_matrix(spec, curves, tau)
    return out


# ---------------------------------------------------------------------------
# Rounding / transformation operators for count-valued curves
# ---------------------------------------------------------------------------

def star_round(t):
    """Latent-to-count rounding: floor above zero, zero at or below zero."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("star_round requires finite input")
    out = np.where(t > 0, np.floor(t), 0.0).astype(int)
    return out if out.ndim else int(out)


def star_transform(t):
    """Box-Cox square-root transform 2(sqrt(t) - 1) for nonnegative t."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("star_transform requires t >= 0")
    out = 2.0 * (np.sqrt(t) - 1.0)
    return out if out.ndim else float(out)


def star_inverse(u):
    """Inverse of star_transform: (u/2 + 1)^2, defined for u >= -2."""
    u = np.asarray(u, dtype=float)
    if np.any(u < -2):
        raise ValueError("star_inverse requires u >= -2")
    out = (u / 2.0 + 1.0) ** 2
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

DATASET_SCHEMA = "targetpred-dataset/v1"
DRAWS_SCHEMA = "targetpred-draws/v1"


def save_dataset(data: Dataset, csv_path, manifest_path):
    """CSV with covariate columns then response-grid columns, plus a JSON
    manifest carrying tau."""
    header = ",".join(
        [f"x{j + 1}" for j in range(data.p)] + [f"y{j + 1}" for j in range(data.m)])
    table = np.hstack([data.X, data.Y])
    np.savetxt(csv_path, table, delimiter=",", header=header, comments="",
               fmt="%.17g")
    manifest = {
        "schema": DATASET_SCHEMA,
        "n": data.n,
        "p": data.p,
        "m": data.m,
        "tau": [float(t) for t in data.tau],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset(csv_path, manifest_path) -> Dataset:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != DATASET_SCHEMA:
        raise ModelError(f"unexpected dataset schema {manifest.get('schema')!r}")
    p, m = int(manifest["p"]), int(manifest["m"])
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != p + m:
        raise ModelError(
            f"CSV has {table.shape[1]} columns, manifest says {p}+{m}")
    return Dataset(X=table[:, :p], Y=table[:, p:],
                   tau=np.asarray(manifest["tau"], dtype=float))


def save_draws(post: PosteriorDrawSet, bin_path, sidecar_path):
    """Flat binary archive (float64, C order) with a JSON layout sidecar."""
    fields = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name in sorted(post.params):
            arr = np.ascontiguousarray(post.params[name], dtype=float)
            fields.append({"name": name, "shape": list(arr.shape),
                           "offset_bytes": offset})
            fh.write(arr.tobytes())
            offset += arr.nbytes
    sidecar = {
        "schema": DRAWS_SCHEMA,
        "kind": post.kind,
        "S": post.S,
        "fields": fields,
        "meta": post.meta,
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_draws(bin_path, sidecar_path) -> PosteriorDrawSet:
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("schema") != DRAWS_SCHEMA:
        raise ModelError(f"unexpected draws schema {sidecar.get('schema')!r}")
    raw = np.fromfile(bin_path, dtype=float)
    params = {}
    for f in sidecar["fields"]:
        shape = tuple(f["shape"])
        size = int(np.prod(shape))
        start = f["offset_bytes"] // 8
        if start + size > raw.size:
            raise ModelError("binary archive is shorter than sidecar layout")
        params[f["name"]] = raw[start:start + size].reshape(shape)
    return PosteriorDrawSet(kind=sidecar["kind"], params=params,
                            meta=sidecar["meta"])


def split_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction on a single chain of draws."""
    x = np.asarray(draws, dtype=float).ravel()
    half = x.size // 2
    chains = np.stack([x[:half], x[half:2 * half]])
    n = chains.shape[1]
    means = chains.mean(axis=1)
    W = chains.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return 1.0
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))
