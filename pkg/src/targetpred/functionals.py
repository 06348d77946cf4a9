"""Predictive functionals of curves: scalar summaries h(y~) and their
application to posterior predictive draw sets.

Integrals use trapezoidal quadrature with weights normalized to sum to one,
so every integral-type summary is a weighted average over the grid and is
insensitive to the grid size for smooth curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("avg", "tlac", "sd", "sedentary", "max", "argmax", "zeros_window",
         "contrast")

ZERO_TOL = 1e-12  # |value| below this counts as an exact zero for indicators


@dataclass(frozen=True)
class FunctionalSpec:
    """A curve summary h(y~) with its kind-specific parameters.

    kind : one of avg, tlac, sd, sedentary, max, argmax, zeros_window,
           contrast.
    threshold : activity cutoff for sedentary (default 100).
    window : (lo, hi) subdomain for zeros_window, inside [0, 1].
    contrast : (q, m) matrix C for the linear contrast C y~.
    """

    kind: str
    threshold: float = 100.0
    window: tuple = (1.0 / 24.0, 5.0 / 24.0)
    contrast: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if not np.isfinite(self.threshold):
            raise ValueError("sedentary threshold must be finite")
        lo, hi = self.window
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("zeros window must satisfy 0 <= lo < hi <= 1")
        if self.kind == "contrast":
            if self.contrast is None:
                raise ValueError("contrast kind requires a contrast matrix")
            object.__setattr__(
                self, "contrast",
                np.atleast_2d(np.asarray(self.contrast, dtype=float)))

    @property
    def is_binary(self) -> bool:
        return self.kind == "zeros_window"

    def to_json_dict(self) -> dict:
        params: dict = {}
        if self.kind == "sedentary":
            params["threshold"] = self.threshold
        elif self.kind == "zeros_window":
            params["window"] = list(self.window)
        elif self.kind == "contrast":
            params["contrast"] = np.asarray(self.contrast).tolist()
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FunctionalSpec":
        params = d.get("params", {}) or {}
        kwargs = {}
        if "threshold" in params:
            kwargs["threshold"] = float(params["threshold"])
        if "window" in params:
            kwargs["window"] = tuple(float(v) for v in params["window"])
        if "contrast" in params:
            kwargs["contrast"] = np.asarray(params["contrast"], dtype=float)
        return cls(kind=d["kind"], **kwargs)


def save_contrast_csv(C: np.ndarray, path):
    np.savetxt(path, np.atleast_2d(C), delimiter=",", fmt="%.17g")


def load_contrast_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def trapezoid_weights(tau: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights on tau, normalized to sum to 1."""
    tau = np.asarray(tau, dtype=float)
    if tau.size == 1:
        return np.ones(1)
    d = np.diff(tau)
    w = np.zeros_like(tau)
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w / w.sum()


def apply_matrix(spec: FunctionalSpec, curves: np.ndarray,
                 tau: np.ndarray) -> np.ndarray:
    """Apply a functional to each row of a (k, m) matrix of curves.

    Single vectorized kernel shared by apply, apply_to_draws and the
    streaming draw pipeline. Returns (k,) for scalar kinds and (k, q) for
    contrasts.
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    tau = np.asarray(tau, dtype=float)
    if spec.kind == "contrast":
        C = spec.contrast
        if C.shape[1] != curves.shape[1]:
            raise ValueError(
                f"contrast has {C.shape[1]} columns, curves have "
                f"{curves.shape[1]} grid points")
        return curves @ C.T
    if curves.shape[1] != tau.size:
        raise ValueError(
            f"curve length {curves.shape[1]} != grid size {tau.size}")
    if spec.kind in ("max", "argmax"):
        if spec.kind == "max":
            return curves.max(axis=1)
        return tau[curves.argmax(axis=1)]  # first occurrence on ties
    w = trapezoid_weights(tau)
    if spec.kind == "avg":
        return curves @ w
    if spec.kind == "tlac":
        if np.any(curves <= -1.0):
            raise ValueError("tlac undefined: curve values <= -1 present")
        return np.log1p(curves) @ w
    if spec.kind == "sd":
        mean = curves @ w
        return np.sqrt(((curves - mean[:, None]) ** 2) @ w)
    if spec.kind == "sedentary":
        return (curves <= spec.threshold).astype(float) @ w
    # zeros_window: 1 iff every grid value inside the window is (exactly) zero
    lo, hi = spec.window
    mask = (tau >= lo - ZERO_TOL) & (tau <= hi + ZERO_TOL)
    inside = np.abs(curves[:, mask]) <= ZERO_TOL
    return inside.all(axis=1).astype(float)


def apply(spec: FunctionalSpec, curve: np.ndarray, tau: np.ndarray):
    """Functional value for a single curve; scalar except for contrasts."""
    out = apply_matrix(spec, np.atleast_2d(curve), tau)
    return out[0] if spec.kind == "contrast" else float(out[0])


def apply_to_draws(spec: FunctionalSpec, preds) -> np.ndarray:
    """Functional draws h(y~_i^s) for every draw and design point.

    preds is a PredictiveDrawSet (or anything with .draws of shape
    (S, n, m)). Returns (S, n), or (S, n, q) for contrasts. The grid is
    taken from preds.tau when present, else a uniform grid on [0, 1].
    """
    draws = preds.draws if hasattr(preds, "draws") else np.asarray(preds)
    S, n, m = draws.shape
    tau = getattr(preds, "tau", None)
    if tau is None:
        tau = np.zeros(1) if m == 1 else np.linspace(0.0, 1.0, m)
    flat = apply_matrix(spec, draws.reshape(S * n, m), tau)
    if spec.kind == "contrast":
        return flat.reshape(S, n, -1)
    return flat.reshape(S, n)


def hbar(spec: FunctionalSpec, preds) -> np.ndarray:
    """Posterior predictive expectation of h(y~_i) at each design point."""
    return apply_to_draws(spec, preds).mean(axis=0)
