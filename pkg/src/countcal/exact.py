"""Dense Gaussian process: exact likelihood, MLE fit and kriging.

Used directly for small training sets and as the brute-force oracle the
Vecchia code is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import IllConditionedError, ValidationError
from .kernel import KernelSpec, cross_cov, jitter_ladder
from .optim import FitResult, default_init, maximize, response_scale

DENSE_CAP = 4000


@dataclass(frozen=True)
class PredictiveSummary:
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        if np.any(~np.isfinite(self.means)) or np.any(~np.isfinite(self.sds)) or np.any(self.sds < 0):
            raise ValueError("predictive summary must be finite with sds >= 0")


def gram(spec: KernelSpec, X) -> np.ndarray:
    K = cross_cov(spec, X, X)
    K[np.diag_indices_from(K)] += spec.nugget
    return K


def chol_with_jitter(K: np.ndarray, tau2: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating diagonal jitter on failure."""
    jit = 0.0
    for jit in jitter_ladder(tau2):
        A = K if jit == 0.0 else K + jit * np.eye(K.shape[0])
        try:
            return linalg.cholesky(A, lower=True, check_finite=False), jit
        except linalg.LinAlgError:
            continue
    raise IllConditionedError("covariance matrix is not positive definite", jit)


def log_likelihood_dense(spec: KernelSpec, inputs, responses) -> float:
    """Exact zero-mean MVN log density of (already centered) responses."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(responses, dtype=float).ravel()
    if y.size < 1 or X.shape[0] != y.size:
        raise ValidationError("inputs and responses must have matching, non-zero length")
    L, _ = chol_with_jitter(gram(spec, X), spec.tau2)
    z = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * y.size * math.log(2 * math.pi) - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def fit_mle_dense(
    inputs, responses, init: KernelSpec | None = None, budget: int = 500, cap: int = DENSE_CAP
) -> FitResult:
    """Maximum-likelihood hyperparameters for a dense GP.

    Responses are centered internally. Returns a :class:`FitResult`; its
    ``warning`` is set when the evaluation budget ran out.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(responses, dtype=float).ravel()
    if y.size > cap:
        raise ValidationError(f"dense fit limited to {cap} rows, got {y.size}")
    yc = y - y.mean()
    init = init or default_init(X.shape[1], yc)
    return maximize(lambda s: log_likelihood_dense(s, X, yc), init, response_scale(yc), budget)


class ExactGP:
    """Fitted dense GP; immutable after construction."""

    def __init__(self, spec: KernelSpec, inputs, responses):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(responses, dtype=float).ravel()
        if X.shape[0] != y.size or y.size < 1:
            raise ValidationError("inputs and responses must have matching, non-zero length")
        if X.shape[1] != spec.d:
            raise ValidationError(f"spec has {spec.d} lengthscales, inputs have {X.shape[1]} columns")
        self.spec = spec
        self.inputs = X
        self.mean = float(y.mean())
        self.responses = y - self.mean
        self.chol, self.jitter = chol_with_jitter(gram(spec, X), spec.tau2)
        self._alpha = linalg.cho_solve((self.chol, True), self.responses, check_finite=False)
        for a in (self.inputs, self.responses, self.chol, self._alpha):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return self.responses.size

    def log_likelihood(self) -> float:
        z = linalg.solve_triangular(self.chol, self.responses, lower=True, check_finite=False)
        return float(-0.5 * self.n * math.log(2 * math.pi) - np.sum(np.log(np.diag(self.chol))) - 0.5 * z @ z)


def predict_dense(model: ExactGP, xstar, block: int = 2048) -> PredictiveSummary:
    """Kriging means (de-centered) and latent standard deviations."""
    Xs = np.atleast_2d(np.asarray(xstar, dtype=float))
    means = np.empty(Xs.shape[0])
    sds = np.empty(Xs.shape[0])
    for lo in range(0, Xs.shape[0], block):
        ks = cross_cov(model.spec, Xs[lo : lo + block], model.inputs)
        means[lo : lo + block] = model.mean + ks @ model._alpha
        w = linalg.solve_triangular(model.chol, ks.T, lower=True, check_finite=False)
        var = model.spec.tau2 - np.sum(w * w, axis=0)
        sds[lo : lo + block] = np.sqrt(np.maximum(var, 0.0))
    return PredictiveSummary(means, sds)


def gaussian_marginal_loglik(residuals) -> float:
    """Log marginal likelihood of i.i.d. Gaussian residuals with sigma^2
    integrated out under the 1/sigma^2 reference prior, up to a constant:
    ``-(n/2) log(sum r^2)``."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < 2:
        raise ValidationError("need at least two residuals")
    rss = float(r @ r)
    if not np.isfinite(rss):
        raise ValidationError("residuals must be finite")
    if rss == 0.0:
        raise ValidationError("residual sum of squares is zero; marginal likelihood undefined")
    return -0.5 * r.size * math.log(rss)
