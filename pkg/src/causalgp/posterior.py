"""Exact posterior of the two-output GP over potential outcomes.

Fitting factorizes K(X, X) + Sigma once (rows reordered control-first so
the noise diagonal is block-structured); effect estimates, credible
intervals, counterfactual variances, and closed-form leave-one-out means
all reuse that factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erfinv

from .data import ObservationalDataset
from .kernels import (
    CMGPHyperparams,
    cholesky_with_jitter,
    cross_covariance_batch,
    training_gram,
)

__all__ = [
    "InferenceError",
    "PosteriorModel",
    "ITEPrediction",
    "fit_posterior",
    "predict",
    "predict_batch",
    "counterfactual_variances",
    "loo_means",
]

# ITE projection of the output pair (f0, f1): T = e' f with e = [-1, 1]
EFFECT_PROJECTION = np.array([-1.0, 1.0])

VAR_CLAMP_TOL = 1e-8


class InferenceError(RuntimeError):
    """Numerical failure while conditioning the GP."""


@dataclass(frozen=True)
class PosteriorModel:
    """Factorized training posterior; immutable and cheap to predict from.

    Rows are stored control-first; ``order`` maps internal row -> original
    dataset row so per-subject outputs can be returned in input order.
    """

    theta: CMGPHyperparams
    train_features: np.ndarray
    train_tasks: np.ndarray
    train_outcomes: np.ndarray
    order: np.ndarray
    factor: np.ndarray | None
    weights: np.ndarray
    diag_precision: np.ndarray
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return len(self.train_outcomes)

    @classmethod
    def prior(cls, theta: CMGPHyperparams) -> "PosteriorModel":
        """Data-free model: predictions fall back to the prior."""
        d = theta.d
        empty = np.zeros(0)
        return cls(theta=theta.validate(), train_features=np.zeros((0, d)),
                   train_tasks=np.zeros(0, dtype=int), train_outcomes=empty,
                   order=np.zeros(0, dtype=int), factor=None, weights=empty,
                   diag_precision=empty)


@dataclass(frozen=True)
class ITEPrediction:
    """Point effect estimate with posterior output covariance and interval."""

    point: float
    po_mean: np.ndarray
    po_cov: np.ndarray
    interval: tuple[float, float]
    gamma: float


def fit_posterior(dataset: ObservationalDataset, theta: CMGPHyperparams) -> PosteriorModel:
    """Condition the GP on the factual outcomes at fixed hyperparameters."""
    theta.validate()
    dataset.require_both_arms()
    order = np.argsort(dataset.treatments, kind="stable")  # controls first
    X = dataset.features[order]
    W = dataset.treatments[order]
    Y = dataset.outcomes[order]
    gram = training_gram(X, W, theta)
    s0, s1 = theta.noise_std
    noise = np.where(W == 0, s0 ** 2, s1 ** 2)
    L, jitter = cholesky_with_jitter(gram.matrix, noise)
    # weights = (K + Sigma)^{-1} Y via two triangular solves
    weights = solve_triangular(L, solve_triangular(L, Y, lower=True),
                               lower=True, trans="T")
    Linv = solve_triangular(L, np.eye(len(Y)), lower=True)
    diag_precision = np.einsum("ij,ij->j", Linv, Linv)
    return PosteriorModel(theta=theta, train_features=X, train_tasks=W,
                          train_outcomes=Y, order=order, factor=L,
                          weights=weights, diag_precision=diag_precision,
                          jitter_used=jitter)


def _clamp_variance(v: np.ndarray, what: str) -> np.ndarray:
    worst = float(np.min(v)) if v.size else 0.0
    if worst < -VAR_CLAMP_TOL:
        raise InferenceError(f"negative {what} {worst:.3e} beyond tolerance")
    return np.maximum(v, 0.0)


def predict_batch(model: PosteriorModel, X_new, gamma: float = 0.95):
    """Vectorized effect predictions at the rows of X_new.

    Returns a dict of arrays: t_hat, f0_hat, f1_hat, var_t, lo, hi, and the
    per-point 2x2 output covariances as po_cov (m, 2, 2).
    """
    if not 0.0 <= gamma < 1.0:
        raise InferenceError("coverage gamma must be in [0, 1)")
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    m = X_new.shape[0]
    theta = model.theta
    prior_cov = theta.coreg_matrix(0) + theta.coreg_matrix(1)
    if model.n == 0:
        mean = np.zeros((m, 2))
        cov = np.broadcast_to(prior_cov, (m, 2, 2)).copy()
    else:
        C0, C1 = cross_covariance_batch(X_new, model.train_features,
                                        model.train_tasks, theta)
        mean = np.column_stack([C0 @ model.weights, C1 @ model.weights])
        Z0 = solve_triangular(model.factor, C0.T, lower=True)
        Z1 = solve_triangular(model.factor, C1.T, lower=True)
        cov = np.empty((m, 2, 2))
        cov[:, 0, 0] = prior_cov[0, 0] - np.einsum("ij,ij->j", Z0, Z0)
        cov[:, 1, 1] = prior_cov[1, 1] - np.einsum("ij,ij->j", Z1, Z1)
        cov[:, 0, 1] = cov[:, 1, 0] = prior_cov[0, 1] - np.einsum("ij,ij->j", Z0, Z1)
    t_hat = mean @ EFFECT_PROJECTION
    var_t = np.einsum("i,mij,j->m", EFFECT_PROJECTION, cov, EFFECT_PROJECTION)
    var_t = _clamp_variance(var_t, "effect variance")
    half = float(erfinv(gamma)) * np.sqrt(2.0 * var_t)
    return {
        "t_hat": t_hat, "f0_hat": mean[:, 0], "f1_hat": mean[:, 1],
        "var_t": var_t, "lo": t_hat - half, "hi": t_hat + half,
        "po_cov": cov,
    }


def predict(model: PosteriorModel, x, gamma: float = 0.95) -> ITEPrediction:
    """Effect prediction at a single point with a coverage-gamma interval."""
    out = predict_batch(model, np.atleast_2d(x), gamma)
    return ITEPrediction(
        point=float(out["t_hat"][0]),
        po_mean=np.array([out["f0_hat"][0], out["f1_hat"][0]]),
        po_cov=out["po_cov"][0],
        interval=(float(out["lo"][0]), float(out["hi"][0])),
        gamma=gamma,
    )


def counterfactual_variances(model: PosteriorModel) -> np.ndarray:
    """Posterior variance of each subject's unobserved counterfactual outcome.

    Entry i is Var[f_{1-W_i}(X_i) | data] plus the opposite arm's noise
    variance (the counterfactual *outcome* is noisy). Returned in the
    original dataset row order.
    """
    theta = model.theta
    W = model.train_tasks
    opp = 1 - W
    C0, C1 = cross_covariance_batch(model.train_features, model.train_features,
                                    W, theta)
    # row i: covariance of the opposite-arm latent at X_i with the data
    C_cf = np.where(opp[:, None] == 0, C0, C1)
    Z = solve_triangular(model.factor, C_cf.T, lower=True)
    prior_cov = theta.coreg_matrix(0) + theta.coreg_matrix(1)
    prior_var = np.diag(prior_cov)[opp]
    latent_var = _clamp_variance(prior_var - np.einsum("ij,ij->j", Z, Z),
                                 "counterfactual variance")
    s0, s1 = theta.noise_std
    noise_var = np.where(opp == 0, s0 ** 2, s1 ** 2)
    cf = latent_var + noise_var
    out = np.empty_like(cf)
    out[model.order] = cf
    return out


def loo_means(model: PosteriorModel) -> np.ndarray:
    """Closed-form leave-one-out posterior means of the observed-arm latents.

    Uses the exact identity mu_{-i} = y_i - w_i / P_ii with w = (K+Sigma)^{-1} y
    and P_ii the diagonal of (K+Sigma)^{-1}. Original dataset row order.
    """
    if np.any(model.diag_precision <= 0):
        raise InferenceError("nonpositive diagonal precision in LOO identity")
    loo = model.train_outcomes - model.weights / model.diag_precision
    out = np.empty_like(loo)
    out[model.order] = loo
    return out
