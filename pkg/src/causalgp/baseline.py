"""Naive benchmark: one independent GP regression per treatment arm.

Each arm gets its own ARD RBF kernel with signal and noise variances tuned
by maximizing the standard Gaussian log marginal likelihood (same
log-space Adam engine as the main model); the effect estimate is the
difference of the two posterior means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .data import ObservationalDataset
from .kernels import cholesky_with_jitter, rbf_ard_matrix
from .optim import AdamSettings, FitTrace, adam_log_space

__all__ = [
    "SingleTaskGP",
    "neg_log_marginal_likelihood",
    "fit_naive_gp",
    "predict_arm_mean",
    "predict_naive_ite",
]

FD_STEP = 1e-5


@dataclass(frozen=True)
class SingleTaskGP:
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    train_features: np.ndarray
    train_outcomes: np.ndarray
    factor: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.train_outcomes)


def _unpack(vec, d):
    return vec[:d], float(vec[d]), float(vec[d + 1])


def neg_log_marginal_likelihood(X, y, vec) -> float:
    """Negative Gaussian log evidence for params (lengthscales, s2, n2)."""
    d = X.shape[1]
    ls, signal_var, noise_var = _unpack(vec, d)
    K = signal_var * rbf_ard_matrix(X, X, ls)
    L, _ = cholesky_with_jitter(K, np.full(len(y), noise_var))
    a = solve_triangular(L, y, lower=True)
    return float(0.5 * a @ a + np.sum(np.log(np.diag(L)))
                 + 0.5 * len(y) * np.log(2.0 * np.pi))


def _fd_grad_log(X, y, vec, step=FD_STEP) -> np.ndarray:
    log_v = np.log(vec)
    g = np.empty(len(vec))
    for j in range(len(vec)):
        vp, vm = log_v.copy(), log_v.copy()
        vp[j] += step
        vm[j] -= step
        g[j] = (neg_log_marginal_likelihood(X, y, np.exp(vp))
                - neg_log_marginal_likelihood(X, y, np.exp(vm))) / (2 * step)
    return g


def _condition(X, y, vec) -> SingleTaskGP:
    d = X.shape[1]
    ls, signal_var, noise_var = _unpack(vec, d)
    K = signal_var * rbf_ard_matrix(X, X, ls)
    L, _ = cholesky_with_jitter(K, np.full(len(y), noise_var))
    weights = solve_triangular(L, solve_triangular(L, y, lower=True),
                               lower=True, trans="T")
    return SingleTaskGP(lengthscales=ls, signal_var=signal_var,
                        noise_var=noise_var, train_features=X,
                        train_outcomes=y, factor=L, weights=weights)


def _fit_arm(X, y, settings: AdamSettings):
    d = X.shape[1]
    s2 = float(np.var(y, ddof=1))
    if s2 <= 0:
        s2 = 1.0
    ls0 = np.std(X, axis=0)
    ls0[ls0 == 0] = 1.0
    x0 = np.concatenate([ls0, [0.9 * s2, 0.1 * s2]])

    def value_fn(vec):
        nll = neg_log_marginal_likelihood(X, y, vec)
        return nll, nll

    def grad_fn(vec):
        return _fd_grad_log(X, y, vec)

    best, trace = adam_log_space(value_fn, grad_fn, x0, settings)
    return _condition(X, y, best), trace


def fit_naive_gp(dataset: ObservationalDataset,
                 settings: AdamSettings | None = None
                 ) -> tuple[tuple[SingleTaskGP, SingleTaskGP],
                            tuple[FitTrace, FitTrace]]:
    """Fit the two per-arm GPs by evidence maximization."""
    settings = settings or AdamSettings(max_iters=100)
    dataset.require_both_arms()
    models, traces = [], []
    for arm in (0, 1):
        idx = np.flatnonzero(dataset.treatments == arm)
        if len(idx) < 2:
            raise ValueError(f"arm {arm} needs at least 2 subjects")
        gp, trace = _fit_arm(dataset.features[idx], dataset.outcomes[idx], settings)
        models.append(gp)
        traces.append(trace)
    return (models[0], models[1]), (traces[0], traces[1])


def predict_arm_mean(gp: SingleTaskGP, X_new) -> np.ndarray:
    """Posterior mean of one arm's GP at the rows of X_new."""
    K_star = gp.signal_var * rbf_ard_matrix(np.atleast_2d(X_new),
                                            gp.train_features, gp.lengthscales)
    return K_star @ gp.weights


def predict_naive_ite(pair: tuple[SingleTaskGP, SingleTaskGP], X_new) -> np.ndarray:
    """Treated-arm posterior mean minus control-arm posterior mean."""
    gp0, gp1 = pair
    return predict_arm_mean(gp1, X_new) - predict_arm_mean(gp0, X_new)
