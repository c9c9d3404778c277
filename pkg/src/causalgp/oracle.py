"""Reference learner with counterfactual access.

With both potential outcomes in hand, the effect-error minimizer over the
vector-valued RKHS is a kernel ridge regression on observed effects with
the scalar effect kernel Ktilde(x, x') = e' K(x, x') e. It never enters the
estimation path (counterfactuals are unavailable there); it exists as an
independent check of the GP machinery and as the exact-effect metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kernels import CMGPHyperparams, rbf_ard_matrix
from .posterior import EFFECT_PROJECTION

__all__ = [
    "OracleFit",
    "effect_kernel_matrix",
    "oracle_empirical_pehe",
    "oracle_fit",
    "oracle_predict",
]


@dataclass(frozen=True)
class OracleFit:
    alpha: np.ndarray
    lam: float
    effect_kernel: np.ndarray
    train_features: np.ndarray


def effect_kernel_matrix(X, X_prime, theta: CMGPHyperparams) -> np.ndarray:
    """Ktilde(x, x') = e' K(x, x') e evaluated on two point sets."""
    e = EFFECT_PROJECTION
    c0 = float(e @ theta.coreg_matrix(0) @ e)
    c1 = float(e @ theta.coreg_matrix(1) @ e)
    K0 = rbf_ard_matrix(X, X_prime, theta.lengthscales0)
    K1 = rbf_ard_matrix(X, X_prime, theta.lengthscales1)
    return c0 * K0 + c1 * K1


def observed_effects(W, y_factual, y_counterfactual) -> np.ndarray:
    """Per-subject realized effect (1 - 2W) * (Y_cf - Y_f) = Y(1) - Y(0)."""
    W = np.asarray(W, dtype=float)
    yf = np.asarray(y_factual, dtype=float)
    yc = np.asarray(y_counterfactual, dtype=float)
    if not (W.shape == yf.shape == yc.shape):
        raise ValueError("W, factual and counterfactual outcomes must align")
    return (1.0 - 2.0 * W) * (yc - yf)


def oracle_empirical_pehe(effect_estimates, W, y_factual, y_counterfactual) -> float:
    """Mean squared error of effect estimates against realized effects."""
    est = np.asarray(effect_estimates, dtype=float)
    target = observed_effects(W, y_factual, y_counterfactual)
    if est.shape != target.shape:
        raise ValueError("effect estimates must align with the outcomes")
    return float(np.mean((est - target) ** 2))


def oracle_fit(X, W, y_factual, y_counterfactual, theta: CMGPHyperparams,
               lam: float | None = None) -> OracleFit:
    """Ridge solution alpha = (Ktilde + n*lam*I)^{-1} (realized effects)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if lam is None:
        lam = 1.0 / n
    if lam <= 0:
        raise ValueError("ridge parameter must be > 0")
    theta.validate()
    Kt = effect_kernel_matrix(X, X, theta)
    target = observed_effects(W, y_factual, y_counterfactual)
    cf = cho_factor(Kt + n * lam * np.eye(n), lower=True)
    alpha = cho_solve(cf, target)
    return OracleFit(alpha=alpha, lam=float(lam), effect_kernel=Kt, train_features=X)


def oracle_predict(fit: OracleFit, x, theta: CMGPHyperparams) -> float:
    """sum_i alpha_i Ktilde(x, X_i)."""
    k = effect_kernel_matrix(np.atleast_2d(x), fit.train_features, theta)
    return float(k[0] @ fit.alpha)
