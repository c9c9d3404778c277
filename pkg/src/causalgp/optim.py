"""Hyperparameter initialization and the multiplicative Adam loop.

All positive parameters are optimized through phi = exp(log-parameters):
Adam runs additively on the logs, which is the same as the multiplicative
update phi <- phi * exp(-lr * mhat / (sqrt(vhat) + eps)) and keeps every
iterate strictly positive. The returned optimum is the best iterate
visited, not the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import ObservationalDataset
from .kernels import CMGPHyperparams, validate_or_project
from .objective import evaluate_objective, gradient_log_space_unique

__all__ = [
    "AdamSettings",
    "FitTrace",
    "adam_log_space",
    "init_hyperparameters",
    "fit",
]


@dataclass(frozen=True)
class AdamSettings:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iters: int = 500
    rel_tol: float = 1e-6
    window: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "AdamSettings":
        known = {f: obj[f] for f in obj}
        allowed = {"learning_rate", "beta1", "beta2", "epsilon",
                   "max_iters", "rel_tol", "window"}
        unknown = set(known) - allowed
        if unknown:
            raise ValueError(f"unknown optimizer settings: {sorted(unknown)}")
        return cls(**known)


@dataclass
class FitTrace:
    """Per-iteration record of the optimization path."""

    iters: list[int] = field(default_factory=list)
    r_hat: list[float] = field(default_factory=list)
    q: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    params: list[np.ndarray] = field(default_factory=list)
    iterations_used: int = 0
    converged: bool = False

    def append(self, it, r_hat, q, grad_norm):
        self.iters.append(int(it))
        self.r_hat.append(float(r_hat))
        self.q.append(float(q))
        self.grad_norm.append(float(grad_norm))

    def rows(self):
        return list(zip(self.iters, self.r_hat, self.q, self.grad_norm))


def adam_log_space(value_fn: Callable[[np.ndarray], tuple[float, float]],
                   grad_fn: Callable[[np.ndarray], np.ndarray],
                   x0: np.ndarray,
                   settings: AdamSettings,
                   project: Callable[[np.ndarray], np.ndarray] | None = None):
    """Minimize value_fn over positive vectors via Adam on their logs.

    value_fn maps a natural-scale vector to (objective, aux) where aux is
    recorded in the trace's q column; grad_fn returns the gradient w.r.t.
    the log-parameters. Returns (best_x, trace).
    """
    x = np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    if np.any(x <= 0):
        raise ValueError("initial parameters must be strictly positive")
    log_x = np.log(x)
    m = np.zeros_like(log_x)
    v = np.zeros_like(log_x)
    trace = FitTrace()

    best_val, aux0 = value_fn(x)
    best_x = x.copy()
    history = [best_val]
    trace.params.append(x.copy())

    for t in range(1, settings.max_iters + 1):
        g = grad_fn(np.exp(log_x))
        m = settings.beta1 * m + (1.0 - settings.beta1) * g
        v = settings.beta2 * v + (1.0 - settings.beta2) * g * g
        m_hat = m / (1.0 - settings.beta1 ** t)
        v_hat = v / (1.0 - settings.beta2 ** t)
        log_x = log_x - settings.learning_rate * m_hat / (np.sqrt(v_hat) + settings.epsilon)
        x = np.exp(log_x)
        if project is not None:
            x = project(x)
            log_x = np.log(x)
        val, aux = value_fn(x)
        trace.append(t, val, aux, float(np.linalg.norm(g)))
        trace.params.append(x.copy())
        history.append(val)
        if np.isfinite(val) and val < best_val:
            best_val, best_x = val, x.copy()
        if t >= settings.window:
            ref = history[t - settings.window]
            if abs(ref - val) <= settings.rel_tol * max(1.0, abs(ref)):
                trace.converged = True
                break
    trace.iterations_used = len(trace.iters)
    if not np.isfinite(best_val):
        raise FloatingPointError("objective never attained a finite value")
    return best_x, trace


def _upcrossings(values: np.ndarray, level: float) -> int:
    below = values[:-1] <= level
    above = values[1:] > level
    return int(np.sum(below & above))


def _smoothed(values: np.ndarray) -> np.ndarray:
    # moving average; other features act as noise on the sorted sequence
    window = max(3, len(values) // 20)
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def init_hyperparameters(dataset: ObservationalDataset) -> CMGPHyperparams:
    """Deterministic starting point from per-arm outcome statistics.

    Output variances come from each arm's sample outcome variance; length
    scales come from how often the (smoothed) outcome sequence, ordered by
    a feature, up-crosses its arm mean: frequent crossings imply short
    scales. The sqrt(d) factor keeps typical scaled distances O(1) so the
    kernel starts in its responsive regime regardless of dimension.
    """
    dataset.require_both_arms()
    arm_idx = [np.flatnonzero(dataset.treatments == w) for w in (0, 1)]
    if any(len(idx) < 2 for idx in arm_idx):
        raise ValueError("each arm needs at least 2 subjects to initialize")
    s2 = []
    for idx in arm_idx:
        var = float(np.var(dataset.outcomes[idx], ddof=1))
        s2.append(var if var > 0 else 1.0)

    dim_scale = np.sqrt(dataset.d)
    lengthscales = []
    for w in (0, 1):
        idx = arm_idx[w]
        y = dataset.outcomes[idx]
        level = float(np.mean(y))
        ls = np.empty(dataset.d)
        for k in range(dataset.d):
            xk = dataset.features[idx, k]
            std_k = float(np.std(xk))
            # near-zero spread (incl. rounding noise on a constant column)
            if std_k <= 1e-12 * max(1.0, float(np.max(np.abs(xk)))):
                ls[k] = 1.0
                continue
            order = np.argsort(xk, kind="stable")
            crossings = max(_upcrossings(_smoothed(y[order]), level), 1)
            rng_k = float(np.ptp(xk))
            ls[k] = np.clip(dim_scale * rng_k / (2.0 * np.pi * crossings),
                            0.5 * dim_scale * std_k, 10.0 * dim_scale * std_k)
        lengthscales.append(ls)

    b0 = 0.45 * s2[0]
    b1 = 0.45 * s2[1]
    theta = CMGPHyperparams(
        noise_std=(np.sqrt(0.1 * s2[0]), np.sqrt(0.1 * s2[1])),
        lengthscales0=lengthscales[0],
        lengthscales1=lengthscales[1],
        coreg0=(b0, b1, 0.5 * np.sqrt(b0 * b1)),
        coreg1=(b0, b1, 0.5 * np.sqrt(b0 * b1)),
    )
    return theta.validate()


def fit(dataset: ObservationalDataset, settings: AdamSettings | None = None,
        theta0: CMGPHyperparams | None = None):
    """Tune the hyperparameters by minimizing the empirical-Bayes risk.

    Returns (theta_star, trace) with theta_star the best visited iterate.
    """
    settings = settings or AdamSettings()
    if theta0 is None:
        theta0 = init_hyperparameters(dataset)
    theta0 = validate_or_project(theta0)
    d = dataset.d

    def value_fn(vec):
        obj = evaluate_objective(dataset, CMGPHyperparams.from_vector(vec, d))
        return obj.r_hat, obj.q

    def grad_fn(vec):
        return gradient_log_space_unique(dataset, CMGPHyperparams.from_vector(vec, d))

    def project(vec):
        return validate_or_project(CMGPHyperparams.from_vector(vec, d)).to_vector()

    best_vec, trace = adam_log_space(value_fn, grad_fn, theta0.to_vector(),
                                     settings, project=project)
    return CMGPHyperparams.from_vector(best_vec, d).validate(), trace
