"""Two-output covariance structure for potential-outcome regression.

The multi-output kernel is a sum of two intrinsic coregionalization terms,
K(x, x') = A0 * k0(x, x') + A1 * k1(x, x'), where each k_w is an RBF with
per-feature (ARD) length scales and each A_w is a symmetric 2x2 matrix
[[b_w0, rho_w], [rho_w, b_w1]] of output variances and a cross-output
covariance. Training points carry a task index (the treatment arm), so the
observable gram matrix is n x n rather than 2n x 2n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "KernelError",
    "CMGPHyperparams",
    "TaskIndexedGram",
    "rbf_ard",
    "rbf_ard_matrix",
    "lmc_block",
    "training_gram",
    "cross_covariance",
    "cross_covariance_batch",
    "validate_or_project",
    "cholesky_with_jitter",
]

JITTER_BASE = 1e-10
JITTER_FACTOR = 10.0
JITTER_MAX_RETRIES = 6


class KernelError(ValueError):
    """Invalid hyperparameters or irreparably non-PSD covariance."""


@dataclass(frozen=True)
class CMGPHyperparams:
    """Natural-scale hyperparameters of the two-output kernel.

    noise_std: (sigma0, sigma1) outcome noise standard deviations.
    lengthscales0/1: per-feature RBF length scales of the two base kernels.
    coreg0/1: (b_w0, b_w1, rho_w) with b the output variances and rho >= 0
    the cross-output covariance of coregionalization matrix A_w.
    """

    noise_std: tuple[float, float]
    lengthscales0: np.ndarray
    lengthscales1: np.ndarray
    coreg0: tuple[float, float, float]
    coreg1: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lengthscales0", np.asarray(self.lengthscales0, dtype=float))
        object.__setattr__(self, "lengthscales1", np.asarray(self.lengthscales1, dtype=float))
        object.__setattr__(self, "noise_std", tuple(float(s) for s in self.noise_std))
        object.__setattr__(self, "coreg0", tuple(float(v) for v in self.coreg0))
        object.__setattr__(self, "coreg1", tuple(float(v) for v in self.coreg1))
        if self.lengthscales0.shape != self.lengthscales1.shape or self.lengthscales0.ndim != 1:
            raise KernelError("length-scale vectors must be 1-d and equal length")

    @property
    def d(self) -> int:
        return len(self.lengthscales0)

    def validate(self, psd_slack: float = 1e-12):
        if any(s <= 0 for s in self.noise_std):
            raise KernelError("noise standard deviations must be > 0")
        for ls in (self.lengthscales0, self.lengthscales1):
            if np.any(ls <= 0):
                raise KernelError("length scales must be > 0")
        for b0, b1, rho in (self.coreg0, self.coreg1):
            if b0 <= 0 or b1 <= 0:
                raise KernelError("output variances must be > 0")
            if rho < 0:
                raise KernelError("cross-output covariance must be >= 0")
            if rho * rho > b0 * b1 * (1.0 + psd_slack):
                raise KernelError("coregionalization matrix is not PSD: rho^2 > b0*b1")
        return self

    def coreg_matrix(self, w: int) -> np.ndarray:
        b0, b1, rho = self.coreg0 if w == 0 else self.coreg1
        return np.array([[b0, rho], [rho, b1]])

    # -- flat parameter vectors -------------------------------------------
    # Unique layout (8 + 2d): sigma0, sigma1, ell0[0..d), ell1[0..d),
    #   b00, b01, rho0, b10, b11, rho1.
    # Full layout (10 + 2d) repeats each rho (two symmetric matrix entries).

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            np.array(self.noise_std),
            self.lengthscales0, self.lengthscales1,
            np.array(self.coreg0), np.array(self.coreg1),
        ])

    @classmethod
    def from_vector(cls, vec: np.ndarray, d: int) -> "CMGPHyperparams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (8 + 2 * d,):
            raise KernelError(f"expected parameter vector of length {8 + 2 * d}")
        return cls(
            noise_std=(vec[0], vec[1]),
            lengthscales0=vec[2:2 + d],
            lengthscales1=vec[2 + d:2 + 2 * d],
            coreg0=tuple(vec[2 + 2 * d:5 + 2 * d]),
            coreg1=tuple(vec[5 + 2 * d:8 + 2 * d]),
        )

    def full_vector(self) -> np.ndarray:
        """Natural-scale vector of length 10 + 2d with each rho counted twice."""
        b00, b01, rho0 = self.coreg0
        b10, b11, rho1 = self.coreg1
        return np.concatenate([
            np.array(self.noise_std),
            self.lengthscales0, self.lengthscales1,
            np.array([b00, b01, rho0, rho0, b10, b11, rho1, rho1]),
        ])

    @staticmethod
    def full_param_names(d: int) -> list[str]:
        return (["sigma0", "sigma1"]
                + [f"ell0_{k + 1}" for k in range(d)]
                + [f"ell1_{k + 1}" for k in range(d)]
                + ["b00", "b01", "rho0_01", "rho0_10", "b10", "b11", "rho1_01", "rho1_10"])

    @staticmethod
    def unique_to_full(vec_unique: np.ndarray, d: int) -> np.ndarray:
        """Expand a (8+2d)-vector to the (10+2d) layout by repeating the rhos."""
        v = np.asarray(vec_unique, dtype=float)
        head = v[:2 + 2 * d]
        b00, b01, rho0, b10, b11, rho1 = v[2 + 2 * d:]
        return np.concatenate([head, [b00, b01, rho0, rho0, b10, b11, rho1, rho1]])

    def norm_sq(self) -> float:
        """Squared 2-norm of the full (10+2d) natural-scale vector."""
        return float(np.sum(self.full_vector() ** 2))

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "sigma0": self.noise_std[0], "sigma1": self.noise_std[1],
            "ell0": self.lengthscales0.tolist(), "ell1": self.lengthscales1.tolist(),
            "b00": self.coreg0[0], "b01": self.coreg0[1], "rho0": self.coreg0[2],
            "b10": self.coreg1[0], "b11": self.coreg1[1], "rho1": self.coreg1[2],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "CMGPHyperparams":
        return cls(
            noise_std=(obj["sigma0"], obj["sigma1"]),
            lengthscales0=np.asarray(obj["ell0"], dtype=float),
            lengthscales1=np.asarray(obj["ell1"], dtype=float),
            coreg0=(obj["b00"], obj["b01"], obj["rho0"]),
            coreg1=(obj["b10"], obj["b11"], obj["rho1"]),
        )

    def save_json(self, path, extra: dict | None = None):
        obj = self.to_json_dict()
        if extra:
            obj["meta"] = extra
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "CMGPHyperparams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class TaskIndexedGram:
    """Symmetric n x n covariance over observed (point, arm) pairs."""

    matrix: np.ndarray
    tasks: np.ndarray
    jitter_used: float = 0.0


def rbf_ard(x, x_prime, lengthscales) -> float:
    """ARD RBF: exp(-0.5 * sum_k (x_k - x'_k)^2 / ell_k^2)."""
    ls = np.asarray(lengthscales, dtype=float)
    if np.any(ls <= 0):
        raise KernelError("length scales must be > 0")
    diff = (np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)) / ls
    return float(np.exp(-0.5 * np.dot(diff, diff)))


def rbf_ard_matrix(X, X_prime, lengthscales) -> np.ndarray:
    """ARD RBF gram between the rows of X (m, d) and X_prime (n, d)."""
    ls = np.asarray(lengthscales, dtype=float)
    if np.any(ls <= 0):
        raise KernelError("length scales must be > 0")
    A = np.atleast_2d(np.asarray(X, dtype=float)) / ls
    B = np.atleast_2d(np.asarray(X_prime, dtype=float)) / ls
    sq = cdist(A, B, "sqeuclidean")
    return np.exp(-0.5 * sq)


def lmc_block(x, x_prime, theta: CMGPHyperparams) -> np.ndarray:
    """2x2 covariance between the output pairs at x and x'."""
    k0 = rbf_ard(x, x_prime, theta.lengthscales0)
    k1 = rbf_ard(x, x_prime, theta.lengthscales1)
    return theta.coreg_matrix(0) * k0 + theta.coreg_matrix(1) * k1


def training_gram(X, W, theta: CMGPHyperparams) -> TaskIndexedGram:
    """Gram over training points, entry (i, j) indexed by the observed arms."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=int)
    K0 = rbf_ard_matrix(X, X, theta.lengthscales0)
    K1 = rbf_ard_matrix(X, X, theta.lengthscales1)
    A0 = theta.coreg_matrix(0)
    A1 = theta.coreg_matrix(1)
    M = A0[np.ix_(W, W)] * K0 + A1[np.ix_(W, W)] * K1
    M = 0.5 * (M + M.T)
    return TaskIndexedGram(matrix=M, tasks=W)


def cross_covariance_batch(X_new, X, W, theta: CMGPHyperparams):
    """Covariance of both outputs at each new point with the training latents.

    Returns (C0, C1), each (m, n): C_t[i, j] = Cov(f_t(x_i), f_{W_j}(X_j)).
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    W = np.asarray(W, dtype=int)
    K0 = rbf_ard_matrix(X_new, X, theta.lengthscales0)
    K1 = rbf_ard_matrix(X_new, X, theta.lengthscales1)
    A0 = theta.coreg_matrix(0)
    A1 = theta.coreg_matrix(1)
    C0 = A0[0, W] * K0 + A1[0, W] * K1
    C1 = A0[1, W] * K0 + A1[1, W] * K1
    return C0, C1


def cross_covariance(x, X, W, theta: CMGPHyperparams) -> np.ndarray:
    """2 x n covariance between (f0(x), f1(x)) and the observed-task latents."""
    C0, C1 = cross_covariance_batch(np.atleast_2d(x), X, W, theta)
    return np.vstack([C0[0], C1[0]])


def validate_or_project(theta: CMGPHyperparams) -> CMGPHyperparams:
    """Clamp each rho_w into the PSD cone of its coregionalization matrix."""
    out = theta
    for w, name in ((0, "coreg0"), (1, "coreg1")):
        b0, b1, rho = getattr(out, name)
        cap = np.sqrt(b0 * b1)
        if rho > cap:
            out = replace(out, **{name: (b0, b1, 0.99 * cap)})
    return out.validate()


def cholesky_with_jitter(matrix: np.ndarray, noise_diag: np.ndarray | None = None):
    """Lower Cholesky factor with an escalating diagonal jitter ladder.

    Jitter starts at JITTER_BASE * trace/n and grows tenfold per retry, up
    to JITTER_MAX_RETRIES retries. Returns (L, jitter_used); raises
    KernelError carrying the minimum-eigenvalue estimate on failure.
    """
    M = np.asarray(matrix, dtype=float)
    n = M.shape[0]
    if noise_diag is not None:
        M = M + np.diag(noise_diag)
    base = JITTER_BASE * np.trace(M) / max(n, 1)
    jitter = 0.0
    for attempt in range(JITTER_MAX_RETRIES + 1):
        try:
            L = np.linalg.cholesky(M + jitter * np.eye(n) if jitter else M)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = base * JITTER_FACTOR ** attempt
    min_eig = float(np.linalg.eigvalsh(M)[0])
    raise KernelError(
        f"covariance not positive definite after jitter ladder "
        f"(max jitter {jitter:.3e}, min eigenvalue {min_eig:.3e})"
    )
