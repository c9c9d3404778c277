"""Observational datasets: CSV I/O, synthetic cohorts, selection bias, splits.

The CSV schema is ``id,x1,...,xd,w,y[,f0,f1]`` with a header row, UTF-8,
``.`` decimal separator, rows ordered by id. Lines starting with ``#`` are
treated as comments and skipped on load.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError",
    "ObservationalDataset",
    "SyntheticGroundTruth",
    "SplitSpec",
    "load_csv",
    "save_csv",
    "make_synthetic_covariates",
    "assign_treatments",
    "simulate_potential_outcomes",
    "fit_propensity",
    "biased_subsample",
    "split",
]

OMEGA_LEVELS = np.array([0.0, 0.1, 0.2, 0.3, 0.4])


class DataError(ValueError):
    """Invalid dataset contents or malformed input file."""


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(np.asarray(arr).reshape(-1)))[0])
        raise DataError(f"{name} contains a non-finite value (flat index {bad})")


@dataclass(frozen=True)
class ObservationalDataset:
    """Features X (n, d), binary treatments W (n,), factual outcomes Y (n,)."""

    features: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    ids: np.ndarray | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        w = np.asarray(self.treatments)
        y = np.asarray(self.outcomes, dtype=float)
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("features must be a nonempty n x d matrix")
        if w.shape != (X.shape[0],) or y.shape != (X.shape[0],):
            raise DataError("treatments/outcomes length must match feature rows")
        _check_finite("features", X)
        _check_finite("outcomes", y)
        if not np.all(np.isin(w, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(w, (0, 1)))[0])
            raise DataError(f"treatment at row {bad} is not 0 or 1")
        ids = self.ids
        if ids is None:
            ids = np.arange(X.shape[0])
        else:
            ids = np.asarray(ids, dtype=int)
            if ids.shape != (X.shape[0],):
                raise DataError("ids length must match feature rows")
        names = self.feature_names
        if names is not None and len(names) != X.shape[1]:
            raise DataError("feature_names length must equal d")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "treatments", w.astype(int))
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatments.sum())

    @property
    def has_both_arms(self) -> bool:
        return 0 < self.n_treated < self.n

    def subset(self, idx) -> "ObservationalDataset":
        idx = np.asarray(idx, dtype=int)
        return ObservationalDataset(
            self.features[idx],
            self.treatments[idx],
            self.outcomes[idx],
            ids=self.ids[idx],
            feature_names=self.feature_names,
        )

    def require_both_arms(self):
        if not self.has_both_arms:
            raise DataError("both treatment arms must be nonempty")


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """True response surfaces and effects for a simulated cohort."""

    f0: np.ndarray
    f1: np.ndarray
    true_ite: np.ndarray
    omega_vec: np.ndarray | None = None
    omega_offset: float | None = None
    noise_std: tuple[float, float] | None = None

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=float)
        f1 = np.asarray(self.f1, dtype=float)
        ite = np.asarray(self.true_ite, dtype=float)
        if not (f0.shape == f1.shape == ite.shape):
            raise DataError("ground-truth vectors must share one length")
        if not np.array_equal(ite, f1 - f0):
            raise DataError("true_ite must equal f1 - f0 exactly")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "f1", f1)
        object.__setattr__(self, "true_ite", ite)
        if self.omega_vec is not None:
            object.__setattr__(self, "omega_vec", np.asarray(self.omega_vec, dtype=float))

    def subset(self, idx) -> "SyntheticGroundTruth":
        idx = np.asarray(idx, dtype=int)
        return SyntheticGroundTruth(
            self.f0[idx], self.f1[idx], self.true_ite[idx],
            omega_vec=self.omega_vec, omega_offset=self.omega_offset,
            noise_std=self.noise_std,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test fractions plus the shuffling seed."""

    train_frac: float = 0.6
    valid_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise DataError("all split fractions must be > 0")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise DataError("split fractions must sum to 1")


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(dataset: ObservationalDataset, truth: SyntheticGroundTruth | None,
             path, header_comments: list[str] | None = None) -> None:
    """Write a dataset (and optional ground truth) with 17 significant digits."""
    d = dataset.d
    cols = ["id"] + [f"x{k + 1}" for k in range(d)] + ["w", "y"]
    if truth is not None:
        cols += ["f0", "f1"]
    order = np.argsort(dataset.ids, kind="stable")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_comments or []:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for i in order:
            row = [str(int(dataset.ids[i]))]
            row += [_fmt(v) for v in dataset.features[i]]
            row += [str(int(dataset.treatments[i])), _fmt(dataset.outcomes[i])]
            if truth is not None:
                row += [_fmt(truth.f0[i]), _fmt(truth.f1[i])]
            fh.write(",".join(row) + "\n")


def load_csv(path) -> tuple[ObservationalDataset, SyntheticGroundTruth | None]:
    """Parse a dataset CSV; ground truth is attached iff f0/f1 columns exist."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [(lineno, r) for lineno, r in enumerate(csv.reader(fh), start=1)
                    if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    _, header = rows[0]
    header = [h.strip() for h in header]
    x_cols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    for required in ("w", "y"):
        if required not in header:
            raise DataError(f"{path}: missing required column '{required}'")
    if "id" not in header:
        raise DataError(f"{path}: missing required column 'id'")
    if not x_cols:
        raise DataError(f"{path}: no feature columns x1..xd found")
    expected = [f"x{k + 1}" for k in range(len(x_cols))]
    if sorted(x_cols, key=lambda c: int(c[1:])) != expected:
        raise DataError(f"{path}: feature columns must be contiguous x1..xd")
    has_truth = "f0" in header and "f1" in header
    col = {name: header.index(name) for name in header}

    def cell(r, lineno, name):
        raw = r[col[name]].strip()
        try:
            return float(raw)
        except ValueError:
            raise DataError(
                f"{path}: non-numeric value {raw!r} at row {lineno}, column '{name}'"
            ) from None

    ids, X, w, y, f0, f1 = [], [], [], [], [], []
    for lineno, r in rows[1:]:
        if len(r) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")
        wv = cell(r, lineno, "w")
        if wv not in (0.0, 1.0):
            raise DataError(f"{path}: non-binary treatment w={r[col['w']]} at row {lineno}")
        ids.append(int(cell(r, lineno, "id")))
        X.append([cell(r, lineno, c) for c in expected])
        w.append(int(wv))
        y.append(cell(r, lineno, "y"))
        if has_truth:
            f0.append(cell(r, lineno, "f0"))
            f1.append(cell(r, lineno, "f1"))
    if not ids:
        raise DataError(f"{path}: no data rows")
    dataset = ObservationalDataset(np.array(X), np.array(w), np.array(y), ids=np.array(ids))
    truth = None
    if has_truth:
        f0a, f1a = np.array(f0), np.array(f1)
        truth = SyntheticGroundTruth(f0a, f1a, f1a - f0a)
    return dataset, truth


# ---------------------------------------------------------------------------
# Synthetic cohort generation
# ---------------------------------------------------------------------------

def make_synthetic_covariates(n: int, d: int, seed: int) -> np.ndarray:
    """i.i.d. Uniform[0,1] covariates, reproducible from the seed."""
    if n < 1 or d < 1:
        raise DataError("n and d must be >= 1")
    return np.random.default_rng(seed).random((n, d))


def assign_treatments(features: np.ndarray, n_treated: int, seed: int) -> np.ndarray:
    """Confounded treatment assignment with a fixed treated count.

    A random linear score of the features plus logistic noise is thresholded
    at the order statistic giving exactly ``n_treated`` treated subjects, so
    treatment probability increases with the score (genuine selection bias)
    while the arm sizes stay deterministic.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    n, d = X.shape
    if not 0 < n_treated < n:
        raise DataError("n_treated must leave both arms nonempty")
    rng = np.random.default_rng(seed)
    coef = rng.normal(0.0, 2.0, size=d)
    score = (X - X.mean(axis=0)) @ coef + rng.logistic(0.0, 1.0, size=n)
    threshold_idx = np.argsort(score, kind="stable")[n - n_treated:]
    w = np.zeros(n, dtype=int)
    w[threshold_idx] = 1
    return w


def simulate_potential_outcomes(features: np.ndarray, target_mean_benefit: float,
                           noise_std: tuple[float, float] = (1.0, 1.0),
                           seed: int = 0):
    """Simulate potential outcomes with a fixed cohort-average benefit.

    The untreated surface is exp((x + 1/2)' Omega) with Omega drawn
    per-coordinate from {0, 0.1, 0.2, 0.3, 0.4}; the treated surface is
    Omega' x - omega, with omega chosen so the empirical mean of f1 - f0
    equals ``target_mean_benefit`` exactly.

    Returns ((y0, y1), truth) where y0/y1 are the noisy potential outcomes.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    _check_finite("features", X)
    rng = np.random.default_rng(seed)
    omega_vec = rng.choice(OMEGA_LEVELS, size=X.shape[1])
    exponent = (X + 0.5) @ omega_vec
    if np.any(exponent > 700.0):
        bad = int(np.argmax(exponent))
        raise DataError(f"exponent overflow in untreated surface for subject {bad}")
    f0 = np.exp(exponent)
    lin = X @ omega_vec
    omega_offset = float(np.mean(lin - f0)) - float(target_mean_benefit)
    f1 = lin - omega_offset
    s0, s1 = noise_std
    y0 = f0 + rng.normal(0.0, s0, size=len(f0))
    y1 = f1 + rng.normal(0.0, s1, size=len(f1))
    truth = SyntheticGroundTruth(f0, f1, f1 - f0, omega_vec=omega_vec,
                                 omega_offset=omega_offset, noise_std=(s0, s1))
    return (y0, y1), truth


# ---------------------------------------------------------------------------
# Propensity model and biased subsampling
# ---------------------------------------------------------------------------

def fit_propensity(features: np.ndarray, treatments: np.ndarray,
                   ridge: float = 1e-6, max_iters: int = 100,
                   tol: float = 1e-10) -> np.ndarray:
    """Fitted P(W=1|X) by logistic regression (IRLS, small L2, intercept).

    Features are standardized internally. Under perfect separation IRLS
    stops diverging thanks to the ridge term; if it still fails to converge
    a warning is emitted and the converged-so-far coefficients are used.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    w = np.asarray(treatments, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.column_stack([np.ones(len(X)), (X - mu) / sd])
    beta = np.zeros(Z.shape[1])
    penalty = ridge * np.eye(Z.shape[1])
    penalty[0, 0] = 0.0  # intercept unpenalized
    converged = False
    for _ in range(max_iters):
        eta = np.clip(Z @ beta, -35, 35)
        p = 1.0 / (1.0 + np.exp(-eta))
        s = np.maximum(p * (1.0 - p), 1e-12)
        grad = Z.T @ (w - p) - penalty @ beta
        hess = (Z * s[:, None]).T @ Z + penalty
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta += step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        warnings.warn("propensity logistic regression did not converge; "
                      "using the converged-so-far coefficients", RuntimeWarning)
    eta = np.clip(Z @ beta, -35, 35)
    return 1.0 / (1.0 + np.exp(-eta))


def biased_subsample(dataset: ObservationalDataset, n_remove: int, seed: int,
                     truth: SyntheticGroundTruth | None = None,
                     greedy_prob: float = 0.5):
    """Amplify selection bias by removing control subjects.

    Propensities are fitted once on the full dataset. Each of the
    ``n_remove`` steps removes, with probability ``greedy_prob``, the
    remaining control with the highest fitted propensity (ties broken by
    lowest row index), otherwise a uniformly random remaining control.
    Treated subjects are never removed.

    Returns (dataset, truth) with ``truth`` subset alongside (or None).
    """
    if n_remove < 0:
        raise DataError("n_remove must be >= 0")
    n_controls = dataset.n - dataset.n_treated
    if n_remove >= n_controls:
        raise DataError(f"cannot remove {n_remove} of {n_controls} controls")
    if n_remove == 0:
        return dataset, truth
    p = fit_propensity(dataset.features, dataset.treatments)
    rng = np.random.default_rng(seed)
    control_idx = list(np.flatnonzero(dataset.treatments == 0))
    # sort remaining controls by (-propensity, index): head is always the
    # current "closest to 1" candidate
    control_idx.sort(key=lambda i: (-p[i], i))
    removed = set()
    alive = list(control_idx)
    for _ in range(n_remove):
        if rng.random() < greedy_prob:
            victim = alive.pop(0)
        else:
            victim = alive.pop(rng.integers(len(alive)))
        removed.add(victim)
    keep = np.array([i for i in range(dataset.n) if i not in removed], dtype=int)
    kept = dataset.subset(keep)
    return kept, (truth.subset(keep) if truth is not None else None)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _largest_remainder(m: int, fracs) -> list[int]:
    quotas = [m * f for f in fracs]
    base = [int(np.floor(q)) for q in quotas]
    short = m - sum(base)
    order = np.argsort([base[i] - quotas[i] for i in range(len(fracs))], kind="stable")
    for j in order[:short]:
        base[j] += 1
    return base


def split(dataset: ObservationalDataset, truth: SyntheticGroundTruth | None,
          spec: SplitSpec):
    """Disjoint, exhaustive train/valid/test split, stratified by arm.

    Returns three (dataset, truth) pairs; truth entries are None when no
    ground truth is supplied.
    """
    rng = np.random.default_rng(spec.seed)
    fracs = (spec.train_frac, spec.valid_frac, spec.test_frac)
    parts = [[], [], []]
    for arm in (0, 1):
        arm_idx = np.flatnonzero(dataset.treatments == arm)
        rng.shuffle(arm_idx)
        sizes = _largest_remainder(len(arm_idx), fracs)
        start = 0
        for j, size in enumerate(sizes):
            parts[j].extend(arm_idx[start:start + size])
            start += size
    out = []
    for j in range(3):
        idx = np.sort(np.array(parts[j], dtype=int))
        out.append((dataset.subset(idx), truth.subset(idx) if truth is not None else None))
    train_ds = out[0][0]
    if not train_ds.has_both_arms:
        raise DataError("split left a treatment arm empty in the training set")
    return out[0], out[1], out[2]
