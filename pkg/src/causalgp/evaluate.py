"""Effect-error metric, Monte-Carlo benchmark harness, interval calibration.

Replicate seeds derive from the master seed through numpy's SeedSequence
spawn keys (seed r is SeedSequence(master).spawn-key r), so reports are
reproducible regardless of execution order.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import baseline as bl
from .data import (
    ObservationalDataset,
    SplitSpec,
    SyntheticGroundTruth,
    assign_treatments,
    biased_subsample,
    load_csv,
    make_synthetic_covariates,
    simulate_potential_outcomes,
    split,
)
from .kernels import CMGPHyperparams, cholesky_with_jitter, rbf_ard_matrix
from .optim import AdamSettings, fit
from .posterior import fit_posterior, predict_batch

__all__ = [
    "BenchmarkConfig",
    "BenchmarkReport",
    "pehe",
    "run_benchmark",
    "coverage_eval",
]

METHODS = ("cmgp", "naive-gp")


def pehe(estimated_ite, true_ite) -> float:
    """Mean squared error between estimated and true individual effects."""
    est = np.asarray(estimated_ite, dtype=float)
    true = np.asarray(true_ite, dtype=float)
    if est.shape != true.shape or est.ndim != 1 or est.size < 1:
        raise ValueError("estimated and true effects must be equal-length vectors")
    return float(np.mean((est - true) ** 2))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Synthetic-protocol benchmark settings (desk-scale defaults)."""

    n: int = 1006
    d: int = 14
    n_treated: int = 232
    n_remove: int = 200
    target_mean_benefit: float = 5.0
    noise_std: tuple[float, float] = (1.0, 1.0)
    replicates: int = 30
    train_frac: float = 0.6
    valid_frac: float = 0.2
    test_frac: float = 0.2
    gamma: float = 0.95
    methods: tuple[str, ...] = METHODS
    cmgp_max_iters: int = 100
    baseline_max_iters: int = 100
    learning_rate: float = 0.05
    realization_files: tuple[str, ...] = ()
    oracle_inject: bool = False  # test hook: report the true effects as estimates

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        unknown = set(self.methods) - set(METHODS) - {"oracle"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, obj: dict) -> "BenchmarkConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown benchmark config keys: {sorted(unknown)}")
        obj = dict(obj)
        for key in ("noise_std", "methods", "realization_files"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchmarkReport:
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    paired: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    master_seed: int = 0
    # optimizer traces per (replicate, method); kept for diagnostics only,
    # never serialized
    traces: dict = field(default_factory=dict, repr=False)

    def finalize(self):
        """Recompute aggregates and paired contrasts from the raw records."""
        self.aggregates = {}
        by_method: dict[str, list[dict]] = {}
        for rec in self.records:
            by_method.setdefault(rec["method"], []).append(rec)
        for method, recs in by_method.items():
            agg = {}
            for key in ("in_sample_sqrt_pehe", "out_sample_sqrt_pehe"):
                vals = np.array([r[key] for r in recs])
                agg[key] = {
                    "mean": float(vals.mean()),
                    "sem": float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                    "n": len(vals),
                }
            self.aggregates[method] = agg
        self.paired = {}
        if {"cmgp", "naive-gp"} <= set(by_method):
            base = {r["seed"]: r for r in by_method["naive-gp"]}
            for key, label in (("in_sample_sqrt_pehe", "in_sample"),
                               ("out_sample_sqrt_pehe", "out_sample")):
                diffs = np.array([base[r["seed"]][key] - r[key]
                                  for r in by_method["cmgp"] if r["seed"] in base])
                if diffs.size:
                    sem = float(diffs.std(ddof=1) / np.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
                    self.paired[label] = {
                        "mean_diff": float(diffs.mean()),
                        "sem_diff": sem,
                        "n": len(diffs),
                    }
        return self

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "master_seed": self.master_seed,
            "aggregates": self.aggregates,
            "paired_naive_minus_cmgp": self.paired,
            "n_records": len(self.records),
            "n_failures": len(self.failures),
            "failures": self.failures,
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_records_csv(self, path):
        cols = ["seed", "method", "in_sample_sqrt_pehe", "out_sample_sqrt_pehe",
                "fit_seconds"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# config: {json.dumps(self.config, sort_keys=True)}\n")
            fh.write(f"# master_seed: {self.master_seed}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for rec in self.records:
                writer.writerow([rec[c] for c in cols])


def _replicate_seeds(master_seed: int, r: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(r,))
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def make_replicate_dataset(config: BenchmarkConfig, master_seed: int, r: int):
    """One synthetic (or file-backed) cohort for replicate r."""
    seeds = _replicate_seeds(master_seed, r, 5)
    if config.realization_files:
        path = config.realization_files[r % len(config.realization_files)]
        dataset, truth = load_csv(path)
        if truth is None:
            raise ValueError(f"{path}: realization file lacks f0/f1 ground truth")
        return dataset, truth, seeds[4]
    X = make_synthetic_covariates(config.n, config.d, seeds[0])
    w = assign_treatments(X, config.n_treated, seeds[1])
    (y0, y1), truth = simulate_potential_outcomes(
        X, config.target_mean_benefit, config.noise_std, seeds[2])
    y = np.where(w == 1, y1, y0)
    dataset = ObservationalDataset(X, w, y)
    dataset, truth = biased_subsample(dataset, config.n_remove, seeds[3], truth)
    return dataset, truth, seeds[4]


def _run_method(method, train_ds, train_truth, test_ds, test_truth, config):
    t0 = time.perf_counter()
    trace = None
    if method == "oracle":
        est_in = train_truth.true_ite
        est_out = test_truth.true_ite
    elif method == "cmgp":
        settings = AdamSettings(learning_rate=config.learning_rate,
                                max_iters=config.cmgp_max_iters)
        theta, trace = fit(train_ds, settings)
        model = fit_posterior(train_ds, theta)
        est_in = predict_batch(model, train_ds.features, config.gamma)["t_hat"]
        est_out = predict_batch(model, test_ds.features, config.gamma)["t_hat"]
    elif method == "naive-gp":
        settings = AdamSettings(learning_rate=config.learning_rate,
                                max_iters=config.baseline_max_iters)
        pair, _ = bl.fit_naive_gp(train_ds, settings)
        est_in = bl.predict_naive_ite(pair, train_ds.features)
        est_out = bl.predict_naive_ite(pair, test_ds.features)
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0
    return {
        "in_sample_sqrt_pehe": float(np.sqrt(pehe(est_in, train_truth.true_ite))),
        "out_sample_sqrt_pehe": float(np.sqrt(pehe(est_out, test_truth.true_ite))),
        "fit_seconds": elapsed,
    }, trace


def run_benchmark(config: BenchmarkConfig, seed: int,
                  progress=None) -> BenchmarkReport:
    """Monte-Carlo comparison of the methods on fresh cohorts.

    Per replicate: simulate (or load) a cohort, apply the selection-bias
    subsampling, split 60/20/20 stratified by arm, fit each method on the
    training split only, and score sqrt-PEHE on train (in-sample) and test
    (out-of-sample). Failed fits are recorded and skipped.
    """
    methods = list(config.methods)
    if config.oracle_inject and "oracle" not in methods:
        methods = ["oracle"]
    report = BenchmarkReport(config=config.to_dict(), master_seed=seed)
    n_reps = (len(config.realization_files) if config.realization_files
              else config.replicates)
    for r in range(n_reps):
        dataset, truth, split_seed = make_replicate_dataset(config, seed, r)
        spec = SplitSpec(config.train_frac, config.valid_frac,
                         config.test_frac, seed=split_seed)
        (train_ds, train_truth), _, (test_ds, test_truth) = split(dataset, truth, spec)
        for method in methods:
            try:
                res, trace = _run_method(method, train_ds, train_truth,
                                         test_ds, test_truth, config)
            except Exception as exc:  # noqa: BLE001 - per-replicate isolation
                report.failures.append({"seed": r, "method": method,
                                        "error": f"{type(exc).__name__}: {exc}"})
                continue
            report.records.append({"seed": r, "method": method, **res})
            if trace is not None:
                report.traces[(r, method)] = trace
        if progress is not None:
            progress(r + 1, n_reps)
    return report.finalize()


def _sample_joint_outputs(X, theta: CMGPHyperparams, rng) -> np.ndarray:
    """One draw of (f0, f1) at all rows of X from the two-output prior."""
    n = X.shape[0]
    K0 = rbf_ard_matrix(X, X, theta.lengthscales0)
    K1 = rbf_ard_matrix(X, X, theta.lengthscales1)
    A0 = theta.coreg_matrix(0)
    A1 = theta.coreg_matrix(1)
    K_full = np.kron(A0, K0) + np.kron(A1, K1)  # tasks-major 2n x 2n
    L, _ = cholesky_with_jitter(K_full, np.full(2 * n, 1e-10))
    f = L @ rng.standard_normal(2 * n)
    return f.reshape(2, n)  # rows: task 0, task 1


def coverage_eval(theta_true: CMGPHyperparams, n_train: int, n_test: int,
                  d: int, gamma: float, replicates: int, seed: int) -> float:
    """Empirical interval coverage under a correctly specified model.

    Each replicate samples the two output surfaces jointly from the prior at
    train+test points, assigns treatments by a logistic rule, reveals only
    the noisy factual training outcomes, conditions at the TRUE
    hyperparameters, and checks whether the true effect at each test point
    falls in the coverage-gamma interval. Returns the pooled fraction.
    """
    theta_true.validate()
    hits = 0
    total = 0
    for r in range(replicates):
        rng = np.random.default_rng(_replicate_seeds(seed, r, 1)[0])
        X = rng.random((n_train + n_test, d))
        f = _sample_joint_outputs(X, theta_true, rng)
        coef = rng.normal(0.0, 2.0, size=d)
        logits = (X[:n_train] - 0.5) @ coef
        w = (rng.random(n_train) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
        if w.sum() == 0:
            w[int(rng.integers(n_train))] = 1
        elif w.sum() == n_train:
            w[int(rng.integers(n_train))] = 0
        s0, s1 = theta_true.noise_std
        noise = rng.normal(0.0, 1.0, size=n_train) * np.where(w == 0, s0, s1)
        y = f[w, np.arange(n_train)] + noise
        dataset = ObservationalDataset(X[:n_train], w, y)
        model = fit_posterior(dataset, theta_true)
        out = predict_batch(model, X[n_train:], gamma)
        true_effect = f[1, n_train:] - f[0, n_train:]
        hits += int(np.sum((true_effect >= out["lo"]) & (true_effect <= out["hi"])))
        total += n_test
    return hits / total
