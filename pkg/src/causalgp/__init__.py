"""Individualized treatment-effect estimation with two-output Gaussian processes."""

from .data import (
    ObservationalDataset,
    SplitSpec,
    SyntheticGroundTruth,
    biased_subsample,
    load_csv,
    make_synthetic_covariates,
    save_csv,
    simulate_potential_outcomes,
    split,
)
from .kernels import CMGPHyperparams
from .optim import AdamSettings, fit, init_hyperparameters
from .posterior import fit_posterior, predict, predict_batch
from .evaluate import BenchmarkConfig, coverage_eval, pehe, run_benchmark

__all__ = [
    "ObservationalDataset",
    "SplitSpec",
    "SyntheticGroundTruth",
    "biased_subsample",
    "load_csv",
    "make_synthetic_covariates",
    "save_csv",
    "simulate_potential_outcomes",
    "split",
    "CMGPHyperparams",
    "AdamSettings",
    "fit",
    "init_hyperparameters",
    "fit_posterior",
    "predict",
    "predict_batch",
    "BenchmarkConfig",
    "coverage_eval",
    "pehe",
    "run_benchmark",
]

__version__ = "0.1.0"
