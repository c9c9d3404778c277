"""Command-line entry point.

Subcommands: simulate, fit, benchmark, gradcheck, coverage. Every command
is deterministic given config + seed; outputs land under --out-dir with
fixed names and embed the config snapshot and seed. Exit codes: 0 success,
2 validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import plots
from .data import (
    DataError,
    ObservationalDataset,
    assign_treatments,
    biased_subsample,
    load_csv,
    make_synthetic_covariates,
    save_csv,
    simulate_potential_outcomes,
)
from .kernels import CMGPHyperparams, KernelError
from .objective import FD_STEP, evaluate_objective, gradient_log_space
from .optim import AdamSettings, fit, init_hyperparameters
from .posterior import fit_posterior, predict_batch

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class ValidationError(ValueError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    return obj


def _merged_config(args, keys) -> dict:
    """Config file values overridden by explicitly passed CLI flags."""
    config = _load_config(getattr(args, "config", None))
    unknown = set(config) - set(keys)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            config[key] = flag
    return config


def _write_csv(path, header, rows, meta: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config: {json.dumps(meta, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt17(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

SIMULATE_KEYS = ("n", "d", "n_treated", "n_remove", "target_mean_benefit", "seed")


def cmd_simulate(args) -> int:
    cfg = _merged_config(args, SIMULATE_KEYS)
    cfg = {"n": 1006, "d": 14, "n_treated": 232, "n_remove": 200,
           "target_mean_benefit": 5.0, "seed": 7, **cfg}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in np.random.SeedSequence(cfg["seed"]).generate_state(4)]
    X = make_synthetic_covariates(cfg["n"], cfg["d"], seeds[0])
    w = assign_treatments(X, cfg["n_treated"], seeds[1])
    (y0, y1), truth = simulate_potential_outcomes(X, cfg["target_mean_benefit"],
                                             seed=seeds[2])
    y = np.where(w == 1, y1, y0)
    dataset = ObservationalDataset(X, w, y)
    dataset, truth = biased_subsample(dataset, cfg["n_remove"], seeds[3], truth)
    save_csv(dataset, truth, out_dir / "dataset.csv",
             header_comments=[f"config: {json.dumps(cfg, sort_keys=True)}"])
    print(f"wrote {out_dir / 'dataset.csv'} "
          f"({dataset.n} rows, {dataset.n_treated} treated)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

FIT_KEYS = ("gamma", "seed", "max_iters", "learning_rate")


def cmd_fit(args) -> int:
    cfg = _merged_config(args, FIT_KEYS)
    cfg = {"gamma": 0.95, "seed": 0, "max_iters": 500, "learning_rate": 0.01, **cfg}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, _ = load_csv(args.data)
    dataset.require_both_arms()
    meta = {**cfg, "data": str(args.data)}

    if args.no_optimize:
        if not args.theta:
            raise ValidationError("--no-optimize requires --theta")
        theta = CMGPHyperparams.load_json(args.theta).validate()
        trace_rows = []
    else:
        settings = AdamSettings(learning_rate=cfg["learning_rate"],
                                max_iters=cfg["max_iters"])
        theta0 = (CMGPHyperparams.load_json(args.theta).validate()
                  if args.theta else None)
        theta, trace = fit(dataset, settings, theta0)
        trace_rows = trace.rows()

    theta.save_json(out_dir / "theta.json", extra=meta)
    _write_csv(out_dir / "trace.csv", ["iter", "r_hat", "q", "grad_norm"],
               [[it, _fmt17(r), _fmt17(q), _fmt17(g)] for it, r, q, g in trace_rows],
               meta)

    model = fit_posterior(dataset, theta)

    def prediction_rows(ids, X):
        out = predict_batch(model, X, cfg["gamma"])
        return [[int(i)] + [_fmt17(out[k][j]) for k in
                            ("t_hat", "f0_hat", "f1_hat", "var_t", "lo", "hi")]
                for j, i in enumerate(ids)], out

    header = ["id", "t_hat", "f0_hat", "f1_hat", "var_t", "lo", "hi"]
    rows, out = prediction_rows(dataset.ids, dataset.features)
    _write_csv(out_dir / "predictions.csv", header, rows, meta)
    plots.save_interval_figure(out["t_hat"], out["lo"], out["hi"],
                               out_dir / "predictions.png")
    if trace_rows:
        class _T:  # lightweight trace view for plotting
            iters = [r[0] for r in trace_rows]
            r_hat = [r[1] for r in trace_rows]
            grad_norm = [r[3] for r in trace_rows]
        plots.save_trace_figure(_T, out_dir / "trace.png")
    if args.predict:
        extra, _ = load_csv(args.predict)
        rows, _ = prediction_rows(extra.ids, extra.features)
        _write_csv(out_dir / "predictions_extra.csv", header, rows, meta)
    print(f"wrote theta.json, trace.csv, predictions.csv under {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    config_obj = _load_config(getattr(args, "config", None))
    for flag in ("replicates",):
        if getattr(args, flag, None) is not None:
            config_obj[flag] = getattr(args, flag)
    if getattr(args, "gamma", None) is not None:
        config_obj["gamma"] = args.gamma
    try:
        config = ev.BenchmarkConfig.from_dict(config_obj)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    seed = args.seed if args.seed is not None else 0
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        print(f"replicate {done}/{total}", flush=True)

    report = ev.run_benchmark(config, seed, progress=progress)
    report.save_json(out_dir / "report.json")
    report.save_records_csv(out_dir / "records.csv")
    plots.save_benchmark_figure(report, out_dir / "benchmark.png")
    if args.plot_data:
        _emit_plot_data(config, seed, out_dir / "plot_data.csv")
    for method, agg in sorted(report.aggregates.items()):
        print(f"{method}: in-sample {agg['in_sample_sqrt_pehe']['mean']:.3f} "
              f"+/- {agg['in_sample_sqrt_pehe']['sem']:.3f}, "
              f"out-of-sample {agg['out_sample_sqrt_pehe']['mean']:.3f} "
              f"+/- {agg['out_sample_sqrt_pehe']['sem']:.3f}")
    if report.failures:
        print(f"{len(report.failures)} replicate fits failed")
    return EXIT_OK


def _emit_plot_data(config: ev.BenchmarkConfig, seed: int, path):
    """Per-point truth/estimate/interval CSV from the first replicate."""
    from .data import SplitSpec, split

    dataset, truth, split_seed = ev.make_replicate_dataset(config, seed, 0)
    spec = SplitSpec(config.train_frac, config.valid_frac, config.test_frac,
                     seed=split_seed)
    (train_ds, _), _, (test_ds, test_truth) = split(dataset, truth, spec)
    settings = AdamSettings(learning_rate=config.learning_rate,
                            max_iters=config.cmgp_max_iters)
    theta, _ = fit(train_ds, settings)
    model = fit_posterior(train_ds, theta)
    out = predict_batch(model, test_ds.features, config.gamma)
    rows = [[_fmt17(test_truth.true_ite[j]), _fmt17(out["t_hat"][j]),
             _fmt17(out["lo"][j]), _fmt17(out["hi"][j])]
            for j in range(test_ds.n)]
    _write_csv(path, ["truth", "estimate", "lo", "hi"],
               rows, {**config.to_dict(), "seed": seed})


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

GRADCHECK_REL_TOL = 1e-3
GRADCHECK_ABS_FLOOR = 1e-6


def _gradcheck_pairs(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    w = (rng.random(n) < 0.5).astype(int)
    if w.sum() == 0:
        w[0] = 1
    if w.sum() == n:
        w[0] = 0
    y = rng.normal(0.0, 2.0, size=n)
    dataset = ObservationalDataset(X, w, y)
    theta = init_hyperparameters(dataset)
    return dataset, theta


def cmd_gradcheck(args) -> int:
    cfg = _merged_config(args, ("n", "d", "seed"))
    cfg = {"n": 20, "d": 3, "seed": 0, **cfg}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, theta = _gradcheck_pairs(cfg["n"], cfg["d"], cfg["seed"])
    impl = gradient_log_space(dataset, theta)
    if args.corrupt:
        impl = impl + 1.0  # negative-control fixture
    # independent central-difference oracle at a distinct step
    oracle = _fd_oracle(dataset, theta, step=3 * FD_STEP)
    names = CMGPHyperparams.full_param_names(cfg["d"])
    rows, ok = [], True
    for j, name in enumerate(names):
        denom = max(abs(oracle[j]), GRADCHECK_ABS_FLOOR / GRADCHECK_REL_TOL)
        rel = abs(impl[j] - oracle[j]) / denom
        good = rel <= GRADCHECK_REL_TOL
        ok &= good
        rows.append([name, _fmt17(impl[j]), _fmt17(oracle[j]), _fmt17(rel),
                     "ok" if good else "FAIL"])
    _write_csv(out_dir / "gradcheck.csv",
               ["component", "gradient", "fd_oracle", "rel_err", "status"],
               rows, cfg)
    worst = max(float(r[3]) for r in rows)
    print(f"gradcheck: {len(rows)} components, max rel err {worst:.2e}, "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _fd_oracle(dataset, theta, step):
    """Plain-loop central differences, independent of gradient_log_space."""
    d = dataset.d
    base = np.log(theta.to_vector())
    grads = []
    for j in range(len(base)):
        up, dn = base.copy(), base.copy()
        up[j] += step
        dn[j] -= step
        r_up = evaluate_objective(dataset, CMGPHyperparams.from_vector(np.exp(up), d)).r_hat
        r_dn = evaluate_objective(dataset, CMGPHyperparams.from_vector(np.exp(dn), d)).r_hat
        grads.append((r_up - r_dn) / (2 * step))
    return CMGPHyperparams.unique_to_full(np.array(grads), d)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def cmd_coverage(args) -> int:
    cfg = _merged_config(args, ("gamma", "replicates", "n_train", "n_test",
                                "d", "seed"))
    cfg = {"gamma": 0.9, "replicates": 50, "n_train": 100, "n_test": 50,
           "d": 2, "seed": 0, **cfg}
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    theta = _default_true_theta(cfg["d"])
    cov = ev.coverage_eval(theta, cfg["n_train"], cfg["n_test"], cfg["d"],
                           cfg["gamma"], cfg["replicates"], cfg["seed"])
    with open(out_dir / "coverage.json", "w", encoding="utf-8") as fh:
        json.dump({"config": cfg, "coverage": cov}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"empirical coverage at gamma={cfg['gamma']}: {cov:.4f}")
    return EXIT_OK


def _default_true_theta(d: int) -> CMGPHyperparams:
    return CMGPHyperparams(
        noise_std=(0.3, 0.3),
        lengthscales0=np.full(d, 0.6),
        lengthscales1=np.full(d, 0.8),
        coreg0=(1.0, 0.8, 0.4),
        coreg1=(0.7, 1.0, 0.3),
    )


# ---------------------------------------------------------------------------
# parser / main
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalgp",
        description="Individualized treatment-effect estimation with a "
                    "two-output GP and risk-based hyperparameter selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="out")

    p = sub.add_parser("simulate", help="write a synthetic biased cohort CSV")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n-treated", dest="n_treated", type=int, default=None)
    p.add_argument("--n-remove", dest="n_remove", type=int, default=None)
    p.add_argument("--benefit", dest="target_mean_benefit", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="tune, condition, and emit predictions")
    common(p)
    p.add_argument("--data", required=True, help="input dataset CSV")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--theta", help="hyperparameter JSON (start or fixed point)")
    p.add_argument("--no-optimize", action="store_true",
                   help="skip tuning; requires --theta")
    p.add_argument("--predict", help="extra CSV of points to predict")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("benchmark", help="Monte-Carlo method comparison")
    common(p)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--plot-data", action="store_true",
                   help="emit per-point truth/estimate/interval CSV")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="gradient vs finite-difference table")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("coverage", help="credible-interval calibration check")
    common(p)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--n-train", dest="n_train", type=int, default=None)
    p.add_argument("--n-test", dest="n_test", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.set_defaults(func=cmd_coverage)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DataError, KernelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
