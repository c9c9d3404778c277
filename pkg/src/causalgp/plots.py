"""Figure rendering for the report paths (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_benchmark_figure",
    "save_trace_figure",
    "save_interval_figure",
]


def save_benchmark_figure(report, path):
    """Bar chart of mean sqrt-PEHE per method with standard-error bars."""
    methods = sorted(report.aggregates)
    keys = [("in_sample_sqrt_pehe", "in-sample"), ("out_sample_sqrt_pehe", "out-of-sample")]
    x = np.arange(len(methods))
    width = 0.35
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, (key, label) in enumerate(keys):
        means = [report.aggregates[m][key]["mean"] for m in methods]
        sems = [report.aggregates[m][key]["sem"] for m in methods]
        ax.bar(x + (j - 0.5) * width, means, width, yerr=sems, capsize=4, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(methods)
    ax.set_ylabel(r"$\sqrt{\mathrm{PEHE}}$")
    ax.set_title(f"{len(report.records)} records, seed {report.master_seed}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(trace, path):
    """Objective value and gradient norm along the optimization path."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(trace.iters, trace.r_hat, lw=1.2)
    ax1.set_ylabel("objective")
    ax2.plot(trace.iters, trace.grad_norm, lw=1.2, color="tab:orange")
    ax2.set_ylabel("gradient norm")
    ax2.set_xlabel("iteration")
    ax2.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_interval_figure(t_hat, lo, hi, path, truth=None):
    """Effect estimates with credible bands, sorted by the point estimate."""
    t_hat = np.asarray(t_hat)
    order = np.argsort(t_hat)
    idx = np.arange(len(t_hat))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(idx, np.asarray(lo)[order], np.asarray(hi)[order],
                    alpha=0.3, label="credible band")
    ax.plot(idx, t_hat[order], lw=1.2, label="estimated effect")
    if truth is not None:
        ax.plot(idx, np.asarray(truth)[order], ".", ms=2.5, color="k", label="true effect")
    ax.set_xlabel("subject (sorted by estimate)")
    ax.set_ylabel("treatment effect")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
