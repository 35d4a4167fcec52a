"""Figure rendering for fitted models, densities and simulation metrics.

Each function renders one figure to a file next to the delimited output
of the corresponding CLI command.  The non-interactive Agg backend is
forced so the functions work in headless environments.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIG_DPI = 150


def plot_term(x, fit_vals, lower, upper, covariate: str, block: str,
              out_path) -> str:
    """Fitted additive term with its pointwise 95% band."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.fill_between(x, lower, upper, alpha=0.25, color="C0", linewidth=0)
    ax.plot(x, fit_vals, color="C0")
    ax.axhline(0.0, color="0.6", linewidth=0.8, linestyle=":")
    ax.set_xlabel(covariate)
    label = "location" if block == "mu" else "dispersion"
    ax.set_ylabel(f"f({covariate})")
    ax.set_title(f"{label} effect of {covariate}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=_FIG_DPI)
    plt.close(fig)
    return str(out_path)


def plot_density(r, f, S, h, out_path, reference=None) -> str:
    """Estimated error density with survival and hazard side panels."""
    fig, axes = plt.subplots(1, 3, figsize=(10.0, 3.2))
    axes[0].plot(r, f, color="C0", label="estimate")
    if reference is not None:
        axes[0].plot(r, reference, color="C3", linestyle="--", label="reference")
        axes[0].legend(frameon=False)
    axes[0].set_title("density")
    axes[1].plot(r, S, color="C0")
    axes[1].set_title("survival")
    axes[2].plot(r, h, color="C0")
    axes[2].set_yscale("log")
    axes[2].set_title("hazard")
    for ax in axes:
        ax.set_xlabel("standardized residual")
    fig.tight_layout()
    fig.savefig(out_path, dpi=_FIG_DPI)
    plt.close(fig)
    return str(out_path)


def plot_parameter_estimates(frame, out_path) -> str:
    """Boxplots of per-replicate parameter estimates by error model.

    ``frame`` is the long-format table with columns
    (replicate, target, error_model, estimate, truth).
    """
    targets = sorted(frame["target"].unique())
    models = sorted(frame["error_model"].unique())
    fig, axes = plt.subplots(1, len(targets),
                             figsize=(1.6 * len(targets) + 1.0, 3.2),
                             squeeze=False)
    for ax, tgt in zip(axes[0], targets):
        sub = frame[frame["target"] == tgt]
        data = [sub[sub["error_model"] == m]["estimate"].to_numpy() for m in models]
        ax.boxplot(data, tick_labels=models)
        truth = float(sub["truth"].iloc[0])
        ax.axhline(truth, color="C3", linewidth=0.8, linestyle="--")
        ax.set_title(tgt)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_FIG_DPI)
    plt.close(fig)
    return str(out_path)


def plot_metric_bars(metrics_frame, metric: str, out_path) -> str:
    """Grouped bars of one aggregated metric per target and error model."""
    sub = metrics_frame[metrics_frame["metric"] == metric]
    targets = sorted(sub["target"].unique())
    models = sorted(sub["error_model"].unique())
    width = 0.8 / max(len(models), 1)
    fig, ax = plt.subplots(figsize=(1.1 * len(targets) + 2.0, 3.2))
    xs = np.arange(len(targets))
    for i, model in enumerate(models):
        vals = [float(sub[(sub["target"] == t) & (sub["error_model"] == model)]
                      ["value"].iloc[0]) for t in targets]
        ax.bar(xs + (i - (len(models) - 1) / 2.0) * width, vals, width, label=model)
    ax.set_xticks(xs)
    ax.set_xticklabels(targets, rotation=30, ha="right")
    ax.set_ylabel(metric)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_FIG_DPI)
    plt.close(fig)
    return str(out_path)
