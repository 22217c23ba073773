"""PNG figures written next to a run's CSV."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _stem(csv_path):
    p = Path(csv_path)
    return p.with_name(p.stem)


def plot_accuracy(evals, path, label=None):
    rounds = [e.round for e in evals]
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].plot(rounds, [e.test_accuracy for e in evals], marker=".", label=label)
    ax[0].set_xlabel("round")
    ax[0].set_ylabel("test accuracy")
    ax[1].plot(rounds, [e.train_loss for e in evals], marker=".", label="train")
    ax[1].plot(rounds, [e.test_loss for e in evals], marker=".", label="test")
    ax[1].set_xlabel("round")
    ax[1].set_ylabel("loss")
    ax[1].legend()
    if label:
        ax[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_comm_error(traces, path):
    """Per-round analytic bias norm and MSE on a log scale."""
    rounds = np.array([t.round for t in traces])
    mse = np.array([t.mse for t in traces])
    bias = np.array([t.bias_norm for t in traces])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    # zeros would vanish on a log axis, so error-free runs get a flat note instead
    if np.any(mse > 0):
        ax.semilogy(rounds, np.where(mse > 0, mse, np.nan), lw=0.6, label="MSE")
        ax.semilogy(rounds, np.where(bias > 0, bias ** 2, np.nan), lw=0.6, label="bias$^2$")
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no communication error", ha="center", transform=ax.transAxes)
    ax.set_xlabel("round")
    ax.set_ylabel("per-round error")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_bound(bound, path, title="convergence bound"):
    """Stacked right-hand-side terms next to the measured left-hand side."""
    names = ["mse_term", "bias_term", "init_term", "gamma_term"]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    bottom = 0.0
    for name in names:
        ax.bar(1, bound[name], bottom=bottom, label=name.replace("_term", ""))
        bottom += bound[name]
    ax.bar(0, bound["lhs"], color="0.3")
    ax.set_xticks([0, 1], ["lhs", "rhs"])
    ax.set_title(title + (" (holds)" if bound["holds"] else " (violated)"))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_figures(result, report, csv_path):
    """Render the standard figures beside ``csv_path``; returns the written paths."""
    stem = _stem(csv_path)
    out = []
    p = Path(f"{stem}_accuracy.png")
    plot_accuracy(result.evals, p, result.config.scheme)
    out.append(p)
    if result.traces:
        p = Path(f"{stem}_comm_error.png")
        plot_comm_error(result.traces, p)
        out.append(p)
    bound = (report or {}).get("theorem1", {})
    if "lhs" in bound:
        p = Path(f"{stem}_bound.png")
        plot_bound(bound, p)
        out.append(p)
    return out
