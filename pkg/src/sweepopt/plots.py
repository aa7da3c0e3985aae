"""Figure rendering for the command-line report paths.  All figures go to
files; nothing is shown interactively."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_state_figure(outpath, path, C=None, title="trajectory"):
    """States, controls, and (when the cone is nontrivial) constraint values."""
    t, x, u, a = path
    rows = 3 if (C is not None and C.m) else 2
    fig, axes = plt.subplots(rows, 1, figsize=(7, 2.6 * rows), sharex=True)
    ax = axes[0]
    for c in range(x.shape[1]):
        ax.plot(t, x[:, c], label=f"x{c + 1}")
    ax.set_ylabel("state")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    ax = axes[1]
    for c in range(a.shape[1]):
        ax.plot(t, a[:, c], label=f"a{c + 1}")
    for c in range(u.shape[1]):
        ax.plot(t, u[:, c], "--", label=f"u{c + 1}", alpha=0.6)
    ax.set_ylabel("controls")
    ax.legend(loc="best", fontsize=8)
    if rows == 3:
        ax = axes[2]
        gaps = (C.generators @ (x - u).T).T
        for i in range(gaps.shape[1]):
            ax.plot(t, gaps[:, i], label=f"constraint {i + 1}")
        ax.axhline(0.0, color="k", lw=0.8)
        ax.set_ylabel("constraint value")
        ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(outpath, dpi=140)
    plt.close(fig)


def save_report_figure(outpath, report):
    """Residual-versus-tolerance bars, one per checked condition."""
    items = report.items
    labels = [it.cid for it in items]
    residuals = [max(it.residual, 1e-18) for it in items]
    tols = [it.tol for it in items]
    colors = ["tab:green" if it.passed else "tab:red" for it in items]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    pos = np.arange(len(items))
    ax.bar(pos, residuals, color=colors)
    ax.plot(pos, tols, "k_", markersize=14, label="tolerance")
    ax.set_yscale("log")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("residual")
    ax.set_title("verdict: " + ("pass" if report.verdict else "fail"))
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(outpath, dpi=140)
    plt.close(fig)


def save_crowd_figure(outpath, traj, R, title="corridor motion"):
    """Participant positions and neighbor gaps against the contact distance."""
    t = traj.breakpoints
    x = traj.positions
    fig, axes = plt.subplots(2, 1, figsize=(7, 5.4), sharex=True)
    ax = axes[0]
    for c in range(x.shape[1]):
        ax.plot(t, x[:, c], marker=".", label=f"participant {c + 1}")
    ax.set_ylabel("position")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax = axes[1]
    gaps = np.diff(x, axis=1)
    for i in range(gaps.shape[1]):
        ax.plot(t, gaps[:, i], marker=".", label=f"gap {i + 1}")
    ax.axhline(2.0 * R, color="k", lw=0.8, ls="--", label="contact distance")
    ax.set_ylabel("gap")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(outpath, dpi=140)
    plt.close(fig)
