"""Figure rendering for run directories.

Every report path that emits a delimited file also renders a PNG next to
it; figures are a convenience view, the CSVs stay canonical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams.update(
    {
        "figure.figsize": (6.0, 4.0),
        "figure.dpi": 130,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
    }
)

METHOD_COLORS = {
    "sds": "tab:red",
    "ism": "tab:orange",
    "ge3d": "tab:blue",
    "ge3d_no_dbc": "tab:cyan",
}


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def training_loss(loss_steps, losses, path: Path):
    fig, ax = plt.subplots()
    ax.plot(loss_steps, losses, lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("training step")
    ax.set_ylabel("noise-prediction loss")
    _save(fig, path)


def run_history(history, path: Path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 5.5), sharex=True)
    ks = [r.k for r in history.records]
    ax1.plot(ks, [r.grad_norm for r in history.records], lw=0.6, color="tab:blue")
    ax1.set_yscale("log")
    ax1.set_ylabel("gradient norm")
    if history.records and len(history.records[0].residual_norms) > 1:
        n = len(history.records[0].residual_norms)
        for i in range(n):
            ax2.plot(
                ks,
                [r.residual_norms[i] for r in history.records],
                lw=0.6,
                alpha=0.8,
                label=f"node {i}",
            )
        ax2.legend(fontsize=7, ncol=3)
    else:
        ax2.plot(ks, [r.residual_norms[0] for r in history.records], lw=0.6)
    ax2.set_yscale("log")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("residual norms")
    _save(fig, path)


def convergence(history, path: Path):
    fig, ax = plt.subplots()
    ax.plot(
        [s.calls for s in history.snapshots],
        [s.sliced_wasserstein for s in history.snapshots],
        marker="o",
        ms=3,
    )
    ax.set_xlabel("denoiser calls")
    ax.set_ylabel("sliced Wasserstein to target")
    _save(fig, path)


def particles(theta, targets, centers, path: Path, radius: float | None = None):
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(targets[:, 0], targets[:, 1], s=4, alpha=0.15, label="target samples")
    ax.scatter(theta[:, 0], theta[:, 1], s=22, color="tab:red", label="particles")
    centers = np.atleast_2d(centers)
    ax.scatter(centers[:, 0], centers[:, 1], marker="x", s=60, color="k", label="modes")
    if radius:
        for c in centers:
            ax.add_patch(plt.Circle(c, radius, fill=False, ls="--", color="k", alpha=0.5))
    ax.set_aspect("equal")
    ax.legend(fontsize=7)
    _save(fig, path)


def weight_schedule(dbc, path: Path, samples: int = 400):
    from ..distill import dbc_weights

    fig, ax = plt.subplots()
    ks = np.unique(np.linspace(0, dbc.K - 1, min(samples, dbc.K)).astype(int))
    ws = np.stack([dbc_weights(int(k), dbc) for k in ks])
    for i in range(dbc.n):
        ax.plot(ks, ws[:, i], label=f"node {i}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("normalized weight")
    ax.legend(fontsize=7, ncol=3)
    _save(fig, path)


def trajectory_pair(pair, path: Path):
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    xs = np.stack([lat.value for lat in pair.noising])
    xt = np.stack([lat.value for lat in pair.denoising])
    ax.plot(xs[:, 0], xs[:, 1], "o-", ms=4, label="noising path")
    ax.plot(xt[:, 0], xt[:, 1], "s--", ms=4, label="denoising path")
    for i, t in enumerate(pair.traj.nodes):
        ax.annotate(str(t), xs[i], fontsize=6, alpha=0.7)
    ax.set_aspect("equal")
    ax.legend(fontsize=7)
    _save(fig, path)


def compare_curves(rows: list[dict], path: Path):
    """rows: method, seed, mark, sw."""
    fig, ax = plt.subplots()
    methods = sorted({r["method"] for r in rows})
    for m in methods:
        marks = sorted({r["mark"] for r in rows if r["method"] == m})
        mean = [
            np.mean([r["sw"] for r in rows if r["method"] == m and r["mark"] == mk])
            for mk in marks
        ]
        ax.plot(marks, mean, marker="o", ms=3, label=m, color=METHOD_COLORS.get(m))
    ax.set_xlabel("denoiser-call budget")
    ax.set_ylabel("sliced Wasserstein to target")
    ax.legend(fontsize=8)
    _save(fig, path)


def ablation_grid(rows: list[dict], path: Path):
    """rows: farthest, steps, gap, seed, sw."""
    fig, ax = plt.subplots()
    for far in sorted({r["farthest"] for r in rows}):
        ns = sorted({r["steps"] for r in rows if r["farthest"] == far})
        mean = [
            np.mean([r["sw"] for r in rows if r["farthest"] == far and r["steps"] == n])
            for n in ns
        ]
        ax.plot(ns, mean, marker="o", label=f"farthest {far}")
    ax.set_xscale("log")
    ax.set_xlabel("trajectory steps")
    ax.set_ylabel("final sliced Wasserstein")
    ax.legend(fontsize=8)
    _save(fig, path)
