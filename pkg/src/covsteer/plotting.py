"""Matplotlib figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

FIG_DPI = 120


def _rc():
    matplotlib.rcParams.update({
        "axes.grid": True,
        "grid.alpha": 0.4,
        "grid.linestyle": "--",
        "legend.frameon": True,
        "font.size": 10,
    })


def _ellipse(mu, Sigma, nsig=2.0, **kw) -> Ellipse:
    S = np.asarray(Sigma)[:2, :2]
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    w = np.clip(w, 0.0, None)
    angle = np.degrees(np.arctan2(V[1, 1], V[0, 1]))
    return Ellipse(mu[:2], 2 * nsig * np.sqrt(w[1]), 2 * nsig * np.sqrt(w[0]), angle=angle, **kw)


def draw_ellipses(ax, mu, Sigma, desired_mu, desired_Sigma, stride: int = 1):
    """2-sigma ellipses of the first two state coordinates along the horizon."""
    N = mu.shape[0] - 1
    for k in range(0, N + 1, stride):
        ax.add_patch(_ellipse(mu[k], Sigma[k], fill=False, lw=0.6, color="0.55"))
    ax.add_patch(_ellipse(mu[0], Sigma[0], fill=False, lw=1.6, color="c", label="initial"))
    ax.add_patch(_ellipse(mu[N], Sigma[N], fill=False, lw=1.6, color="g", label="terminal"))
    ax.add_patch(
        _ellipse(desired_mu, desired_Sigma, fill=False, lw=1.6, ls="--", color="r", label="desired")
    )
    ax.plot(mu[:, 0], mu[:, 1], "k-", lw=0.8)
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    ax.set_aspect("equal", adjustable="datalim")
    ax.autoscale_view()


def plot_trajectory(path, mu, Sigma, desired_mu, desired_Sigma, title: str = "") -> Path:
    _rc()
    fig, ax = plt.subplots(figsize=(5, 5))
    draw_ellipses(ax, mu, Sigma, desired_mu, desired_Sigma, stride=max(1, (mu.shape[0] - 1) // 30))
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return Path(path)


def plot_sweep(path, results, desired_mu, desired_Sigma) -> Path:
    """One ellipse panel per weight plus terminal distance against weight."""
    _rc()
    k = len(results)
    fig, axes = plt.subplots(1, k + 1, figsize=(4 * (k + 1), 4))
    for ax, (lam, mu, Sigma, _) in zip(axes[:-1], results):
        draw_ellipses(ax, mu, Sigma, desired_mu, desired_Sigma, stride=max(1, (mu.shape[0] - 1) // 30))
        ax.set_title(f"$\\lambda$ = {lam:g}")
    axes[0].legend(loc="best", fontsize=8)
    lams = [r[0] for r in results]
    w2 = [r[3] for r in results]
    axes[-1].loglog(lams, np.maximum(w2, 1e-16), "o-")
    axes[-1].set_xlabel("$\\lambda$")
    axes[-1].set_ylabel("terminal $W_2^2$")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return Path(path)


def plot_compare(path, table) -> Path:
    _rc()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    names = [r["method"] for r in table]
    a1.bar(names, [r["J"] for r in table], color=["tab:blue", "tab:orange", "tab:green"][: len(names)])
    a1.set_ylabel("objective")
    lo = min(r["J"] for r in table)
    hi = max(r["J"] for r in table)
    a1.set_ylim(lo - 0.05 * (hi - lo + abs(lo) * 1e-3), hi + 0.05 * (hi - lo + abs(hi) * 1e-3))
    a2.bar(names, [r["time_ms"] for r in table], color="0.5")
    a2.set_ylabel("time (ms)")
    a2.set_yscale("log")
    for ax in (a1, a2):
        ax.tick_params(axis="x", labelrotation=15)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return Path(path)


def plot_bench(path, horizons, times_ms, slope, intercept) -> Path:
    _rc()
    fig, ax = plt.subplots(figsize=(5, 4))
    h = np.asarray(horizons, dtype=float)
    ax.loglog(h, times_ms, "o", label="median solve time")
    ax.loglog(h, np.exp(intercept) * h**slope, "-", label=f"fit, slope {slope:.2f}")
    ax.loglog(h, times_ms[0] * (h / h[0]) ** 3, ":", color="0.4", label="cubic reference")
    ax.set_xlabel("horizon N")
    ax.set_ylabel("time (ms)")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return Path(path)


def plot_rollouts(path, sample_mean, sample_cov, mu, Sigma, desired_mu, desired_Sigma) -> Path:
    _rc()
    fig, ax = plt.subplots(figsize=(5, 5))
    draw_ellipses(ax, mu, Sigma, desired_mu, desired_Sigma, stride=max(1, (mu.shape[0] - 1) // 30))
    N = mu.shape[0] - 1
    ax.add_patch(_ellipse(sample_mean[N], sample_cov[N], fill=False, lw=1.2, ls=":", color="m",
                          label="sample terminal"))
    ax.plot(sample_mean[:, 0], sample_mean[:, 1], "m:", lw=0.8)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return Path(path)
