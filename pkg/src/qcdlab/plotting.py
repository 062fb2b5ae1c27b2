"""Figures written next to the CSV/JSON artifacts.  Uses the Agg backend only."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings in the PNG metadata
_META = {"Software": None}


def _figure(width=6.0):
    fig, ax = plt.subplots(figsize=(width, width * (math.sqrt(5) - 1) / 2))
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_path(t, x, path, T=None):
    """Most likely path to level 1, in units of the threshold."""
    fig, ax = _figure()
    ax.plot(t, x, marker="o", lw=1.5)
    if T is not None:
        ax.axvline(T, ls=":", color="0.5", lw=1)
    ax.set_xlabel("time / H")
    ax.set_ylabel("statistic / H")
    return _save(fig, path)


def plot_sweep(rows, summaries, path):
    """J(H) curves per kappa with the empirical minimiser and log(kappa)/theta_plus."""
    fig, ax = _figure()
    kappas = sorted({r.kappa for r in rows})
    for i, k in enumerate(kappas):
        pts = [r for r in rows if r.kappa == k]
        H = np.array([r.H for r in pts])
        J = np.array([r.J_hat for r in pts])
        se = np.array([r.J_stderr for r in pts])
        color = f"C{i % 10}"
        ax.plot(H, J, color=color, lw=1.2, label=f"kappa={k:g}")
        if se.any():
            ax.fill_between(H, J - 2 * se, J + 2 * se, color=color, alpha=0.2, lw=0)
        s = next(s for s in summaries if s.kappa == k)
        ax.plot([s.H_hat], [s.J_hat], marker="o", color=color)
        if s.H_inf > 0:
            ax.axvline(s.H_inf, color=color, ls=":", lw=1)
    ax.set_xlabel("threshold H")
    ax.set_ylabel("cost J")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_survival(n, survival, lam, path):
    """P{tau_a >= n} on a log scale against the geometric rate lam^n."""
    fig, ax = _figure()
    ax.semilogy(n, survival, lw=1.5, label="exact")
    ref = survival[-1] * lam ** (np.asarray(n) - n[-1])
    ax.semilogy(n, ref, ls="--", lw=1, label="geometric rate")
    ax.set_xlabel("n")
    ax.set_ylabel("P{tau_a >= n}")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_eagerness(curve, path, n=200):
    """G(s) with its minimiser s* and kink s0."""
    s = np.linspace(0.2 * curve.s_star, 3 * curve.s0, n)
    G = curve.G(s)
    fig, ax = _figure()
    ax.plot(s, G, lw=1.5)
    ax.axvline(curve.s_star, ls=":", color="C1", lw=1, label="s*")
    ax.axvline(curve.s0, ls=":", color="C2", lw=1, label="s0")
    ax.axhline(curve.theta_plus, ls="--", color="0.5", lw=1)
    finite = np.isfinite(G)
    if finite.any():
        top = np.percentile(G[finite], 90)
        ax.set_ylim(min(G[finite].min(), curve.theta_plus) * 0.9, top)
    ax.set_xlabel("s")
    ax.set_ylabel("G(s)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
