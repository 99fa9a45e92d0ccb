"""Figures written next to the CSV/JSON reports (PNG, non-interactive backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .closedloop import ClosedLoopLog  # noqa: E402
from .geometry import Polytope  # noqa: E402


def _save(fig, path):
    tmp = f"{path}.tmp.png"
    fig.savefig(tmp, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)


def _polygon(ax, P: Polytope, **kw):
    V = P.vertices()
    c = V.mean(axis=0)
    order = np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))
    V = V[order]
    ax.fill(V[:, 0], V[:, 1], **kw)


def plot_sets(omega: Polytope, W: Polytope, z_bar: Polytope, path: str):
    """Omega against W (state space) and the tightened set's state projection."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    n = omega.dim
    if n == 1:
        for ax, sets in ((axes[0], ((omega, "Omega"), (W, "W"))),):
            for k, (P, label) in enumerate(sets):
                ax.plot([P.lo[0], P.hi[0]], [k, k], lw=6, label=label)
            ax.set_yticks([])
        lo, hi = z_bar.bounding_box()
        axes[1].plot([lo[0], hi[0]], [0, 0], lw=6, label="tightened state range")
        axes[1].set_yticks([])
    elif n == 2:
        _polygon(axes[0], omega, alpha=0.4, label="Omega")
        _polygon(axes[0], W, alpha=0.6, label="W")
        lo, hi = z_bar.bounding_box()
        axes[1].add_patch(plt.Rectangle((lo[0], lo[1]), hi[0] - lo[0], hi[1] - lo[1], alpha=0.3,
                                        label="tightened state box"))
        axes[1].set_xlim(lo[0] - 0.5, hi[0] + 0.5)
        axes[1].set_ylim(lo[1] - 0.5, hi[1] + 0.5)
    else:
        axes[0].text(0.5, 0.5, f"dimension {n}: no set plot", ha="center")
    for ax in axes:
        ax.legend(loc="best", fontsize=8)
    axes[0].set_title("error tube")
    axes[1].set_title("tightened constraints")
    _save(fig, path)


def plot_closed_loop(log: ClosedLoopLog, omega: Polytope, zs, path: str):
    """Real and nominal states with the tube band, and the applied input."""
    n = log.x.shape[1]
    fig, axes = plt.subplots(n + 1, 1, figsize=(8, 2.4 * (n + 1)), sharex=True)
    t = np.arange(len(log.x))
    lo, hi = omega.bounding_box()
    for i in range(n):
        ax = axes[i]
        ax.fill_between(t, log.z0[:, i] + lo[i], log.z0[:, i] + hi[i], alpha=0.25, label="tube")
        ax.plot(t, log.z0[:, i], label="nominal")
        ax.plot(t, log.x[:, i], ".", ms=3, label="real")
        ax.axhline(zs[i], ls="--", lw=0.8, color="k")
        ax.set_ylabel(f"state {i}")
        ax.legend(loc="best", fontsize=8)
    axes[-1].step(t, log.u, where="post")
    axes[-1].set_ylabel("input")
    axes[-1].set_xlabel("step")
    _save(fig, path)


def plot_curves(name: str, verdict: dict, path: str):
    """Gap curves versus horizon, one line per T (or per eps)."""
    curves = verdict.get("curves") or {}
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, curve in sorted(curves.items()):
        if not curve:
            continue
        Ns = sorted(int(k) for k in curve)
        ax.plot(Ns, [curve[k] if k in curve else curve[str(k)] for k in Ns], "o-", label=str(key))
    ax.set_xlabel("horizon N")
    ax.set_ylabel("measured gap" if name != "turnpike" else "cardinality")
    ax.set_title(f"{name}: {'pass' if verdict.get('passed') else 'fail'}")
    if curves:
        ax.legend(loc="best", fontsize=8)
    _save(fig, path)
