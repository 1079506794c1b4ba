"""Matplotlib renderings of the report CSVs, written next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_sweep_figure", "save_compare_figure", "save_risk_gap_figure"]

_METHOD_STYLE = {
    "learn2help_joint": dict(color="tab:blue", marker="o"),
    "learn2help_rejector_only": dict(color="tab:cyan", marker="s"),
    "confidence_sigmoid": dict(color="tab:orange", marker="^"),
    "confidence_distance": dict(color="tab:red", marker="v"),
    "random": dict(color="tab:gray", marker="x"),
}


def save_sweep_figure(points, client_acc: float, expert_acc: float, path) -> None:
    """Accuracy and coverage against the deferral cost, with the two
    single-model accuracies as dotted reference lines."""
    ce = [p.knob for p in points]
    acc = [p.accuracy for p in points]
    cov = [p.coverage for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ce, acc, "o-", color="tab:blue", label="system accuracy")
    ax.axhline(client_acc, ls=":", color="tab:green", label="client only")
    ax.axhline(expert_acc, ls=":", color="tab:red", label="expert only")
    ax.set_xlabel("deferral cost ce")
    ax.set_ylabel("test accuracy")
    ax2 = ax.twinx()
    ax2.plot(ce, cov, "s-", color="tab:purple", label="coverage")
    ax2.set_ylabel("coverage (deferred fraction)")
    ax2.set_ylim(-0.02, 1.02)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_compare_figure(curves: dict, path) -> None:
    """Accuracy over coverage for every method curve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, points in curves.items():
        pts = sorted(points, key=lambda p: p.coverage)
        style = _METHOD_STYLE.get(method, {})
        ax.plot([p.coverage for p in pts], [p.accuracy for p in pts],
                label=method, markersize=4, **style)
    ax.set_xlabel("coverage (deferred fraction)")
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_risk_gap_figure(rows, slope: float, path) -> None:
    """log-log plot of the mean train/held-out risk gap with its fit line."""
    ns = np.array([n for n, _ in rows], dtype=float)
    gaps = np.array([g for _, g in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(ns, gaps, "o", color="tab:blue", label="mean |risk gap|")
    keep = gaps > 0
    if keep.sum() >= 2:
        coef = np.polyfit(np.log(ns[keep]), np.log(gaps[keep]), 1)
        ax.loglog(ns, np.exp(np.polyval(coef, np.log(ns))), "--", color="tab:gray",
                  label=f"fit slope {slope:.2f}")
    ax.set_xlabel("training set size n")
    ax.set_ylabel("train vs held-out risk gap")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
