"""Render convergence figures from trace CSVs.

Figures are always produced *from* the delimited output, never from live
solver state, so a CSV plus this module reproduces any plot.
"""

from __future__ import annotations

import math

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import InputError  # noqa: E402
from .solvers import read_trace_csv  # noqa: E402


def _plot_series(ax, label, epochs, values):
    pts = [(e, v) for e, v in zip(epochs, values)
           if v is not None and not math.isnan(v) and v > 0]
    if not pts:
        return
    xs, ys = zip(*pts)
    ax.semilogy(xs, ys, marker="o", markersize=3, linewidth=1.2, label=label)


def plot_traces(named_series, out_path, title=None, ylabel="suboptimality"):
    """Semilog convergence plot; ``named_series`` is [(label, epochs, values)]."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, epochs, values in named_series:
        _plot_series(ax, label, epochs, values)
    ax.set_xlabel("epochs")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_trace_csv(csv_path, out_path, label=None):
    trace = read_trace_csv(csv_path)
    series = [(label or str(csv_path), trace.epochs, trace.suboptimalities)]
    if all(math.isnan(s) for s in trace.suboptimalities):
        series = [(label or str(csv_path), trace.epochs, trace.objectives)]
        return plot_traces(series, out_path, ylabel="objective")
    return plot_traces(series, out_path)


def plot_condition_sweep(spectrum, R_sq, loss, lam, out_path, betas=None, title=None):
    """Two-panel conditioning report: preconditioned condition number across
    the curvature shift, and smoothed numerical rank across the smoothing.

    Only meaningful for smooth losses; the original problem's condition
    number appears as a dashed reference line.
    """
    from .spectral import coherence, numerical_rank

    if spectrum.right_factors is None:
        raise InputError("condition sweep needs a spectrum with right factors")
    L = loss.L
    if betas is None:
        betas = np.geomspace(1e-4, 1.0, 80) * L
    kappa_orig = L * R_sq / lam
    kappas = []
    for beta in betas:
        rho = lam / beta
        mug = coherence(spectrum, rho) * numerical_rank(spectrum, rho)
        kappas.append(max((L - beta) * mug / beta, 1e-12))

    rhos = np.geomspace(lam / L * 1e-2, max(1.0, lam / L * 1e6), 80)
    gammas = [numerical_rank(spectrum, rho) for rho in rhos]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    ax1.loglog(betas, kappas, label="preconditioned")
    ax1.axhline(kappa_orig, linestyle="--", color="gray", label="original")
    ax1.set_xlabel("curvature shift")
    ax1.set_ylabel("condition number")
    ax1.grid(True, which="both", alpha=0.3)
    ax1.legend(fontsize=8)
    ax2.loglog(rhos, gammas)
    ax2.set_xlabel("smoothing")
    ax2.set_ylabel("numerical rank")
    ax2.grid(True, which="both", alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_compare_csv(csv_path, out_path, title=None):
    """Plot a long-format compare CSV, one curve per (algorithm, formulation)."""
    groups: dict[str, tuple[list, list]] = {}
    with open(csv_path, "r") as fh:
        header = fh.readline().strip().split(",")
        try:
            i_run = header.index("run_id")
            i_epoch = header.index("epoch")
            i_sub = header.index("suboptimality")
        except ValueError as exc:
            raise InputError(f"{csv_path}: missing compare columns") from exc
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            run_id = parts[i_run]
            xs, ys = groups.setdefault(run_id, ([], []))
            xs.append(float(parts[i_epoch]))
            ys.append(float(parts[i_sub]))
    series = [(run_id, xs, ys) for run_id, (xs, ys) in sorted(groups.items())]
    return plot_traces(series, out_path, title=title)
