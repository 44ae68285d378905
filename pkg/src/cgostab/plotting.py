"""Static SVG charts for run directories.

Figures are rendered with the Agg backend and a fixed SVG hash salt and no
date metadata, so identical data produce byte-identical files.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "cgostab",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (float(v) if v not in ("", None) else np.nan) for k, v in row.items()})
    return rows


def plot_sweep(csv_path, out_path, fit=None):
    """Error against ``-ln(delta)`` read back from the sweep CSV."""
    rows = read_sweep_csv(csv_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.array([-np.log(r["delta"]) for r in rows])
        y = np.array([r["err_l2"] for r in rows])
        ok = np.isfinite(y)
        if ok.any():
            ax.plot(x[ok], y[ok], "o-", color="k", label="L2 error")
        if fit is not None and not fit.get("degenerate") and ok.any():
            d = np.exp(-np.linspace(x.min(), x.max(), 100))
            env = fit["A"] * (-np.log(d)) ** -fit["a"] + fit["B"] * d ** fit["b"]
            ax.plot(-np.log(d), env, "--", color="0.5", label="hybrid fit")
        if (~ok).any():
            ax.plot(x[~ok], np.zeros((~ok).sum()), "x", color="tab:red", label="skipped")
        ax.set_xlabel(r"$-\ln \delta$")
        ax.set_ylabel("error")
        ax.legend(frameon=False)
        _save(fig, out_path)


def plot_loglog(xs, series, out_path, xlabel, ylabel):
    """Log-log lines, one per named series."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, ys in series.items():
            ys = np.asarray(ys, float)
            ok = ys > 0
            ax.loglog(np.asarray(xs)[ok], ys[ok], "o-", label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, ncol=2)
        _save(fig, out_path)


def plot_contraction(kappas, out_path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        n = np.arange(2, len(kappas) + 2)
        ax.semilogy(n, kappas, "o-", color="k")
        ax.axhline(0.5, color="0.5", ls="--")
        ax.set_xlabel("iteration")
        ax.set_ylabel(r"$\kappa_n$")
        _save(fig, out_path)


def plot_spectrum(k_est, est, k_true, true, out_path):
    """Coefficient moduli against ``|iota|``: estimates over the truth."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(k_true, np.abs(true) + 1e-300, ".", color="0.6", label="truth")
        ax.semilogy(k_est, np.abs(est) + 1e-300, "x", color="k", label="estimate")
        ax.set_xlabel(r"$|\iota|$")
        ax.set_ylabel("coefficient modulus")
        ax.legend(frameon=False)
        _save(fig, out_path)


def plot_margins(labels, ratios, out_path):
    """Smallest ``|W|`` over its lower bound for each audited configuration."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(ratios)), ratios, "o", color="k")
        ax.axhline(1.0, color="tab:red", ls="--")
        ax.set_xlabel("configuration")
        ax.set_ylabel("min |W| / bound")
        _save(fig, out_path)
