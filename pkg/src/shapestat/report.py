"""Figure rendering for CLI reports.

Each function reads only the CSV files emitted alongside it and writes a
PNG, so figures can always be regenerated from the delimited outputs.
"""

from __future__ import annotations

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def plot_coordinate_histogram(csv_path, png_path, title="studentized mean coordinate"):
    """Histogram of studentized coordinates against the standard normal density."""
    rows = _read_csv(csv_path)
    vals = np.array([float(r["coordinate"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(vals, bins=40, density=True, color="#86b3d1", edgecolor="white")
    xs = np.linspace(-4, 4, 400)
    ax.plot(xs, np.exp(-xs**2 / 2) / np.sqrt(2 * np.pi), "k--", lw=1.5,
            label="standard normal")
    ax.set_xlabel("studentized coordinate")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def plot_compatibility(csv_path, png_path, title="model compatibility"):
    """d_hat and sigma_hat against sigma, one panel per perturbation mean."""
    rows = _read_csv(csv_path)
    groups = defaultdict(list)
    for r in rows:
        groups[r["mu_id"]].append(r)
    fig, axes = plt.subplots(1, len(groups), figsize=(4 * len(groups), 3.5),
                             squeeze=False)
    for ax, (mu_id, rs) in zip(axes[0], sorted(groups.items())):
        rs = sorted(rs, key=lambda r: float(r["sigma"]))
        sig = [float(r["sigma"]) for r in rs]
        ax.loglog(sig, [float(r["d_hat"]) for r in rs], "o-", label="d_hat")
        ax.loglog(sig, [float(r["sigma_hat"]) for r in rs], "s--", label="sigma_hat")
        ax.set_title(mu_id)
        ax.set_xlabel("sigma")
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].set_ylabel("estimated distance")
    axes[0][0].legend(frameon=False)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def plot_band(band_csv, png_path, curves_csv=None, title="distance to the cylinder geodesic"):
    """Confidence band over age, optionally with growth-curve overlays."""
    rows = _read_csv(band_csv)
    age = np.array([float(r["age"]) for r in rows])
    est = np.array([float(r["estimate"]) for r in rows])
    lo = np.array([float(r["lower"]) for r in rows])
    hi = np.array([float(r["upper"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(age, lo, hi, color="#86b3d1", alpha=0.5, label="confidence band")
    ax.plot(age, est, "k-", lw=1.5, label="mean distance")
    if curves_csv is not None:
        overlays = defaultdict(list)
        for r in _read_csv(curves_csv):
            overlays[r["label"]].append((float(r["age"]), float(r["distance"])))
        for label, pts in sorted(overlays.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "--", lw=1.0, label=label)
    ax.set_xlabel("age")
    ax.set_ylabel("shape distance")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path
