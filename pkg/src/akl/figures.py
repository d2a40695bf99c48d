"""Figure rendering for experiment results: one PNG per table-backed view.

Figures sit alongside the CSV output as a quick visual read of each scan;
the CSV files remain the authoritative data.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ExperimentResult
from .grid import bv_seminorm
from .synthetic import gen_lowfreq


def _save(fig, output_dir: str, name: str) -> str:
    path = os.path.join(output_dir, name)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _loglog_scan(rows, x_key, y_key, slope, intercept, ylabel, title):
    xs = sorted({row[x_key] for row in rows})
    medians = [np.median([r[y_key] for r in rows if r[x_key] == x]) for x in xs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for x in xs:
        ys = [r[y_key] for r in rows if r[x_key] == x]
        ax.plot([x] * len(ys), ys, ".", color="0.7", markersize=3)
    ax.plot(xs, medians, "o-", color="C0", label="median")
    if np.isfinite(slope):
        fit = np.exp(intercept) * np.asarray(xs, dtype=float) ** slope
        ax.plot(xs, fit, "--", color="C3", label=f"slope {slope:.2f}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("patches per axis n")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    return fig


def render_figures(result: ExperimentResult, output_dir: str) -> list[str]:
    """Write the figures for one experiment result; returns the file paths."""
    name = result.name
    paths: list[str] = []

    if name == "bv":
        img = gen_lowfreq(64, seed=1)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(img.pixels[:, :, 0], cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"lowfreq64, TV seminorm {bv_seminorm(img):.1f}")
        ax.axis("off")
        paths.append(_save(fig, output_dir, "bv_image.png"))

    elif name == "patchify":
        img = gen_lowfreq(64, seed=1)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(img.pixels[:, :, 0], cmap="gray", vmin=0, vmax=1)
        n, step = 4, 16
        from .grid import patchify, select_patches

        sel = select_patches(patchify(img, n), 0)
        for k in range(1, n):
            ax.axhline(k * step - 0.5, color="w", linewidth=0.7)
            ax.axvline(k * step - 0.5, color="w", linewidth=0.7)
        for idx in sel.selection:
            r0, _, c0, _ = sel.bounds(idx)
            ax.add_patch(
                plt.Rectangle((c0 - 0.5, r0 - 0.5), step, step, fill=False, edgecolor="C3", lw=2)
            )
        ax.set_title("patch grid with one selection per row")
        ax.axis("off")
        paths.append(_save(fig, output_dir, "patchify_selection.png"))

    elif name == "lowrank":
        _, cells = result.tables["prop31_cells"]
        noisy = [c for c in cells if c["noise_bv"] > 0 and np.isfinite(c["median_ratio"])]
        if noisy:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            labels = [f"r={c['r']}\nnoise={c['noise_bv']:g}" for c in noisy]
            ax.bar(range(len(noisy)), [c["median_ratio"] for c in noisy], color="C0", alpha=0.8)
            ax.set_xticks(range(len(noisy)), labels, fontsize=7)
            ax.set_yscale("log")
            ax.set_ylabel("median  TV error / epsilon")
            ax.set_title("recovery ratio per cell")
            paths.append(_save(fig, output_dir, "lowrank_ratios.png"))

    elif name == "kernel":
        _, eigen_rows = result.tables["spectrum"]
        values = np.array([row["eigenvalue"] for row in eigen_rows])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        positive = np.clip(values, 1e-18, None)
        ax.semilogy(positive, "o-", markersize=3)
        ax.set_xlabel("index")
        ax.set_ylabel("eigenvalue")
        ax.set_title("measure-weighted kernel spectrum")
        paths.append(_save(fig, output_dir, "kernel_spectrum.png"))

    elif name == "stability":
        rows = [r for r in result.tables["stability"][1] if r["t"] == 0]
        fig = _loglog_scan(
            rows,
            "n",
            "drift",
            result.metrics.get("slope", float("nan")),
            result.metrics.get("intercept", float("nan")),
            "first-layer drift (sup norm)",
            "drift against patch count",
        )
        paths.append(_save(fig, output_dir, "stability_drift.png"))

    elif name == "fredholm":
        _, spec_rows = result.tables["first_kind_spectrum"]
        values = np.array([row["singular_value"] for row in spec_rows])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(np.clip(values, 1e-20, None), "o-", markersize=3)
        ax.set_xlabel("index")
        ax.set_ylabel("singular value")
        ax.set_title("first-kind operator spectrum (ill-posedness)")
        paths.append(_save(fig, output_dir, "fredholm_spectrum.png"))

    elif name == "interpolation":
        rows = result.tables["restriction_scan"][1]
        fig = _loglog_scan(
            rows,
            "n",
            "max_error",
            result.metrics.get("slope", float("nan")),
            result.metrics.get("intercept", float("nan")),
            "max restricted-attention error",
            "mask-restriction error against patch count",
        )
        paths.append(_save(fig, output_dir, "interpolation_error.png"))

    return paths
