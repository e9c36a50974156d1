"""Figure rendering for sweep and comparison reports (headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _angles_of(result):
    if result.angles_deg is not None:
        return result.angles_deg, "bistatic angle (deg)"
    return np.arange(len(result.observation)), "observation index"


def render_sweep_figures(result, directory, reference=None):
    """Scattered/total dB curves and the per-mechanism path census."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    x, xlabel = _angles_of(result)
    written = []

    fig, axes = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    for ax, vals, label in (
        (axes[0], result.es_db, "scattered"),
        (axes[1], result.et_db, "total"),
    ):
        ax.plot(x, vals, lw=1.0, label=f"RT {label}")
        if reference is not None:
            from facetrt.oracles import field_db

            ref_vals = field_db(
                np.linalg.norm(
                    reference["e_scattered" if label == "scattered" else "e_total"],
                    axis=1,
                )
            )
            ax.plot(x, ref_vals, lw=1.0, ls="--", color="k", label="analytical")
        ax.set_ylabel(f"|E| {label} (dB)")
        ax.grid(alpha=0.3)
        ax.legend(loc="best", fontsize=8)
    axes[1].set_xlabel(xlabel)
    fig.suptitle(result.name)
    p = directory / f"{result.name}_fields.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(9, 4))
    for key in ("LOS", "R", "E", "V", "EE", "EV", "VE"):
        if np.any(result.census[key]):
            ax.plot(x, result.census[key], lw=0.9, label=key)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("path count")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8, ncol=4)
    fig.suptitle(f"{result.name}: path census")
    p = directory / f"{result.name}_census.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)
    return written


def render_compare_figures(result, reference, deltas, directory, stem):
    """Overlay and per-region delta curves for a comparison report."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    x, xlabel = _angles_of(result)
    written = []

    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(x, result.et_db, lw=1.0, label="RT total")
    if isinstance(reference, dict):
        from facetrt.oracles import field_db

        ax.plot(
            x,
            field_db(np.linalg.norm(reference["e_total"], axis=1)),
            lw=1.0, ls="--", color="k", label="reference total",
        )
    ax.set_xlabel(xlabel)
    ax.set_ylabel("|E| (dB)")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.suptitle(f"{stem}: overlay")
    p = directory / f"{stem}_overlay.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for name, (ang, delta) in deltas.items():
        ax.plot(ang, delta, lw=0.9, label=f"{name} delta")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("RT - reference (dB)")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.suptitle(f"{stem}: per-angle delta")
    p = directory / f"{stem}_delta.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)
    return written
