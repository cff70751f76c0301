"""Render report figures to files (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..gprf import ScalarField


def _extent(field: ScalarField):
    spec = field.spec
    return (
        spec.origin[0],
        spec.origin[0] + (spec.nx - 1) * spec.spacing,
        spec.origin[1],
        spec.origin[1] + (spec.ny - 1) * spec.spacing,
    )


def render_field(
    field: ScalarField,
    path,
    title: str,
    cbar_label: str = "",
    cmap: str = "viridis",
    contacts=None,
    vmin=None,
    vmax=None,
) -> None:
    """Heatmap of a field; optional contact markers (first poke circled)."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    im = ax.imshow(
        field.grid(),
        origin="lower",
        extent=_extent(field),
        cmap=cmap,
        vmin=vmin,
        vmax=vmax,
        aspect="equal",
    )
    if contacts is not None and len(contacts):
        pts = np.asarray(contacts, dtype=float)
        ax.plot(pts[0, 0], pts[0, 1], "o", mfc="none", mec="white", mew=1.8, ms=11)
        if pts.shape[0] > 1:
            ax.plot(pts[1:, 0], pts[1:, 1], "^", mfc="none", mec="white", mew=1.6, ms=9)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label=cbar_label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_residual_curves(records, path) -> None:
    """Residual-vs-candidate curves, one line per interaction."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for rec in records:
        betas = [r.beta for r in rec.sample.residuals]
        errors = [r.error for r in rec.sample.residuals]
        ax.plot(betas, errors, marker=".", lw=1.0, label=f"poke {rec.index}")
    ax.set_xlabel("candidate deformability")
    ax.set_ylabel("mean nearest-point distance (m)")
    ax.set_title("Residual curves per interaction")
    if len(records) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_beta_study(rows, path) -> None:
    """Recovered vs true deformability with the identity line."""
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    true = [r["beta_true"] for r in rows]
    est = [r["beta_hat"] for r in rows]
    lo = min(min(true), min(est)) - 0.05
    hi = max(max(true), max(est)) + 0.05
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.plot(true, est, "o", ms=6, alpha=0.7)
    ax.set_xlabel("true deformability")
    ax.set_ylabel("estimated deformability")
    ax.set_title("Deformability recovery")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cluster_study(rows, path) -> None:
    """Best residual as a function of cluster size."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    sizes = [r["cluster_size"] for r in rows]
    residuals = [r["min_residual"] for r in rows]
    ax.plot(sizes, residuals, "o-", ms=6)
    ax.set_xticks(sizes)
    ax.set_xlabel("cluster size")
    ax.set_ylabel("best residual (m)")
    ax.set_title("Cluster-size study")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
