"""Command implementations: full exploration runs and the two studies.

Every command validates its configuration before touching the output
directory, writes delimited field files (CSV and/or PGM), renders report
figures next to them, and finishes with a JSON report whose file
references are all guaranteed to exist.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .. import explorer as exp
from ..estimator import BetaSample
from ..studies import beta_round_trip, cluster_size_residuals
from .config import RunConfig
from .export import export_field
from .figures import render_beta_study, render_cluster_study, render_field, render_residual_curves


@dataclass(frozen=True)
class RunReport:
    """Summary of one exploration run; serialized as ``report.json``."""

    scenario_id: str
    interactions: int
    terminated: bool
    beta_hats: list[float]
    residuals: list[float]
    field_files: list[str]
    figure_files: list[str]
    segmentation_accuracy: float
    region_count: int
    timings: dict[str, float]


def _formats(fmt: str) -> list[str]:
    return ["csv", "pgm"] if fmt == "both" else [fmt]


def _export(field, out_dir: Path, stem: str, fmt: str) -> list[str]:
    names = []
    for f in _formats(fmt):
        name = f"{stem}.{f}"
        export_field(field, out_dir / name, f)
        names.append(name)
    return names


def _sample_dict(sample: BetaSample) -> dict:
    return {
        "beta_hat": sample.beta_hat,
        "min_residual": sample.min_residual,
        "residuals": [
            {"beta": r.beta, "error": r.error, "converged": r.converged}
            for r in sample.residuals
        ],
    }


def cmd_run(config: RunConfig, out_dir, fmt: str = "both") -> RunReport:
    """Explore the configured scenario and write fields, records, and figures."""
    out_dir = Path(out_dir)
    t0 = time.perf_counter()
    result = exp.run_exploration(config.scenario, config.explorer)
    t_explore = time.perf_counter() - t0

    out_dir.mkdir(parents=True, exist_ok=True)
    t1 = time.perf_counter()
    field_files = []
    field_files += _export(result.field.mean, out_dir, "beta_mean", fmt)
    field_files += _export(result.field.variance, out_dir, "beta_variance", fmt)
    field_files += _export(result.world_mean, out_dir, "world_height", fmt)

    interactions = [
        {
            "index": rec.index,
            "target": list(rec.target),
            "contact": list(rec.contact),
            "selection_variance": rec.selection_variance,
            "variance_before": rec.variance_before,
            "variance_after": rec.variance_after,
            "converged": rec.converged,
            "pre_cloud_points": int(rec.pre_cloud.shape[0]),
            "post_cloud_points": int(rec.post_cloud.shape[0]),
            "tactile_points": int(rec.tactile.shape[0]),
            "sample": _sample_dict(rec.sample),
        }
        for rec in result.records
    ]
    with open(out_dir / "interactions.json", "w", encoding="utf-8") as fh:
        json.dump(interactions, fh, indent=2)
    t_export = time.perf_counter() - t1

    t2 = time.perf_counter()
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    contacts = [rec.contact for rec in result.records]
    render_field(
        result.world_mean, fig_dir / "world_height.png",
        "Surface height model", "height (m)", cmap="terrain",
    )
    render_field(
        result.field.mean, fig_dir / "beta_mean.png",
        "Deformability field (mean)", "deformability", cmap="inferno",
        contacts=contacts, vmin=0.0, vmax=1.0,
    )
    render_field(
        result.field.variance, fig_dir / "beta_variance.png",
        "Deformability field (variance)", "variance", cmap="magma",
        contacts=contacts,
    )
    render_residual_curves(result.records, fig_dir / "residual_curves.png")
    figure_files = [
        "figures/world_height.png",
        "figures/beta_mean.png",
        "figures/beta_variance.png",
        "figures/residual_curves.png",
    ]
    t_figures = time.perf_counter() - t2

    report = RunReport(
        scenario_id=config.scenario.scenario_id,
        interactions=len(result.records),
        terminated=result.terminated,
        beta_hats=[rec.sample.beta_hat for rec in result.records],
        residuals=[rec.sample.min_residual for rec in result.records],
        field_files=field_files + ["interactions.json"],
        figure_files=figure_files,
        segmentation_accuracy=exp.segmentation_accuracy(result.field, config.scenario),
        region_count=exp.count_regions(result.field),
        timings={
            "exploration_s": round(t_explore, 3),
            "export_s": round(t_export, 3),
            "figures_s": round(t_figures, 3),
            "total_s": round(time.perf_counter() - t0, 3),
        },
    )
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, indent=2)
    return report


def cmd_beta_study(config: RunConfig, out_dir) -> list[dict]:
    """Round-trip recovery for each configured deformability level."""
    study = config.study
    levels = study.betas if study.betas is not None else tuple(config.scenario.distinct_betas())
    if not levels:
        raise ValueError("the study needs at least one deformability level")
    rows = []
    t0 = time.perf_counter()
    for beta_true in levels:
        for trial in range(study.trials):
            sample = beta_round_trip(
                float(beta_true),
                solver=config.solver,
                probe=config.scenario.probe,
                noise_std=study.noise_std,
                seed=study.seed + trial,
                beta_grid=config.explorer.beta_grid,
            )
            rows.append(
                {
                    "beta_true": float(beta_true),
                    "trial": trial,
                    "beta_hat": sample.beta_hat,
                    "min_residual": sample.min_residual,
                }
            )
    elapsed = time.perf_counter() - t0

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "beta_study.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("beta_true,trial,beta_hat,min_residual\n")
        for r in rows:
            fh.write(
                f"{r['beta_true']:.6g},{r['trial']},{r['beta_hat']:.6g},{r['min_residual']:.17g}\n"
            )
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    render_beta_study(rows, fig_dir / "beta_study.png")
    with open(out_dir / "beta_study_report.json", "w", encoding="utf-8") as fh:
        json.dump({"rows": rows, "elapsed_s": round(elapsed, 3)}, fh, indent=2)
    return rows


def cmd_cluster_study(config: RunConfig, out_dir) -> list[dict]:
    """Best residual per cluster size against one synthetic truth."""
    study = config.study
    t0 = time.perf_counter()
    samples = cluster_size_residuals(
        sizes=study.cluster_sizes,
        truth_size=study.truth_cluster_size,
        beta_true=study.beta_true,
        solver=config.solver,
        probe=config.scenario.probe,
        noise_std=study.noise_std,
        seed=study.seed,
        beta_grid=config.explorer.beta_grid,
    )
    rows = [
        {
            "cluster_size": size,
            "beta_hat": sample.beta_hat,
            "min_residual": sample.min_residual,
        }
        for size, sample in sorted(samples.items())
    ]
    elapsed = time.perf_counter() - t0

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "cluster_study.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("cluster_size,beta_hat,min_residual\n")
        for r in rows:
            fh.write(f"{r['cluster_size']},{r['beta_hat']:.6g},{r['min_residual']:.17g}\n")
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    render_cluster_study(rows, fig_dir / "cluster_study.png")
    with open(out_dir / "cluster_study_report.json", "w", encoding="utf-8") as fh:
        json.dump({"rows": rows, "elapsed_s": round(elapsed, 3)}, fh, indent=2)
    return rows
