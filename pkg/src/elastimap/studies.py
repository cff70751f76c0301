"""Reusable study primitives: synthetic press round trips.

These back the study subcommands and the verification suite: synthesize an
observation by pressing a patch at a known deformability, then re-estimate
it (optionally with a different cluster tiling) and report the recovery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import BetaSample, ObservedShape, estimate_beta
from .msm import Constraint, RestShape, SolverParams, simulate, surface_patch
from .world import ProbeModel


@dataclass(frozen=True)
class PressSetup:
    """A pinned square patch with probe constraints at its center."""

    shape: RestShape
    constraints: list[Constraint]


def press_setup(
    probe: ProbeModel,
    solver: SolverParams,
    spacing: float = 0.01,
    half_width: float = 0.06,
    base_height: float = 0.05,
    cluster_size: int | None = None,
) -> PressSetup:
    """Build a flat patch and the press constraints under the probe tip."""
    n = 2 * int(round(half_width / spacing)) + 1
    shape = surface_patch(
        origin=(0.0, 0.0),
        spacing=spacing,
        nx=n,
        ny=n,
        heights=base_height,
        cluster_size=cluster_size if cluster_size is not None else solver.cluster_size,
        cluster_stride=solver.cluster_stride,
    )
    rest = shape.rest_positions
    center = rest[:, :2].mean(axis=0)
    pressed = np.flatnonzero(
        np.hypot(rest[:, 0] - center[0], rest[:, 1] - center[1]) <= probe.tip_radius + 1e-9
    )
    constraints = [
        Constraint(index=int(i), position=(rest[i, 0], rest[i, 1], rest[i, 2] - probe.press_depth))
        for i in pressed
    ]
    return PressSetup(shape=shape, constraints=constraints)


def synthesize_observation(
    setup: PressSetup,
    beta_true: float,
    solver: SolverParams,
    noise_std: float = 0.0005,
    seed: int = 0,
) -> ObservedShape:
    """Equilibrium of the pressed patch with additive z-noise on every point."""
    result = simulate(setup.shape, setup.constraints, beta_true, solver)
    points = result.positions.copy()
    rng = np.random.default_rng(seed)
    points[:, 2] += rng.normal(0.0, noise_std, points.shape[0])
    return ObservedShape(points=points)


def beta_round_trip(
    beta_true: float,
    solver: SolverParams,
    probe: ProbeModel,
    noise_std: float = 0.0005,
    seed: int = 0,
    beta_grid=None,
    spacing: float = 0.01,
    half_width: float = 0.06,
) -> BetaSample:
    """Press at a known deformability, then re-estimate it from the result."""
    setup = press_setup(probe, solver, spacing=spacing, half_width=half_width)
    observed = synthesize_observation(setup, beta_true, solver, noise_std=noise_std, seed=seed)
    return estimate_beta(
        setup.shape, setup.constraints, observed, beta_grid=beta_grid, params=solver
    )


def cluster_size_residuals(
    sizes,
    truth_size: int,
    beta_true: float,
    solver: SolverParams,
    probe: ProbeModel,
    noise_std: float = 0.0005,
    seed: int = 0,
    beta_grid=None,
    spacing: float = 0.01,
    half_width: float = 0.06,
) -> dict[int, BetaSample]:
    """Estimate with several cluster tilings against one synthetic truth.

    The observation is generated with ``truth_size`` clusters; each entry of
    the result maps a tested cluster size to its best estimate (whose
    ``min_residual`` is the figure of merit).
    """
    truth_setup = press_setup(
        probe, solver, spacing=spacing, half_width=half_width, cluster_size=truth_size
    )
    observed = synthesize_observation(
        truth_setup, beta_true, solver, noise_std=noise_std, seed=seed
    )
    out: dict[int, BetaSample] = {}
    for size in sizes:
        setup = press_setup(
            probe, solver, spacing=spacing, half_width=half_width, cluster_size=int(size)
        )
        out[int(size)] = estimate_beta(
            setup.shape, setup.constraints, observed, beta_grid=beta_grid, params=solver
        )
    return out
