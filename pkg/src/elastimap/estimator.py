"""Deformability estimation by matching simulated and observed shapes.

A poked patch is simulated at a grid of candidate deformability values and
each equilibrium is scored against the observed deformed surface with a
one-sided mean nearest-neighbor distance (simulated -> observed). The
candidate with the lowest residual is the estimate; ties break toward the
smaller value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ElastimapError
from .msm import Constraint, RestShape, SolverParams, simulate


class EmptyInput(ElastimapError):
    """A point set that must be non-empty is empty."""


# Twenty uniform candidates on [0, 1).
DEFAULT_BETA_GRID = tuple(np.round(np.arange(20) * 0.05, 10))


@dataclass(frozen=True)
class ObservedShape:
    """Dense reconstruction of the deformed patch, points shape (K, 3)."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise EmptyInput(f"observed shape needs a non-empty (K, 3) point set, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("observed points must be finite")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class BetaResidual:
    """Residual of one candidate; ``converged`` flags the solver outcome."""

    beta: float
    error: float
    converged: bool


@dataclass(frozen=True)
class BetaSample:
    """One local deformability estimate with its full residual curve."""

    location: tuple[float, float] | None
    beta_hat: float
    residuals: tuple[BetaResidual, ...]

    @property
    def min_residual(self) -> float:
        return min(r.error for r in self.residuals)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.residuals)


def chamfer_error(sim_points: np.ndarray, observed: ObservedShape) -> float:
    """Mean distance from each simulated point to its nearest observed point.

    One-sided and non-negative; zero exactly when every simulated point
    coincides with some observed point.
    """
    sim_points = np.asarray(sim_points, dtype=float)
    if sim_points.ndim != 2 or sim_points.shape[1] != 3 or sim_points.shape[0] == 0:
        raise EmptyInput(f"simulated point set must be non-empty (K, 3), got {sim_points.shape}")
    dists, _ = cKDTree(observed.points).query(sim_points)
    return float(np.mean(dists))


def estimate_beta(
    shape: RestShape,
    constraints: list[Constraint],
    observed: ObservedShape,
    beta_grid=None,
    params: SolverParams | None = None,
    location: tuple[float, float] | None = None,
    warm_start: bool = True,
) -> BetaSample:
    """Grid-search the deformability that best explains an observed press.

    Runs the shape-matching solver once per candidate (optionally warm
    starting each run from the previous equilibrium), scores each result
    against ``observed``, and returns the argmin with ties broken toward
    the smaller candidate. Non-converged runs are kept but flagged in the
    residual list.
    """
    grid = np.asarray(DEFAULT_BETA_GRID if beta_grid is None else beta_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("beta grid must be non-empty")
    if np.any((grid < 0) | (grid >= 1)):
        raise ValueError("beta grid values must lie in [0, 1)")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must be sorted strictly ascending")
    params = params or SolverParams()

    tree = cKDTree(observed.points)
    residuals = []
    init = None
    for beta in grid:
        result = simulate(shape, constraints, float(beta), params, initial=init)
        if warm_start:
            init = result.positions
        dists, _ = tree.query(result.positions)
        residuals.append(
            BetaResidual(beta=float(beta), error=float(np.mean(dists)), converged=result.converged)
        )

    best = 0
    for i, res in enumerate(residuals):
        if res.error < residuals[best].error:
            best = i
    return BetaSample(
        location=tuple(location) if location is not None else None,
        beta_hat=residuals[best].beta,
        residuals=tuple(residuals),
    )
