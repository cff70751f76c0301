"""Synthetic ground truth: scenarios, a virtual depth sensor, and a probe.

A scenario tiles a rectangular workspace with axis-aligned regions, each
carrying a true deformability value (optionally named by a foam hardness
label). The world holds the true surface as a pinned-edge particle grid;
poking constrains the particles under the probe tip to a prescribed
indentation depth and relaxes the surface with the region's true
deformability. Observations sample the current surface on a sensor
lattice with Gaussian noise, a configurable fraction of outliers, and an
occlusion hole around the probe while a press is active.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy.spatial import cKDTree

from .errors import ElastimapError
from .msm import Constraint, RestShape, SimResult, SolverParams, simulate, surface_patch


class BadLayout(ElastimapError):
    """Scenario regions overlap or fail to tile the workspace."""


class OutOfWorkspace(ElastimapError):
    """A coordinate lies outside the workspace rectangle."""


class TooFewPoints(ElastimapError):
    """Not enough points for the requested neighborhood statistic."""


# Foam hardness labels (manufacturer compression-force classes) mapped to
# the deformability used as ground truth. Scenario configs may override.
HARDNESS_TO_BETA = MappingProxyType({"60": 0.75, "110": 0.55, "150": 0.35, "rigid": 0.02})

_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class SensorModel:
    """Virtual depth sensor: lattice spacing, z-noise, outliers, occlusion."""

    spacing: float = 0.007
    noise_std: float = 0.002
    outlier_fraction: float = 0.01
    outlier_amplitude: float = 0.10
    occlusion_radius: float = 0.03

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise ValueError(f"sensor spacing must be positive, got {self.spacing}")
        if not 0 <= self.outlier_fraction < 0.2:
            raise ValueError(f"outlier fraction must lie in [0, 0.2), got {self.outlier_fraction}")
        if self.noise_std < 0:
            raise ValueError(f"noise std must be non-negative, got {self.noise_std}")


@dataclass(frozen=True)
class ProbeModel:
    """Spherical probe tip pressed to a fixed indentation depth."""

    tip_radius: float = 0.01
    press_depth: float = 0.015
    tactile_count: int = 10

    def __post_init__(self) -> None:
        if not self.tip_radius > 0:
            raise ValueError(f"tip radius must be positive, got {self.tip_radius}")
        if not self.press_depth > 0:
            raise ValueError(f"press depth must be positive, got {self.press_depth}")
        if self.tactile_count < 1:
            raise ValueError(f"tactile count must be >= 1, got {self.tactile_count}")


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle (x0, y0, width, height) with a true deformability."""

    rect: tuple[float, float, float, float]
    beta: float
    hardness: str | None = None

    def contains(self, xy) -> bool:
        x0, y0, w, h = self.rect
        return x0 - _GEOM_TOL <= xy[0] <= x0 + w + _GEOM_TOL and y0 - _GEOM_TOL <= xy[1] <= y0 + h + _GEOM_TOL


@dataclass(frozen=True)
class RegionSpec:
    """Region description before resolution: give ``beta`` or a hardness label."""

    rect: tuple[float, float, float, float]
    hardness: str | None = None
    beta: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative scenario description consumed by :func:`build_scenario`."""

    workspace: tuple[float, float] = (0.60, 0.40)
    base_height: float = 0.05
    regions: tuple[RegionSpec, ...] = (RegionSpec(rect=(0.0, 0.0, 0.60, 0.40), hardness="60"),)
    sensor: SensorModel = SensorModel()
    probe: ProbeModel = ProbeModel()
    hardness_map: dict = field(default_factory=lambda: dict(HARDNESS_TO_BETA))
    scenario_id: str = "scenario"


@dataclass(frozen=True)
class Scenario:
    """Resolved ground truth: tiled regions over a flat base surface."""

    scenario_id: str
    workspace: tuple[float, float]
    regions: tuple[Region, ...]
    base_height: float
    sensor: SensorModel
    probe: ProbeModel

    def distinct_betas(self) -> list[float]:
        return sorted({r.beta for r in self.regions})


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Resolve region deformabilities and verify the workspace tiling.

    Raises :class:`BadLayout` when regions overlap, stick out of the
    workspace, or leave part of it uncovered.
    """
    w, h = config.workspace
    if w <= 0 or h <= 0:
        raise BadLayout(f"workspace must have positive area, got {w} x {h}")
    regions = []
    for i, spec in enumerate(config.regions):
        if spec.beta is not None:
            beta = float(spec.beta)
        elif spec.hardness is not None:
            try:
                beta = float(config.hardness_map[str(spec.hardness)])
            except KeyError:
                raise BadLayout(
                    f"regions[{i}].hardness: unknown label {spec.hardness!r}"
                ) from None
        else:
            raise BadLayout(f"regions[{i}]: needs either beta or a hardness label")
        if not 0 <= beta < 1:
            raise BadLayout(f"regions[{i}]: beta must lie in [0, 1), got {beta}")
        regions.append(Region(rect=tuple(float(v) for v in spec.rect), beta=beta, hardness=spec.hardness))

    area = 0.0
    for i, region in enumerate(regions):
        x0, y0, rw, rh = region.rect
        if rw <= 0 or rh <= 0:
            raise BadLayout(f"regions[{i}]: rectangle must have positive size")
        if x0 < -_GEOM_TOL or y0 < -_GEOM_TOL or x0 + rw > w + _GEOM_TOL or y0 + rh > h + _GEOM_TOL:
            raise BadLayout(f"regions[{i}]: rectangle sticks out of the workspace")
        area += rw * rh
        for j in range(i):
            ox0, oy0, ow, oh = regions[j].rect
            overlap_x = min(x0 + rw, ox0 + ow) - max(x0, ox0)
            overlap_y = min(y0 + rh, oy0 + oh) - max(y0, oy0)
            if overlap_x > _GEOM_TOL and overlap_y > _GEOM_TOL:
                raise BadLayout(f"regions[{i}] and regions[{j}] overlap")
    if abs(area - w * h) > _GEOM_TOL * max(1.0, w * h):
        raise BadLayout(f"regions cover {area:.6f} m^2 of a {w * h:.6f} m^2 workspace")

    return Scenario(
        scenario_id=config.scenario_id,
        workspace=(float(w), float(h)),
        regions=tuple(regions),
        base_height=float(config.base_height),
        sensor=config.sensor,
        probe=config.probe,
    )


def true_beta_at(scenario: Scenario, xy) -> float:
    """Ground-truth deformability at a workspace coordinate.

    Points on shared edges resolve to the region with the lower index.
    """
    w, h = scenario.workspace
    if not (-_GEOM_TOL <= xy[0] <= w + _GEOM_TOL and -_GEOM_TOL <= xy[1] <= h + _GEOM_TOL):
        raise OutOfWorkspace(f"{tuple(xy)} lies outside the {w} x {h} workspace")
    for region in scenario.regions:
        if region.contains(xy):
            return region.beta
    raise OutOfWorkspace(f"{tuple(xy)} is not covered by any region")


@dataclass
class ActivePress:
    """Book-keeping for the press currently deforming the surface."""

    target: tuple[float, float]
    contact_index: int
    contact_xy: tuple[float, float]
    constraints: list[Constraint]
    converged: bool


@dataclass
class WorldState:
    """True surface particles plus the currently active press, if any."""

    scenario: Scenario
    shape: RestShape
    positions: np.ndarray
    solver: SolverParams
    press: ActivePress | None = None


@dataclass(frozen=True)
class PokeResult:
    """Deformed truth, synthetic tactile contacts, and the contact pose."""

    positions: np.ndarray
    tactile: np.ndarray
    contact_xy: tuple[float, float]
    contact_index: int
    converged: bool
    iterations: int


def make_world(
    scenario: Scenario,
    solver: SolverParams | None = None,
    particle_spacing: float = 0.01,
) -> WorldState:
    """Discretize the true surface on a pinned-edge grid (<= 1 cm spacing)."""
    solver = solver or SolverParams()
    w, h = scenario.workspace
    nx = int(round(w / particle_spacing)) + 1
    ny = int(round(h / particle_spacing)) + 1
    shape = surface_patch(
        origin=(0.0, 0.0),
        spacing=particle_spacing,
        nx=nx,
        ny=ny,
        heights=scenario.base_height,
        cluster_size=solver.cluster_size,
        cluster_stride=solver.cluster_stride,
    )
    return WorldState(
        scenario=scenario,
        shape=shape,
        positions=shape.rest_positions.copy(),
        solver=solver,
    )


def _heights_on_lattice(world: WorldState, lattice: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the current surface heights at lattice xy."""
    nx, ny = world.shape.grid_dims
    spacing = world.shape.spacing
    z = world.positions[:, 2].reshape(ny, nx)
    fx = np.clip(lattice[:, 0] / spacing, 0, nx - 1)
    fy = np.clip(lattice[:, 1] / spacing, 0, ny - 1)
    ix = np.minimum(fx.astype(int), nx - 2)
    iy = np.minimum(fy.astype(int), ny - 2)
    tx = fx - ix
    ty = fy - iy
    return (
        z[iy, ix] * (1 - tx) * (1 - ty)
        + z[iy, ix + 1] * tx * (1 - ty)
        + z[iy + 1, ix] * (1 - tx) * ty
        + z[iy + 1, ix + 1] * tx * ty
    )


def observe(world: WorldState, sensor: SensorModel, rng_seed: int) -> np.ndarray:
    """Sample the current true surface with the virtual depth sensor.

    Deterministic for a given seed: z-noise is drawn first, then outlier
    indices and signs. While a press is active, all points within the
    occlusion radius of the probe axis are dropped (the hand and stick
    shadow the camera).
    """
    w, h = world.scenario.workspace
    xs = np.arange(0.0, w + _GEOM_TOL, sensor.spacing)
    ys = np.arange(0.0, h + _GEOM_TOL, sensor.spacing)
    gx, gy = np.meshgrid(xs, ys)
    lattice = np.column_stack([gx.ravel(), gy.ravel()])
    z = _heights_on_lattice(world, lattice)

    rng = np.random.default_rng(rng_seed)
    z = z + rng.normal(0.0, sensor.noise_std, z.shape[0])
    n_out = int(round(sensor.outlier_fraction * z.shape[0]))
    if n_out > 0:
        idx = rng.choice(z.shape[0], size=n_out, replace=False)
        signs = np.where(rng.random(n_out) < 0.5, -1.0, 1.0)
        z[idx] += sensor.outlier_amplitude * signs

    cloud = np.column_stack([lattice, z])
    if world.press is not None:
        d = np.hypot(
            lattice[:, 0] - world.press.contact_xy[0],
            lattice[:, 1] - world.press.contact_xy[1],
        )
        cloud = cloud[d >= sensor.occlusion_radius]
    return cloud


def probe_constraints(
    rest_positions: np.ndarray, contact_xy, rest_z: float, probe: ProbeModel
) -> list[Constraint]:
    """Constraints making the surface conform to the pressed probe sphere.

    The sphere's lowest point sits one press depth below the rest height at
    the contact; every particle within one tip radius of the axis is
    prescribed onto the lower cap (deepest at the axis, shallower outward).
    """
    d = np.hypot(rest_positions[:, 0] - contact_xy[0], rest_positions[:, 1] - contact_xy[1])
    pressed = np.flatnonzero(d <= probe.tip_radius + _GEOM_TOL)
    center_z = rest_z - probe.press_depth + probe.tip_radius
    constraints = []
    for i in pressed:
        dz = np.sqrt(max(probe.tip_radius**2 - d[i] ** 2, 0.0))
        z = center_z - dz
        if z < rest_positions[i, 2]:
            constraints.append(
                Constraint(index=int(i), position=(rest_positions[i, 0], rest_positions[i, 1], z))
            )
    return constraints


def _tactile_points(contact_xy, contact_z: float, probe: ProbeModel) -> np.ndarray:
    """Deterministic contact samples on the lower cap of the probe sphere.

    Spread by a golden-angle spiral over polar angles below 60 degrees, so
    every sample stays within one tip radius (chord distance) of the lowest
    point of the sphere.
    """
    n = probe.tactile_count
    r = probe.tip_radius
    center = np.array([contact_xy[0], contact_xy[1], contact_z + r])
    k = np.arange(n)
    cos_theta = 1.0 - 0.5 * (k + 0.5) / n
    sin_theta = np.sqrt(1.0 - cos_theta**2)
    phi = k * (np.pi * (3.0 - np.sqrt(5.0)))
    offsets = r * np.column_stack(
        [sin_theta * np.cos(phi), sin_theta * np.sin(phi), -cos_theta]
    )
    return center + offsets


def poke(world: WorldState, target) -> PokeResult:
    """Press the probe into the surface at ``target`` and relax to equilibrium.

    The particle nearest the target becomes the contact; it and every
    particle within one tip radius of it are prescribed one press depth
    below their rest heights, and the surface relaxes with the true
    deformability of the target's region. Sets the world's active press.
    """
    w, h = world.scenario.workspace
    if not (-_GEOM_TOL <= target[0] <= w + _GEOM_TOL and -_GEOM_TOL <= target[1] <= h + _GEOM_TOL):
        raise OutOfWorkspace(f"poke target {tuple(target)} outside the {w} x {h} workspace")
    beta = true_beta_at(world.scenario, target)

    rest = world.shape.rest_positions
    d = np.hypot(rest[:, 0] - target[0], rest[:, 1] - target[1])
    contact_index = int(np.argmin(d))
    contact_xy = (float(rest[contact_index, 0]), float(rest[contact_index, 1]))
    pressed = np.flatnonzero(
        np.hypot(rest[:, 0] - contact_xy[0], rest[:, 1] - contact_xy[1])
        <= world.scenario.probe.tip_radius + _GEOM_TOL
    )
    depth = world.scenario.probe.press_depth
    constraints = [
        Constraint(index=int(i), position=(rest[i, 0], rest[i, 1], rest[i, 2] - depth))
        for i in pressed
    ]
    result = simulate(world.shape, constraints, beta, world.solver, initial=world.positions)
    world.positions = result.positions
    world.press = ActivePress(
        target=(float(target[0]), float(target[1])),
        contact_index=contact_index,
        contact_xy=contact_xy,
        constraints=constraints,
        converged=result.converged,
    )
    contact_z = float(rest[contact_index, 2] - depth)
    tactile = _tactile_points(contact_xy, contact_z, world.scenario.probe)
    return PokeResult(
        positions=result.positions,
        tactile=tactile,
        contact_xy=contact_xy,
        contact_index=contact_index,
        converged=result.converged,
        iterations=result.iterations,
    )


def release(world: WorldState) -> SimResult:
    """Remove the active press and let the surface relax back toward rest."""
    beta = true_beta_at(world.scenario, world.press.target) if world.press else 0.0
    world.press = None
    result = simulate(world.shape, [], beta, world.solver, initial=world.positions)
    world.positions = result.positions
    return result


def statistical_outlier_filter(cloud: np.ndarray, k: int = 8, std_ratio: float = 1.0) -> np.ndarray:
    """Drop points whose mean distance to their k nearest neighbors is high.

    A point is removed when its mean k-neighbor distance exceeds the global
    mean plus ``std_ratio`` standard deviations of that statistic. The
    output is always a subset of the input, in the original order.
    """
    cloud = np.asarray(cloud, dtype=float)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if cloud.shape[0] <= k:
        raise TooFewPoints(f"need more than k={k} points, got {cloud.shape[0]}")
    dists, _ = cKDTree(cloud).query(cloud, k=k + 1)
    mean_dist = dists[:, 1:].mean(axis=1)
    threshold = mean_dist.mean() + std_ratio * mean_dist.std()
    return cloud[mean_dist <= threshold]
