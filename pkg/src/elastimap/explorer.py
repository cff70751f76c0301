"""Active exploration: poke where the deformability field is most uncertain.

One run proceeds as: observe the resting surface, filter outliers, fit a
geometry model (a Gaussian random field over heights), then repeatedly
poke, reconstruct the deformed patch from the occluded post-press cloud
plus tactile contacts, estimate the local deformability, and retrain the
deformability field on the cells that actually deformed. The next target
is drawn among the cells whose field variance still exceeds the threshold;
exploration stops when no such cell remains or the interaction budget is
spent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import gprf
from .errors import ElastimapError
from .estimator import BetaSample, ObservedShape, estimate_beta
from .gprf import GprModel, GridSpec, Hyperparams, ScalarField, TrainingSet
from .msm import Constraint, SolverParams, surface_patch
from .world import Scenario, WorldState, make_world, observe, poke, release, statistical_outlier_filter

logger = logging.getLogger(__name__)


class EmptyRoi(ElastimapError):
    """The cropped cloud and the tactile set are both empty."""


class ExplorationAborted(ElastimapError):
    """Too many consecutive non-converged pokes; the run is unreliable."""


_BETA_CEIL = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class ExplorerParams:
    """Exploration controls and the regression hyperparameters per role.

    ``variance_threshold`` is the stop/selection level on the
    deformability-field variance; ``grid_spacing`` the dense inference
    grid; ``roi_half_width`` half the side of the square patch around each
    contact; ``sim_spacing`` the particle spacing of the simulated patch;
    ``train_spacing`` the decimation step for field training cells.
    """

    variance_threshold: float = 0.06
    grid_spacing: float = 0.005
    roi_half_width: float = 0.06
    max_interactions: int = 12
    seed: int = 0
    selection: str = "random"            # or "argmax"
    initial_target: tuple[float, float] | None = None
    displacement_threshold: float = 0.001
    train_spacing: float = 0.02
    sim_spacing: float = 0.01
    world_hyper: Hyperparams = gprf.GEOMETRY_DEFAULTS
    touch_hyper: Hyperparams = gprf.TOUCH_DEFAULTS
    beta_hyper: Hyperparams = gprf.BETA_FIELD_DEFAULTS
    solver: SolverParams = field(default_factory=SolverParams)
    beta_grid: tuple[float, ...] | None = None
    warm_start: bool = True
    max_world_points: int = 2500
    filter_k: int = 8
    filter_std_ratio: float = 1.0
    max_consecutive_failures: int = 3

    def __post_init__(self) -> None:
        if not self.variance_threshold > 0:
            raise ValueError("variance threshold must be positive")
        if not self.grid_spacing > 0:
            raise ValueError("grid spacing must be positive")
        if self.max_interactions < 1:
            raise ValueError("max interactions must be >= 1")
        if self.selection not in ("random", "argmax"):
            raise ValueError(f"selection must be 'random' or 'argmax', got {self.selection!r}")


@dataclass(frozen=True)
class BetaField:
    """Deformability field: posterior mean (clamped to [0, 1)) and variance.

    ``model`` is None before the first update, in which case the variance
    is the prior everywhere and the mean is zero.
    """

    mean: ScalarField
    variance: ScalarField
    model: GprModel | None


@dataclass(frozen=True)
class InteractionRecord:
    """Audit trail of one poke."""

    index: int
    target: tuple[float, float]
    contact: tuple[float, float]
    pre_cloud: np.ndarray
    post_cloud: np.ndarray
    tactile: np.ndarray
    sample: BetaSample
    selection_variance: float
    variance_before: float
    variance_after: float
    variance_field: ScalarField
    converged: bool


@dataclass(frozen=True)
class ExplorationResult:
    """Final field, per-poke records, and the fitted geometry model."""

    field: BetaField
    records: tuple[InteractionRecord, ...]
    world_model: GprModel
    world_mean: ScalarField
    world_variance: ScalarField
    terminated: bool    # True when no cell exceeded the variance threshold


def workspace_grid(workspace: tuple[float, float], spacing: float) -> GridSpec:
    """Dense inference grid covering the whole workspace."""
    nx = int(round(workspace[0] / spacing)) + 1
    ny = int(round(workspace[1] / spacing)) + 1
    return GridSpec(origin=(0.0, 0.0), spacing=spacing, nx=nx, ny=ny)


def voxel_decimate(points: np.ndarray, voxel: float) -> np.ndarray:
    """Average points per planar voxel; output ordered by voxel key."""
    points = np.asarray(points, dtype=float)
    keys = np.floor(points[:, :2] / voxel).astype(np.int64)
    order = np.lexsort((keys[:, 0], keys[:, 1]))
    sorted_keys = keys[order]
    boundaries = np.concatenate(
        [[0], 1 + np.flatnonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))]
    )
    sums = np.add.reduceat(points[order], boundaries, axis=0)
    counts = np.diff(np.concatenate([boundaries, [points.shape[0]]]))
    return sums / counts[:, None]


def fit_world(cloud: np.ndarray, hyper: Hyperparams, max_points: int = 2500) -> GprModel:
    """Fit the geometry field to a (filtered) cloud after voxel decimation.

    The voxel grows geometrically until the decimated training set fits the
    point budget, keeping the cubic-cost factorization at desk scale.
    """
    pts = np.asarray(cloud, dtype=float)
    voxel = 0.01
    dec = voxel_decimate(pts, voxel) if pts.shape[0] > max_points else pts
    while dec.shape[0] > max_points:
        voxel *= 1.3
        dec = voxel_decimate(pts, voxel)
    return gprf.fit(TrainingSet(inputs=dec[:, :2], targets=dec[:, 2]), hyper)


def initial_beta_field(workspace: tuple[float, float], params: ExplorerParams) -> BetaField:
    """Prior field before any interaction: zero mean, prior variance."""
    spec = workspace_grid(workspace, params.grid_spacing)
    prior = params.beta_hyper.sigma_e**2
    return BetaField(
        mean=ScalarField(spec, np.zeros(spec.size)),
        variance=ScalarField(spec, np.full(spec.size, prior)),
        model=None,
    )


def select_roi(field: BetaField, params: ExplorerParams, rng: np.random.Generator):
    """Pick the next target among cells whose variance exceeds the threshold.

    Returns the cell coordinate (uniformly random by default, or the argmax
    cell in deterministic mode), or None when every cell is at or below the
    threshold — the termination signal.
    """
    above = np.flatnonzero(field.variance.values > params.variance_threshold)
    if above.size == 0:
        return None
    if params.selection == "argmax":
        pick = above[int(np.argmax(field.variance.values[above]))]
    else:
        pick = int(rng.choice(above))
    return field.variance.spec.coords()[pick]


def roi_grid(
    center: tuple[float, float],
    half_width: float,
    spacing: float,
    workspace: tuple[float, float] | None = None,
) -> GridSpec:
    """Square reconstruction grid around a contact, shifted to stay inside
    the workspace (the window size is preserved so the contact may sit off
    center near a border)."""
    n = 2 * int(round(half_width / spacing)) + 1
    span = (n - 1) * spacing
    lo_x = center[0] - half_width
    lo_y = center[1] - half_width
    if workspace is not None:
        lo_x = min(max(lo_x, 0.0), max(workspace[0] - span, 0.0))
        lo_y = min(max(lo_y, 0.0), max(workspace[1] - span, 0.0))
    # Snap to the grid lattice so patch particles line up with world particles.
    lo_x = round(lo_x / spacing) * spacing
    lo_y = round(lo_y / spacing) * spacing
    return GridSpec(origin=(lo_x, lo_y), spacing=spacing, nx=n, ny=n)


def reconstruct_touch(
    post_cloud: np.ndarray,
    tactile: np.ndarray,
    roi_center: tuple[float, float],
    params: ExplorerParams,
    workspace: tuple[float, float] | None = None,
) -> ObservedShape:
    """Reconstruct the deformed patch from the cropped cloud plus tactile points.

    Fits a regression on the union of the in-window cloud points and the
    tactile contacts, then infers a dense grid over the window; the tactile
    anchors let the mean fill the occluded center.
    """
    spec = roi_grid(roi_center, params.roi_half_width, params.grid_spacing, workspace)
    return _reconstruct_on_grid(spec, post_cloud, tactile, params.touch_hyper)


def _reconstruct_on_grid(
    spec: GridSpec, cloud: np.ndarray, tactile: np.ndarray, hyper: Hyperparams
) -> ObservedShape:
    lo_x, lo_y = spec.origin
    hi_x = lo_x + (spec.nx - 1) * spec.spacing
    hi_y = lo_y + (spec.ny - 1) * spec.spacing
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    inside = (
        (cloud[:, 0] >= lo_x - _pad(spec))
        & (cloud[:, 0] <= hi_x + _pad(spec))
        & (cloud[:, 1] >= lo_y - _pad(spec))
        & (cloud[:, 1] <= hi_y + _pad(spec))
    )
    crop = cloud[inside]
    tactile = np.asarray(tactile, dtype=float).reshape(-1, 3)
    train = np.vstack([crop, tactile])
    if train.shape[0] == 0:
        raise EmptyRoi("no cloud points in the window and no tactile points")
    model = gprf.fit(TrainingSet(inputs=train[:, :2], targets=train[:, 2]), hyper)
    mean = gprf.predict_mean(model, spec.coords())
    return ObservedShape(points=np.column_stack([spec.coords(), mean]))


def _pad(spec: GridSpec) -> float:
    # Include cloud points up to half a cell outside the window.
    return 0.5 * spec.spacing


def update_beta_field(
    field: BetaField,
    sample: BetaSample,
    deformed_region: np.ndarray,
    hyper: Hyperparams | None = None,
) -> BetaField:
    """Retrain the deformability field with one estimate over its deformed cells.

    Every coordinate in ``deformed_region`` becomes a training pair with the
    sample's estimate as target; the model is refit from scratch and both
    grids are re-inferred. The reported mean is clamped to [0, 1).
    """
    region = np.asarray(deformed_region, dtype=float).reshape(-1, 2)
    if region.shape[0] == 0:
        raise ValueError("deformed region must be non-empty")
    targets = np.full(region.shape[0], sample.beta_hat)
    if field.model is not None:
        inputs = np.vstack([field.model.training.inputs, region])
        targets = np.concatenate([field.model.training.targets, targets])
        hyper = hyper or field.model.hyper
    else:
        inputs = region
        hyper = hyper or gprf.BETA_FIELD_DEFAULTS
    model = gprf.fit(TrainingSet(inputs=inputs, targets=targets), hyper)
    mean, variance = gprf.infer_grid(model, field.mean.spec)
    clamped = ScalarField(mean.spec, np.clip(mean.values, 0.0, _BETA_CEIL))
    return BetaField(mean=clamped, variance=variance, model=model)


def _probe_constraints(shape, contact_xy, tip_radius: float, depth: float) -> list[Constraint]:
    rest = shape.rest_positions
    pressed = np.flatnonzero(
        np.hypot(rest[:, 0] - contact_xy[0], rest[:, 1] - contact_xy[1]) <= tip_radius + 1e-9
    )
    return [
        Constraint(index=int(i), position=(rest[i, 0], rest[i, 1], rest[i, 2] - depth))
        for i in pressed
    ]


def _deformed_cells(
    spec: GridSpec, pre_heights: np.ndarray, post_heights: np.ndarray, threshold: float
) -> np.ndarray:
    moved = np.abs(pre_heights - post_heights) > threshold
    return spec.coords()[moved]


def run_exploration(
    scenario: Scenario,
    params: ExplorerParams,
    world: WorldState | None = None,
) -> ExplorationResult:
    """Run the full exploration loop on a scenario.

    Deterministic for a given (scenario, params): the selection generator
    and all observation seeds derive from ``params.seed``. Aborts with
    :class:`ExplorationAborted` after more than
    ``params.max_consecutive_failures`` consecutive non-converged pokes.
    """
    world = world or make_world(scenario, params.solver, particle_spacing=params.sim_spacing)
    seed_seq = np.random.SeedSequence(params.seed)
    select_rng = np.random.default_rng(seed_seq.spawn(1)[0])
    obs_seeds = seed_seq.generate_state(2 * params.max_interactions + 2)

    initial_cloud = observe(world, scenario.sensor, int(obs_seeds[0]))
    filtered = statistical_outlier_filter(initial_cloud, params.filter_k, params.filter_std_ratio)
    world_model = fit_world(filtered, params.world_hyper, params.max_world_points)
    field_spec = workspace_grid(scenario.workspace, params.grid_spacing)
    world_mean, world_variance = gprf.infer_grid(world_model, field_spec)

    fieldstate = initial_beta_field(scenario.workspace, params)
    w, h = scenario.workspace
    target = np.asarray(
        params.initial_target if params.initial_target is not None else (w / 2, h / 2),
        dtype=float,
    )

    records: list[InteractionRecord] = []
    failures = 0
    terminated = False
    for index in range(params.max_interactions):
        selection_variance = fieldstate.variance.value_at(target)
        pre_cloud = (
            initial_cloud if index == 0 else observe(world, scenario.sensor, int(obs_seeds[2 * index + 1]))
        )
        poked = poke(world, target)
        post_cloud = observe(world, scenario.sensor, int(obs_seeds[2 * index + 2]))
        contact = poked.contact_xy

        spec = roi_grid(contact, params.roi_half_width, params.grid_spacing, scenario.workspace)
        pre_heights = gprf.predict_mean(world_model, spec.coords())
        observed = _reconstruct_on_grid(spec, post_cloud, poked.tactile, params.touch_hyper)

        sim_spec = roi_grid(contact, params.roi_half_width, params.sim_spacing, scenario.workspace)
        patch_heights = gprf.predict_mean(world_model, sim_spec.coords()).reshape(
            sim_spec.ny, sim_spec.nx
        )
        patch = surface_patch(
            origin=sim_spec.origin,
            spacing=sim_spec.spacing,
            nx=sim_spec.nx,
            ny=sim_spec.ny,
            heights=patch_heights,
            cluster_size=params.solver.cluster_size,
            cluster_stride=params.solver.cluster_stride,
        )
        constraints = _probe_constraints(
            patch, contact, scenario.probe.tip_radius, scenario.probe.press_depth
        )
        sample = estimate_beta(
            patch,
            constraints,
            observed,
            beta_grid=params.beta_grid,
            params=params.solver,
            location=contact,
            warm_start=params.warm_start,
        )
        release(world)

        cells = _deformed_cells(
            spec, pre_heights, observed.points[:, 2], params.displacement_threshold
        )
        train_cells = (
            voxel_decimate(np.column_stack([cells, np.zeros(len(cells))]), params.train_spacing)[:, :2]
            if len(cells)
            else np.array([contact])
        )
        variance_before = fieldstate.variance.value_at(contact)
        fieldstate = update_beta_field(fieldstate, sample, train_cells, params.beta_hyper)
        variance_after = fieldstate.variance.value_at(contact)

        converged = poked.converged and sample.all_converged
        failures = 0 if converged else failures + 1
        records.append(
            InteractionRecord(
                index=index,
                target=(float(target[0]), float(target[1])),
                contact=contact,
                pre_cloud=pre_cloud,
                post_cloud=post_cloud,
                tactile=poked.tactile,
                sample=sample,
                selection_variance=float(selection_variance),
                variance_before=float(variance_before),
                variance_after=float(variance_after),
                variance_field=fieldstate.variance,
                converged=converged,
            )
        )
        logger.info(
            "interaction %d: target=(%.3f, %.3f) beta_hat=%.2f residual=%.5f",
            index, target[0], target[1], sample.beta_hat, sample.min_residual,
        )
        if failures > params.max_consecutive_failures:
            raise ExplorationAborted(
                f"{failures} consecutive non-converged pokes (limit {params.max_consecutive_failures})"
            )

        nxt = select_roi(fieldstate, params, select_rng)
        if nxt is None:
            terminated = True
            break
        target = nxt

    return ExplorationResult(
        field=fieldstate,
        records=tuple(records),
        world_model=world_model,
        world_mean=world_mean,
        world_variance=world_variance,
        terminated=terminated,
    )


# ---------------------------------------------------------------------------
# Field analysis (segmentation against ground truth, region counting)
# ---------------------------------------------------------------------------


def classify_cells(field: BetaField, betas) -> np.ndarray:
    """Assign each cell to the nearest of the given deformability levels."""
    betas = np.asarray(sorted(betas), dtype=float)
    return betas[np.argmin(np.abs(field.mean.values[:, None] - betas[None, :]), axis=1)]


def segmentation_accuracy(field: BetaField, scenario: Scenario) -> float:
    """Fraction of cells whose nearest-level class matches the true region.

    With two configured levels this is exactly midpoint thresholding of the
    field mean against the ground-truth map.
    """
    levels = scenario.distinct_betas()
    predicted = classify_cells(field, levels)
    coords = field.mean.spec.coords()
    truth = np.array([true_beta_at(scenario, xy) for xy in coords])
    return float(np.mean(predicted == truth))


def count_regions(field: BetaField, min_separation: float = 0.15, min_area_fraction: float = 0.03) -> int:
    """Number of spatial regions found by recursive threshold segmentation.

    Cell values are split at the variance-maximizing threshold while the
    resulting class means stay at least ``min_separation`` apart; cells are
    then labeled by value class and contiguous blobs (4-connectivity) no
    smaller than ``min_area_fraction`` of the workspace are counted.
    """
    values = field.mean.values
    cuts = sorted(_recursive_splits(np.sort(values), min_separation))
    labels = np.digitize(values, cuts).reshape(field.mean.spec.ny, field.mean.spec.nx)
    min_cells = max(1, int(min_area_fraction * values.size))
    regions = 0
    for lab in np.unique(labels):
        blobs, nblobs = ndimage.label(labels == lab)
        for b in range(1, nblobs + 1):
            if int((blobs == b).sum()) >= min_cells:
                regions += 1
    return max(regions, 1)


def _recursive_splits(sorted_values: np.ndarray, min_separation: float) -> list[float]:
    """Variance-maximizing binary splits, recursing while classes separate."""
    n = sorted_values.size
    if n < 2 or sorted_values[-1] - sorted_values[0] < min_separation:
        return []
    csum = np.cumsum(sorted_values)
    total = csum[-1]
    k = np.arange(1, n)
    mean_lo = csum[:-1] / k
    mean_hi = (total - csum[:-1]) / (n - k)
    between = k * (n - k) * (mean_lo - mean_hi) ** 2
    split = int(np.argmax(between))
    if mean_hi[split] - mean_lo[split] < min_separation:
        return []
    cut = 0.5 * (sorted_values[split] + sorted_values[split + 1])
    return (
        _recursive_splits(sorted_values[: split + 1], min_separation)
        + [cut]
        + _recursive_splits(sorted_values[split + 1 :], min_separation)
    )
