"""Meshless shape-matching solver for particle surfaces.

Particles carry no mesh; instead, overlapping clusters of particles each
compute the transform that best maps their rest configuration onto their
current one, and every particle is pulled a fractional step toward the
average of its clusters' goal positions. The per-cluster transform is a
blend, controlled by a deformability weight ``beta`` in ``[0, 1)``, between
the best rigid motion and the best linear (or quadratic) fit: ``beta = 0``
behaves like a rigid body, ``beta -> 1`` follows the observed deformation
freely.

Equilibrium shapes are obtained quasi-statically: a disturbance (pinned
plus prescribed particles) defines the intermediate configuration, the
per-cluster transforms are fit against it, and the relaxation sweeps
{blend goals -> move unconstrained particles toward them -> re-clamp}
until the largest per-particle move falls under a tolerance. The surface
is purely elastic: with the constraints removed it relaxes back to rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ElastimapError


class ZeroMass(ElastimapError):
    """Total particle mass is not positive."""


class DegenerateShape(ElastimapError):
    """A moment matrix is singular even after regularization."""


class SingularMatrix(ElastimapError):
    """Polar decomposition requested for a (near-)singular matrix."""


class BadClusterSpec(ElastimapError):
    """Cluster tiling parameters violate their preconditions."""


class UncoveredParticle(ElastimapError):
    """Some particle belongs to no cluster."""


MODES = ("rigid", "linear", "quadratic")

# Tikhonov regularization scale for (near-)planar rest shapes: the moment
# matrices of a flat particle grid are rank deficient in the normal
# direction, and lambda = 1e-9 * trace keeps the fits well posed without
# perturbing the observable directions.
_MOMENT_REG = 1e-9

_POLAR_DET_FLOOR = 1e-12


@dataclass(frozen=True)
class SolverParams:
    """Relaxation controls plus the cluster tiling used by shape builders.

    ``step`` is the fraction of the goal offset applied per sweep; ``eps``
    is the convergence threshold on the largest per-particle move (m).
    """

    step: float = 0.8
    eps: float = 1e-6
    max_iters: int = 2000
    mode: str = "quadratic"
    cluster_size: int = 3
    cluster_stride: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.step <= 1:
            raise ValueError(f"step must be in (0, 1], got {self.step}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class Constraint:
    """Pin one particle at a prescribed position."""

    index: int
    position: tuple[float, float, float]


@dataclass
class RestShape:
    """A particle surface: rest positions, masses, clusters, pinned mask.

    ``clusters`` is a list of particle-index arrays; every particle must be
    covered by at least one cluster. ``fixed_mask`` marks boundary particles
    that are held at their rest positions throughout any simulation.
    """

    rest_positions: np.ndarray
    masses: np.ndarray
    clusters: list[np.ndarray]
    fixed_mask: np.ndarray
    grid_dims: tuple[int, int] | None = None
    spacing: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.rest_positions = np.asarray(self.rest_positions, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        self.fixed_mask = np.asarray(self.fixed_mask, dtype=bool)
        n = self.rest_positions.shape[0]
        if self.rest_positions.ndim != 2 or self.rest_positions.shape[1] != 3:
            raise ValueError("rest_positions must have shape (N, 3)")
        if self.masses.shape != (n,) or np.any(self.masses <= 0):
            raise ValueError("masses must be positive with one entry per particle")
        if self.fixed_mask.shape != (n,):
            raise ValueError("fixed_mask must have one entry per particle")
        self.clusters = [np.asarray(c, dtype=int) for c in self.clusters]
        covered = np.zeros(n, dtype=bool)
        for c in self.clusters:
            if c.size == 0:
                raise ValueError("clusters must be non-empty")
            if c.min() < 0 or c.max() >= n:
                raise ValueError("cluster index out of range")
            covered[c] = True
        if not covered.all():
            raise UncoveredParticle("every particle must belong to at least one cluster")

    @property
    def num_particles(self) -> int:
        return self.rest_positions.shape[0]


@dataclass
class DeformState:
    """Current particle positions and, optionally, the latest goals."""

    positions: np.ndarray
    goals: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)


@dataclass(frozen=True)
class ShapeTransform:
    """Best-fit transform of a whole shape onto a deformed state."""

    rotation: np.ndarray        # (3, 3), proper rotation
    linear: np.ndarray          # (3, 3)
    quadratic: np.ndarray       # (3, 9)
    t0: np.ndarray              # rest center of mass
    t: np.ndarray               # deformed center of mass


@dataclass(frozen=True)
class SimResult:
    """Relaxation output; ``converged`` is False when the iteration budget ran out."""

    positions: np.ndarray
    converged: bool
    iterations: int


def make_clusters(grid_dims: tuple[int, int], cluster_size: int, stride: int) -> list[np.ndarray]:
    """Tile a particle grid with overlapping square clusters.

    Windows of ``cluster_size`` x ``cluster_size`` particles are placed every
    ``stride`` particles along both axes; a final window is appended per axis
    when needed so the trailing edge is always covered. ``stride`` must be
    smaller than ``cluster_size`` so neighboring windows overlap.
    """
    nx, ny = grid_dims
    if cluster_size < 2:
        raise BadClusterSpec(f"cluster_size must be >= 2, got {cluster_size}")
    if not 1 <= stride < cluster_size:
        raise BadClusterSpec(f"stride must satisfy 1 <= stride < cluster_size, got {stride}")
    if nx < cluster_size or ny < cluster_size:
        raise BadClusterSpec(
            f"grid {nx}x{ny} is smaller than the cluster size {cluster_size}"
        )

    def starts(n: int) -> list[int]:
        out = list(range(0, n - cluster_size + 1, stride))
        if out[-1] != n - cluster_size:
            out.append(n - cluster_size)
        return out

    window_x = np.arange(cluster_size)
    clusters = []
    for y0 in starts(ny):
        rows = (y0 + window_x)[:, None] * nx
        for x0 in starts(nx):
            clusters.append((rows + (x0 + window_x)[None, :]).ravel())
    return clusters


def surface_patch(
    origin: tuple[float, float],
    spacing: float,
    nx: int,
    ny: int,
    heights,
    cluster_size: int = 3,
    cluster_stride: int = 1,
) -> RestShape:
    """Build a pinned-edge particle grid over a rectangular patch.

    ``heights`` is a scalar or an (ny, nx) array of rest heights. Edge
    particles are pinned (the surface is held at its rim), masses are
    uniform.
    """
    xs = origin[0] + spacing * np.arange(nx)
    ys = origin[1] + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    z = np.broadcast_to(np.asarray(heights, dtype=float), (ny, nx))
    positions = np.column_stack([gx.ravel(), gy.ravel(), z.ravel()])
    fixed = np.zeros((ny, nx), dtype=bool)
    fixed[0, :] = fixed[-1, :] = True
    fixed[:, 0] = fixed[:, -1] = True
    return RestShape(
        rest_positions=positions,
        masses=np.ones(nx * ny),
        clusters=make_clusters((nx, ny), cluster_size, cluster_stride),
        fixed_mask=fixed.ravel(),
        grid_dims=(nx, ny),
        spacing=spacing,
    )


# ---------------------------------------------------------------------------
# Whole-shape transform fits
# ---------------------------------------------------------------------------


def optimal_translations(shape: RestShape, state: DeformState) -> tuple[np.ndarray, np.ndarray]:
    """Mass-weighted centers of the rest shape and the deformed state."""
    mc = float(shape.masses.sum())
    if mc <= 0:
        raise ZeroMass(f"total mass must be positive, got {mc}")
    t0 = shape.masses @ shape.rest_positions / mc
    t = shape.masses @ state.positions / mc
    return t0, t


def _regularized_inverse(moment: np.ndarray) -> np.ndarray:
    reg = moment + _MOMENT_REG * np.trace(moment) * np.eye(moment.shape[0])
    try:
        inv = np.linalg.inv(reg)
    except np.linalg.LinAlgError as exc:
        raise DegenerateShape(f"moment matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(inv)):
        raise DegenerateShape("moment matrix inversion produced non-finite values")
    return inv


def _quadratic_basis(s: np.ndarray) -> np.ndarray:
    """Extend offsets (..., 3) with squares and mixed products to (..., 9)."""
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    return np.stack(
        [sx, sy, sz, sx * sx, sy * sy, sz * sz, sx * sy, sy * sz, sz * sx], axis=-1
    )


def optimal_linear(shape: RestShape, state: DeformState) -> tuple[np.ndarray, np.ndarray]:
    """Best linear map from rest offsets to deformed offsets.

    Returns ``(A, A_r)`` where ``A = A_r @ inv(A_s)``, ``A_r`` is the
    rest/deformed cross moment and ``A_s`` the (regularized) rest scaling
    moment. Raises :class:`DegenerateShape` when the scaling moment cannot
    be inverted even after regularization.
    """
    t0, t = optimal_translations(shape, state)
    s = shape.rest_positions - t0
    r = state.positions - t
    w = shape.masses[:, None]
    a_r = (w * r).T @ s
    a_s = (w * s).T @ s
    a = a_r @ _regularized_inverse(a_s)
    return a, a_r


def polar_rotation(a_r: np.ndarray) -> np.ndarray:
    """Rotational factor of a non-singular 3x3 matrix.

    Uses the singular value decomposition; if the input is orientation
    reversing, the axis with the smallest singular value is flipped so the
    result is always a proper rotation.
    """
    a_r = np.asarray(a_r, dtype=float)
    if abs(np.linalg.det(a_r)) < _POLAR_DET_FLOOR:
        raise SingularMatrix("matrix is numerically singular; no unique rotation factor")
    return _polar_svd(a_r[None])[0]


def _polar_svd(a: np.ndarray) -> np.ndarray:
    """Batched proper-rotation polar factor, tolerant of rank deficiency."""
    u, _, vt = np.linalg.svd(a)
    det = np.linalg.det(u @ vt)
    flip = np.ones(a.shape[:-2] + (3,))
    flip[..., 2] = np.where(det < 0, -1.0, 1.0)
    return (u * flip[..., None, :]) @ vt


def quadratic_transform(shape: RestShape, state: DeformState) -> np.ndarray:
    """Best quadratic map (3x9) from extended rest offsets to deformed offsets."""
    t0, t = optimal_translations(shape, state)
    s = shape.rest_positions - t0
    r = state.positions - t
    sbar = _quadratic_basis(s)
    w = shape.masses[:, None]
    abar_r = (w * r).T @ sbar
    moment = (w * sbar).T @ sbar
    return abar_r @ _regularized_inverse(moment)


def fit_transform(shape: RestShape, state: DeformState) -> ShapeTransform:
    """Fit rotation, linear, and quadratic transforms of the whole shape."""
    t0, t = optimal_translations(shape, state)
    a, a_r = optimal_linear(shape, state)
    rotation = _polar_svd(a_r[None])[0]
    quadratic = quadratic_transform(shape, state)
    return ShapeTransform(rotation=rotation, linear=a, quadratic=quadratic, t0=t0, t=t)


def goal_positions(shape: RestShape, state: DeformState, beta: float, mode: str) -> np.ndarray:
    """Goal positions for the whole shape treated as a single cluster.

    ``beta`` blends the rigid transform with the fitted linear or quadratic
    one; at ``beta = 0`` every mode reduces to the rigid goals.
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    tf = fit_transform(shape, state)
    s = shape.rest_positions - tf.t0
    if mode == "rigid":
        return s @ tf.rotation.T + tf.t
    if mode == "linear":
        blended = (1.0 - beta) * tf.rotation + beta * tf.linear
        return s @ blended.T + tf.t
    embedded = np.hstack([tf.rotation, np.zeros((3, 6))])
    blended = (1.0 - beta) * embedded + beta * tf.quadratic
    return _quadratic_basis(s) @ blended.T + tf.t


def blend_clusters(
    per_cluster_goals: list[tuple[np.ndarray, np.ndarray]],
    num_particles: int | None = None,
) -> np.ndarray:
    """Average per-cluster goals into one goal per particle.

    Each entry pairs a cluster index array with that cluster's goal
    positions. A particle covered by several clusters receives the plain
    average of its goals.
    """
    if num_particles is None:
        num_particles = 1 + max(int(idx.max()) for idx, _ in per_cluster_goals)
    acc = np.zeros((num_particles, 3))
    counts = np.zeros(num_particles)
    for idx, goals in per_cluster_goals:
        acc[idx] += goals
        counts[idx] += 1
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise UncoveredParticle(f"particle {missing} appears in no cluster")
    return acc / counts[:, None]


# ---------------------------------------------------------------------------
# Batched per-cluster machinery
# ---------------------------------------------------------------------------


class _ClusterGroup:
    """Clusters of equal size stacked for vectorized fitting.

    Everything that depends only on the rest shape (centers, offsets,
    regularized moment inverses) is precomputed once and shared by all
    simulations over the same shape.
    """

    def __init__(self, shape: RestShape, clusters: list[np.ndarray], mode: str):
        self.idx = np.stack(clusters)                              # (C, m)
        w = shape.masses[self.idx]                                 # (C, m)
        self.w = w
        self.mc = w.sum(axis=1)                                    # (C,)
        p0 = shape.rest_positions[self.idx]                        # (C, m, 3)
        self.t0 = (w[..., None] * p0).sum(axis=1) / self.mc[:, None]
        self.s = p0 - self.t0[:, None, :]                          # (C, m, 3)
        self.ws = w[..., None] * self.s
        if mode == "linear":
            a_s = self.ws.transpose(0, 2, 1) @ self.s              # (C, 3, 3)
            self.lin_inv = _batch_regularized_inverse(a_s)
        if mode == "quadratic":
            self.sbar = _quadratic_basis(self.s)                   # (C, m, 9)
            self.wsbar = w[..., None] * self.sbar
            moment = self.wsbar.transpose(0, 2, 1) @ self.sbar     # (C, 9, 9)
            self.quad_inv = _batch_regularized_inverse(moment)


def _batch_regularized_inverse(moment: np.ndarray) -> np.ndarray:
    dim = moment.shape[-1]
    trace = np.einsum("...ii->...", moment)
    reg = moment + (_MOMENT_REG * trace)[..., None, None] * np.eye(dim)
    try:
        inv = np.linalg.inv(reg)
    except np.linalg.LinAlgError as exc:
        raise DegenerateShape(f"cluster moment matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(inv)):
        raise DegenerateShape("cluster moment inversion produced non-finite values")
    return inv


def _prepare_groups(shape: RestShape, mode: str) -> tuple[list[_ClusterGroup], np.ndarray]:
    """Group clusters by size and cache the batched rest-shape data."""
    key = ("groups", mode)
    if key not in shape._cache:
        by_size: dict[int, list[np.ndarray]] = {}
        for c in shape.clusters:
            by_size.setdefault(c.size, []).append(c)
        groups = [_ClusterGroup(shape, cs, mode) for _, cs in sorted(by_size.items())]
        counts = np.zeros(shape.num_particles)
        for c in shape.clusters:
            counts[c] += 1
        shape._cache[key] = (groups, counts)
    return shape._cache[key]


def _group_goals(
    group: _ClusterGroup, positions: np.ndarray, beta: float, mode: str
) -> np.ndarray:
    """Goal positions for one cluster group fit against ``positions``."""
    p = positions[group.idx]                                        # (C, m, 3)
    t = (group.w[..., None] * p).sum(axis=1) / group.mc[:, None]    # (C, 3)
    r_off = p - t[:, None, :]
    # Cross moment sum_i m_i r_i s_i^T, batched over clusters.
    a_r = np.ascontiguousarray(r_off.transpose(0, 2, 1)) @ group.ws  # (C, 3, 3)
    rot = _polar_svd(a_r)
    if mode == "rigid":
        goals = group.s @ rot.transpose(0, 2, 1)
    elif mode == "linear":
        a = a_r @ group.lin_inv
        blended = (1.0 - beta) * rot + beta * a
        goals = group.s @ blended.transpose(0, 2, 1)
    else:
        abar = (np.ascontiguousarray(r_off.transpose(0, 2, 1)) @ group.wsbar) @ group.quad_inv
        embedded = np.concatenate([rot, np.zeros((rot.shape[0], 3, 6))], axis=2)
        blended = (1.0 - beta) * embedded + beta * abar
        goals = group.sbar @ blended.transpose(0, 2, 1)
    return goals + t[:, None, :]


def per_cluster_goals(
    shape: RestShape, state: DeformState, beta: float, mode: str
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Goal positions of every cluster, fit independently."""
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    groups, _ = _prepare_groups(shape, mode)
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for group in groups:
        goals = _group_goals(group, state.positions, beta, mode)
        for row, idx in enumerate(group.idx):
            out.append((idx, goals[row]))
    return out


def blended_goal_field(shape: RestShape, positions: np.ndarray, beta: float, mode: str) -> np.ndarray:
    """Cluster-averaged goal positions for the whole particle set."""
    groups, counts = _prepare_groups(shape, mode)
    n = shape.num_particles
    acc = np.zeros((n, 3))
    for group in groups:
        goals = _group_goals(group, positions, beta, mode)
        flat = group.idx.ravel()
        gf = goals.reshape(-1, 3)
        for k in range(3):
            acc[:, k] += np.bincount(flat, weights=gf[:, k], minlength=n)
    return acc / counts[:, None]


def simulate(
    shape: RestShape,
    constraints: list[Constraint],
    beta: float,
    params: SolverParams | None = None,
    initial: np.ndarray | None = None,
) -> SimResult:
    """Relax a constrained surface to its equilibrium for a given ``beta``.

    The disturbance defines an intermediate configuration: the rest shape
    with pinned particles held and constrained particles moved to their
    prescribed positions. The per-cluster transforms are fit against that
    configuration, and the relaxation pulls every unconstrained particle
    toward the blended goal field until the largest per-sweep move drops
    below ``params.eps``. Deformation is therefore memoryless: removing the
    constraints relaxes the surface back to rest.

    ``initial`` only seeds the relaxation trajectory (useful to warm start
    a sweep over nearby ``beta`` values); it does not change the fit. If
    the iteration budget runs out, the best positions so far are returned
    with ``converged=False``.
    """
    params = params or SolverParams()
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    n = shape.num_particles
    rest = shape.rest_positions
    for c in constraints:
        if not 0 <= c.index < n:
            raise ValueError(f"constraint index {c.index} out of range")
    cons_idx = np.array([c.index for c in constraints], dtype=int)
    cons_pos = (
        np.array([c.position for c in constraints], dtype=float).reshape(-1, 3)
        if constraints
        else np.zeros((0, 3))
    )

    intermediate = rest.copy()
    intermediate[shape.fixed_mask] = rest[shape.fixed_mask]
    if cons_idx.size:
        intermediate[cons_idx] = cons_pos
    goal = blended_goal_field(shape, intermediate, beta, params.mode)

    positions = (intermediate if initial is None else np.asarray(initial, dtype=float)).copy()
    positions[shape.fixed_mask] = rest[shape.fixed_mask]
    if cons_idx.size:
        positions[cons_idx] = cons_pos

    converged = False
    iterations = 0
    for _ in range(params.max_iters):
        candidate = positions + params.step * (goal - positions)
        candidate[shape.fixed_mask] = rest[shape.fixed_mask]
        if cons_idx.size:
            candidate[cons_idx] = cons_pos
        delta = np.sqrt(((candidate - positions) ** 2).sum(axis=1).max())
        if delta < params.eps:
            converged = True
            break
        positions = candidate
        iterations += 1
    return SimResult(positions=positions, converged=converged, iterations=iterations)
