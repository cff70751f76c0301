"""Gaussian random field regression over planar coordinates.

A zero-mean Gaussian process with a squared-exponential kernel is fit to
scattered ``(x, y) -> value`` samples (surface heights in metres, or a
dimensionless per-location material parameter) and queried for posterior
mean and variance at arbitrary points or on dense regular grids.

The kernel matrix is factorized once at fit time (Cholesky) and the factor
is reused for every subsequent query, so models are cheap to interrogate
repeatedly. Models are immutable after ``fit``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import ElastimapError


class FactorizationFailure(ElastimapError):
    """The regularized kernel matrix is numerically non-positive-definite.

    Typically signals duplicate training inputs with zero observation noise
    or degenerate hyperparameters.
    """


# Added to the kernel diagonal when the observation noise is exactly zero,
# so that noise-free interpolation stays factorizable on close (but distinct)
# inputs.
DIAGONAL_JITTER = 1e-10

# Queries are evaluated in bounded chunks to keep the cross-covariance
# blocks from ballooning on dense grids. Chunking does not change results:
# every query column is solved independently.
_QUERY_CHUNK = 4096


@dataclass(frozen=True)
class Hyperparams:
    """Squared-exponential kernel hyperparameters.

    Attributes
    ----------
    sigma_e : float
        Signal amplitude, same units as the targets. The prior variance at
        any point is ``sigma_e**2``.
    sigma_w : float
        Squared length scale (m^2): the divisor applied to the squared
        Euclidean distance inside the exponential.
    sigma_n : float
        Observation noise standard deviation, target units.
    """

    sigma_e: float
    sigma_w: float
    sigma_n: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma_e > 0:
            raise ValueError(f"sigma_e must be positive, got {self.sigma_e}")
        if not self.sigma_w > 0:
            raise ValueError(f"sigma_w must be positive, got {self.sigma_w}")
        if self.sigma_n < 0:
            raise ValueError(f"sigma_n must be non-negative, got {self.sigma_n}")


# Defaults for the three regression roles in the pipeline. All of them can
# be overridden from the run configuration.
GEOMETRY_DEFAULTS = Hyperparams(sigma_e=0.05, sigma_w=0.005, sigma_n=0.003)
TOUCH_DEFAULTS = Hyperparams(sigma_e=0.03, sigma_w=0.0008, sigma_n=0.002)
BETA_FIELD_DEFAULTS = Hyperparams(sigma_e=0.5, sigma_w=0.18, sigma_n=0.02)


@dataclass(frozen=True)
class TrainingSet:
    """Scattered planar samples: ``inputs`` (N, 2) and ``targets`` (N,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if inputs.ndim != 2 or inputs.shape[1] != 2:
            raise ValueError(f"inputs must have shape (N, 2), got {inputs.shape}")
        if targets.shape != (inputs.shape[0],):
            raise ValueError("inputs and targets must have matching lengths")
        if inputs.shape[0] < 1:
            raise ValueError("training set must contain at least one sample")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("training data must be finite")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class GprModel:
    """A fit Gaussian random field.

    Holds the training set, the hyperparameters, the lower Cholesky factor
    of the regularized kernel matrix, and the precomputed weight vector
    (the kernel solve against the targets).
    """

    training: TrainingSet
    hyper: Hyperparams
    factor: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class GridSpec:
    """Regular query grid: ``nx`` by ``ny`` nodes starting at ``origin``.

    Node ``(i, j)`` (row ``i``, column ``j``) sits at
    ``origin + (j * spacing, i * spacing)``; values are stored row-major.
    """

    origin: tuple[float, float]
    spacing: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one node per axis, got {self.nx}x{self.ny}")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def coords(self) -> np.ndarray:
        """All node coordinates, shape (nx * ny, 2), row-major."""
        xs = self.origin[0] + self.spacing * np.arange(self.nx)
        ys = self.origin[1] + self.spacing * np.arange(self.ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def nearest_index(self, xy) -> int:
        """Flat index of the node closest to ``xy``."""
        j = int(np.clip(round((xy[0] - self.origin[0]) / self.spacing), 0, self.nx - 1))
        i = int(np.clip(round((xy[1] - self.origin[1]) / self.spacing), 0, self.ny - 1))
        return i * self.nx + j


@dataclass(frozen=True)
class ScalarField:
    """Scalar values sampled on a :class:`GridSpec`, row-major."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.spec.size,):
            raise ValueError(f"expected {self.spec.size} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    def grid(self) -> np.ndarray:
        """Values reshaped to (ny, nx)."""
        return self.values.reshape(self.spec.ny, self.spec.nx)

    def value_at(self, xy) -> float:
        """Value of the node nearest to ``xy``."""
        return float(self.values[self.spec.nearest_index(xy)])


def kernel_eval(xi, xj, hyper: Hyperparams) -> float:
    """Squared-exponential covariance between two planar points.

    ``sigma_e**2 * exp(-||xi - xj||^2 / sigma_w)``; symmetric in its
    arguments and bounded by ``sigma_e**2``.
    """
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    d2 = float(np.sum((xi - xj) ** 2))
    return hyper.sigma_e**2 * float(np.exp(-d2 / hyper.sigma_w))


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    """Cross-covariance block between two point sets, shape (len(a), len(b))."""
    d2 = cdist(a, b, "sqeuclidean")
    return hyper.sigma_e**2 * np.exp(-d2 / hyper.sigma_w)


def fit(training: TrainingSet, hyper: Hyperparams) -> GprModel:
    """Fit a Gaussian random field to a training set.

    Builds the kernel matrix, adds the noise variance (or a small jitter
    when the noise is exactly zero) to the diagonal, factorizes once, and
    precomputes the weight vector used by every mean prediction.

    Raises
    ------
    FactorizationFailure
        If the regularized kernel matrix is not positive definite; with
        zero noise this is raised eagerly on coincident training inputs.
    """
    if hyper.sigma_n == 0.0:
        unique = np.unique(training.inputs, axis=0)
        if unique.shape[0] < len(training):
            raise FactorizationFailure(
                "coincident training inputs with zero observation noise"
            )
    k = kernel_matrix(training.inputs, training.inputs, hyper)
    ridge = hyper.sigma_n**2 if hyper.sigma_n > 0 else DIAGONAL_JITTER
    k[np.diag_indices_from(k)] += ridge
    try:
        factor = linalg.cholesky(k, lower=True)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"kernel matrix is not positive definite: {exc}") from exc
    alpha = linalg.cho_solve((factor, True), training.targets)
    return GprModel(training=training, hyper=hyper, factor=factor, alpha=alpha)


def predict_mean(model: GprModel, test) -> np.ndarray:
    """Posterior mean at the given query points, shape (M,)."""
    test = np.atleast_2d(np.asarray(test, dtype=float))
    out = np.empty(test.shape[0])
    for lo in range(0, test.shape[0], _QUERY_CHUNK):
        chunk = test[lo : lo + _QUERY_CHUNK]
        ks = kernel_matrix(model.training.inputs, chunk, model.hyper)
        out[lo : lo + chunk.shape[0]] = ks.T @ model.alpha
    return out


def predict_variance(model: GprModel, test) -> np.ndarray:
    """Posterior variance at the given query points, shape (M,).

    Values lie in ``[0, sigma_e**2]`` up to small numerical slack.
    """
    test = np.atleast_2d(np.asarray(test, dtype=float))
    prior = model.hyper.sigma_e**2
    out = np.empty(test.shape[0])
    for lo in range(0, test.shape[0], _QUERY_CHUNK):
        chunk = test[lo : lo + _QUERY_CHUNK]
        ks = kernel_matrix(model.training.inputs, chunk, model.hyper)
        v = linalg.solve_triangular(model.factor, ks, lower=True)
        out[lo : lo + chunk.shape[0]] = prior - np.einsum("ij,ij->j", v, v)
    return out


def infer_grid(model: GprModel, spec: GridSpec) -> tuple[ScalarField, ScalarField]:
    """Posterior mean and variance fields on a regular grid.

    Equivalent to stacking per-point predictions over ``spec.coords()``.
    """
    coords = spec.coords()
    mean = predict_mean(model, coords)
    variance = predict_variance(model, coords)
    return ScalarField(spec, mean), ScalarField(spec, variance)
