"""Kernel, discrete domain, sample storage and Gaussian process posterior.

The domain is the unit box ``[0, 1]^n`` discretized into a cell-centered
uniform lattice. All optimization and all integrals happen on that grid,
which keeps set operations (safe set, expanders, sub-domain masks) exact
and cheap.

The Gaussian process is the standard noisy-interpolation posterior

    mu(a)     = k_A(a)^T (K_A + noise^2 I)^-1 y
    sigma2(a) = k(a, a) - k_A(a)^T (K_A + noise^2 I)^-1 k_A(a)

computed through a Cholesky factorization of the regularized Gram matrix.
The kernel is Matern 3/2 with unit output scale, so prior variance is one
everywhere and posterior variances live in ``[0, 1]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import NumericError

log = logging.getLogger(__name__)

_JITTER = 1e-8
_VAR_CLAMP_WARN = -1e-9


@dataclass(frozen=True)
class KernelConfig:
    """Stationary kernel choice. Output scale is fixed at one.

    Only the Matern 3/2 family is implemented; ``lengthscale`` is the
    single free hyperparameter.
    """
    lengthscale: float = 0.1
    family: str = "matern32"

    def __post_init__(self):
        if self.family != "matern32":
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")


def pairwise_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows of ``x`` (m, n) and ``y`` (p, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    diff = x[:, None, :] - y[None, :, :]
    if x.shape[1] == 1:
        return np.abs(diff[:, :, 0])
    return np.sqrt(np.sum(diff * diff, axis=2))


def matern32(dist, lengthscale: float):
    """Matern 3/2 correlation for (arrays of) distances."""
    s = (math.sqrt(3.0) / lengthscale) * np.asarray(dist, dtype=float)
    return (1.0 + s) * np.exp(-s)


def kernel_matrix(x: np.ndarray, y: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Gram block k(x_i, y_j) for row-stacked inputs."""
    return matern32(pairwise_dist(x, y), cfg.lengthscale)


def kernel_eval(a, b, cfg: KernelConfig) -> float:
    """Kernel value between two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError("points must share a dimension")
    return float(matern32(np.sqrt(np.sum((a - b) ** 2)), cfg.lengthscale))


@dataclass(frozen=True)
class GridDomain:
    """Cell-centered uniform lattice on the unit box.

    ``resolution[k]`` cells along dimension ``k`` put points at
    ``(i + 0.5) / resolution[k]``, so a midpoint Riemann sum with
    ``cell_volume`` weights integrates constants over ``[0, 1]^n``
    exactly. Points are ordered row-major (last dimension fastest).
    """
    resolution: tuple[int, ...]
    points: np.ndarray = field(repr=False, compare=False)
    spacing: tuple[float, ...]
    cell_volume: float

    @classmethod
    def uniform(cls, resolution) -> "GridDomain":
        if np.isscalar(resolution):
            resolution = (int(resolution),)
        resolution = tuple(int(r) for r in resolution)
        if len(resolution) == 0 or any(r < 1 for r in resolution):
            raise ValueError("resolution must be positive in every dimension")
        axes = [(np.arange(r) + 0.5) / r for r in resolution]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        points.setflags(write=False)
        spacing = tuple(1.0 / r for r in resolution)
        return cls(resolution=resolution, points=points, spacing=spacing,
                   cell_volume=float(np.prod(spacing)))

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def nearest_index(self, point) -> int:
        """Flat index of the grid point closest to ``point``."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        if point.shape != (self.dim,):
            raise ValueError("point dimension does not match the grid")
        multi = []
        for k, r in enumerate(self.resolution):
            i = int(np.clip(np.floor(point[k] * r), 0, r - 1))
            multi.append(i)
        return int(np.ravel_multi_index(multi, self.resolution))


class SampleSet:
    """Measured parameters with aligned per-index measurement channels.

    Parameters are stored as flat grid indices, which enforces that every
    sample lies on the grid. The measurement channels are keyed by the
    function index ``i`` (0 is the reward, positive indices are
    constraints). Instances are immutable; :meth:`append` returns a new
    set with the observation added at the end.
    """

    def __init__(self, grid: GridDomain, indices=(), values=None,
                 function_indices=(0, 1)):
        self.grid = grid
        self.indices = tuple(int(j) for j in indices)
        self.function_indices = tuple(sorted(int(i) for i in function_indices))
        if len(self.function_indices) == 0 or self.function_indices[0] != 0:
            raise ValueError("function indices must include 0 (the reward)")
        values = {} if values is None else dict(values)
        self._values = {}
        for i in self.function_indices:
            col = tuple(float(v) for v in values.get(i, ()))
            if len(col) != len(self.indices):
                raise ValueError(f"channel {i} has {len(col)} values for "
                                 f"{len(self.indices)} parameters")
            self._values[i] = col
        for j in self.indices:
            if not 0 <= j < grid.num_points:
                raise ValueError(f"sample index {j} is off the grid")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def params(self) -> np.ndarray:
        """Sample coordinates, shape (N, n)."""
        return self.grid.points[list(self.indices)].reshape(len(self.indices),
                                                            self.grid.dim)

    def targets(self, i: int) -> np.ndarray:
        return np.asarray(self._values[int(i)], dtype=float)

    def append(self, index: int, measurements: dict) -> "SampleSet":
        """New sample set with one observation (all channels) appended."""
        missing = [i for i in self.function_indices if i not in measurements]
        if missing:
            raise ValueError(f"measurements missing for channels {missing}")
        values = {i: self._values[i] + (float(measurements[i]),)
                  for i in self.function_indices}
        return SampleSet(self.grid, self.indices + (int(index),), values,
                         self.function_indices)


@dataclass(frozen=True)
class GpPosterior:
    """Cholesky-form posterior for one measurement channel.

    ``chol`` is the lower factor of ``K + noise^2 I`` over the samples
    and ``weights`` solves ``(K + noise^2 I) w = y``, so the posterior
    mean is the kernel expansion with coefficients ``weights``.
    """
    grid: GridDomain
    kernel: KernelConfig
    noise_std: float
    channel: int
    params: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def num_samples(self) -> int:
        return self.params.shape[0]


def _chol_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a small diagonal jitter."""
    try:
        return sla.cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        log.warning("Cholesky failed, retrying with jitter %.0e", _JITTER)
    try:
        return sla.cholesky(a + _JITTER * np.eye(a.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky factorization failed after jitter "
                           f"retry: {exc}") from exc


def gp_fit(samples: SampleSet, i: int, noise_std: float,
           cfg: KernelConfig) -> GpPosterior:
    """Fit the posterior of channel ``i`` to the current samples.

    An empty sample set yields the prior (zero mean, unit variance).
    """
    if not noise_std > 0:
        raise ValueError("noise_std must be positive")
    params = samples.params
    y = samples.targets(i)
    n = params.shape[0]
    if n == 0:
        empty = np.zeros((0, 0))
        return GpPosterior(samples.grid, cfg, float(noise_std), int(i),
                           params, y, empty, empty, np.zeros(0))
    gram = kernel_matrix(params, params, cfg)
    chol = _chol_with_jitter(gram + noise_std ** 2 * np.eye(n))
    weights = sla.cho_solve((chol, True), y)
    return GpPosterior(samples.grid, cfg, float(noise_std), int(i),
                       params, y, gram, chol, weights)


def gp_predict(post: GpPosterior, query: np.ndarray):
    """Posterior mean and variance at the query points (m, n).

    Variances are clamped to ``[0, 1]``; a clamp beyond numerical dust
    (below -1e-9) is logged.
    """
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if post.num_samples == 0:
        return np.zeros(query.shape[0]), np.ones(query.shape[0])
    kq = kernel_matrix(post.params, query, post.kernel)
    mean = kq.T @ post.weights
    v = sla.solve_triangular(post.chol, kq, lower=True)
    var = 1.0 - np.sum(v * v, axis=0)
    if np.any(var < _VAR_CLAMP_WARN):
        log.warning("posterior variance clamped from %.3e", float(var.min()))
    return mean, np.clip(var, 0.0, 1.0)


def posterior_with_observation(post: GpPosterior, index: int,
                               value: float) -> GpPosterior:
    """Posterior refit with one extra observation, by rank-one extension.

    The extended Cholesky factor is exact (a block update of the existing
    factor), so this matches a from-scratch refit up to round-off. Used
    for the optimistic expander test.
    """
    point = post.grid.points[int(index)].reshape(1, -1)
    if post.num_samples == 0:
        gram = np.ones((1, 1))
        chol = np.sqrt(gram + post.noise_std ** 2)
        y = np.array([float(value)])
        weights = sla.cho_solve((chol, True), y)
        return GpPosterior(post.grid, post.kernel, post.noise_std,
                           post.channel, point, y, gram, chol, weights)
    kx = kernel_matrix(post.params, point, post.kernel)[:, 0]
    c = sla.solve_triangular(post.chol, kx, lower=True)
    d2 = 1.0 + post.noise_std ** 2 - float(c @ c)
    if d2 <= 0:
        raise NumericError("rank-one Cholesky update lost positivity")
    d = math.sqrt(d2)
    n = post.num_samples
    chol = np.zeros((n + 1, n + 1))
    chol[:n, :n] = post.chol
    chol[n, :n] = c
    chol[n, n] = d
    params = np.vstack([post.params, point])
    y = np.append(post.targets, float(value))
    gram = np.zeros((n + 1, n + 1))
    gram[:n, :n] = post.gram
    gram[n, :n] = kx
    gram[:n, n] = kx
    gram[n, n] = 1.0
    z = sla.solve_triangular(chol, y, lower=True)
    weights = sla.solve_triangular(chol.T, z, lower=False)
    return GpPosterior(post.grid, post.kernel, post.noise_std, post.channel,
                       params, y, gram, chol, weights)


def mean_rkhs_norm(post: GpPosterior) -> float:
    """Kernel norm of the posterior mean, ``sqrt(w^T K w)``.

    Requires at least one sample (the prior mean has no expansion).
    """
    if post.num_samples == 0:
        raise ValueError("mean_rkhs_norm needs a fitted posterior")
    w = post.weights
    return math.sqrt(max(float(w @ post.gram @ w), 0.0))


def reciprocal_cov_integral(post: GpPosterior, mask) -> float:
    """Reciprocal of the posterior variance integrated over a grid region.

    The integral is the midpoint Riemann sum of ``sigma2`` over the
    masked grid points. Large values mean the region is well explored.
    """
    values = np.asarray(getattr(mask, "values", mask), dtype=bool)
    if values.shape != (post.grid.num_points,):
        raise ValueError("mask does not match the grid")
    if not values.any():
        raise ValueError("mask selects no grid points")
    _, var = gp_predict(post, post.grid.points[values])
    total = float(np.sum(var) * post.grid.cell_volume)
    if total <= 0:
        raise NumericError("variance integral vanished; cannot invert")
    return 1.0 / total


def info_gain(post: GpPosterior) -> float:
    """Mutual-information surrogate ``0.5 log det(I + K / noise^2)``."""
    n = post.num_samples
    if n == 0:
        return 0.0
    return float(np.sum(np.log(np.diag(post.chol))) - n * math.log(post.noise_std))
