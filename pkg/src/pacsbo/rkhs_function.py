"""Finite kernel expansions with computable norm, and samplers over them.

A function here is ``f = sum_s alpha_s k(x_s, .)`` with kernel norm
``sqrt(alpha^T K alpha)``. Two samplers produce such functions:

* :func:`sample_random_function` places centers uniformly on the grid and
  draws coefficients uniformly from ``[-coeff_bound, coeff_bound]``.
* :func:`sample_interpolating_function` additionally pins the function to
  noisy measurements: the first ``N`` centers are the sample locations and
  their coefficients solve the interpolation system, while the remaining
  centers stay random. The resulting functions are data-consistent
  candidates for the unknown ground truth, and the spread of their norms
  is what the PAC estimator concentrates over.

:func:`interpolating_norms` is the batched fast path: it draws each
function from its own counter-derived stream (so any parallel schedule
sees the same numbers) and evaluates the norms chunk-wise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import NumericError
from .kernel_gp import GridDomain, KernelConfig, SampleSet, kernel_matrix, pairwise_dist, matern32
from .seeding import derive_rng, truncated_normal

_SCHEMA_VERSION = 1
_NORM_DUST = -1e-10


@dataclass(frozen=True)
class SamplerConfig:
    """Shape of the random-expansion generator.

    ``num_centers`` is the total number of kernel centers per drawn
    function; ``coeff_bound`` bounds the uniform coefficients of the
    unconstrained centers.
    """
    num_centers: int = 100
    coeff_bound: float = 1.0

    def __post_init__(self):
        if self.num_centers < 1:
            raise ValueError("num_centers must be at least 1")
        if self.coeff_bound < 0:
            raise ValueError("coeff_bound must be nonnegative")


@dataclass(frozen=True)
class RkhsFunction:
    """Kernel expansion ``sum_s coefficients[s] * k(centers[s], .)``."""
    kernel: KernelConfig
    centers: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        coeffs = np.asarray(self.coefficients, dtype=float).ravel()
        if centers.shape[0] != coeffs.shape[0]:
            raise ValueError("one coefficient per center is required")
        if centers.shape[0] == 0:
            raise ValueError("an expansion needs at least one center")
        centers.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coefficients", coeffs)

    def __call__(self, points):
        return evaluate(self, points)


def evaluate(f: RkhsFunction, points) -> np.ndarray:
    """Function values at row-stacked points (m, n)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return kernel_matrix(points, f.centers, f.kernel) @ f.coefficients


def evaluate_at(f: RkhsFunction, point) -> float:
    return float(evaluate(f, np.atleast_1d(point).reshape(1, -1))[0])


def rkhs_norm(f: RkhsFunction) -> float:
    """Kernel norm ``sqrt(alpha^T K alpha)`` of the expansion."""
    gram = kernel_matrix(f.centers, f.centers, f.kernel)
    sq = float(f.coefficients @ gram @ f.coefficients)
    if sq < _NORM_DUST:
        raise NumericError(f"norm squared came out negative: {sq}")
    return float(np.sqrt(max(sq, 0.0)))


def scale_to_norm(f: RkhsFunction, target: float) -> RkhsFunction:
    """Rescale the coefficients so the norm equals ``target`` exactly."""
    if target < 0:
        raise ValueError("target norm must be nonnegative")
    norm = rkhs_norm(f)
    if norm == 0.0:
        raise ValueError("cannot rescale a zero-norm function")
    return RkhsFunction(f.kernel, f.centers, f.coefficients * (target / norm))


def sample_random_function(grid: GridDomain, kernel: KernelConfig,
                           cfg: SamplerConfig, rng: np.random.Generator) -> RkhsFunction:
    """Random expansion: grid-uniform centers, uniform coefficients.

    Stream consumption order is centers first, then coefficients.
    """
    idx = rng.integers(0, grid.num_points, size=cfg.num_centers)
    coeffs = rng.uniform(-cfg.coeff_bound, cfg.coeff_bound, size=cfg.num_centers)
    return RkhsFunction(kernel, grid.points[idx], coeffs)


def _draw_interpolation_parts(rng, grid, region_idx, noise_std, num_tail, num_samples):
    """Random ingredients of one interpolating draw, in a fixed stream order."""
    tail_idx = region_idx[rng.integers(0, region_idx.shape[0], size=num_tail)]
    tail_coeffs_u = rng.uniform(-1.0, 1.0, size=num_tail)
    eps = truncated_normal(rng, noise_std, size=num_samples)
    return tail_idx, tail_coeffs_u, eps


def _region_indices(grid: GridDomain, region) -> np.ndarray:
    if region is None:
        return np.arange(grid.num_points)
    values = np.asarray(getattr(region, "values", region), dtype=bool)
    if values.shape != (grid.num_points,):
        raise ValueError("region mask does not match the grid")
    idx = np.flatnonzero(values)
    if idx.size == 0:
        raise ValueError("region mask selects no grid points")
    return idx


def _interpolation_factor(params: np.ndarray, kernel: KernelConfig):
    """Cholesky factor of the sample Gram, with one jitter retry."""
    gram = kernel_matrix(params, params, kernel)
    try:
        return sla.cholesky(gram, lower=True), gram
    except np.linalg.LinAlgError:
        pass
    try:
        jittered = gram + 1e-8 * np.eye(gram.shape[0])
        return sla.cholesky(jittered, lower=True), gram
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"sample Gram is numerically singular: {exc}") from exc


def sample_interpolating_function(samples: SampleSet, i: int, noise_std: float,
                                  grid: GridDomain, kernel: KernelConfig,
                                  cfg: SamplerConfig, rng: np.random.Generator,
                                  region=None) -> RkhsFunction:
    """Random expansion pinned to the measurements of channel ``i``.

    The first ``N`` centers are the sample locations; their coefficients
    solve ``K_AA a = (y + eps) - K_At a_tail`` with ``eps`` truncated
    Gaussian measurement noise. The tail centers are drawn uniformly
    from ``region`` (default: the whole grid).
    """
    n = len(samples)
    if n == 0:
        raise ValueError("interpolation needs at least one sample")
    if cfg.num_centers <= n:
        raise ValueError(f"num_centers ({cfg.num_centers}) must exceed the "
                         f"number of samples ({n})")
    region_idx = _region_indices(grid, region)
    tail_idx, tail_u, eps = _draw_interpolation_parts(
        rng, grid, region_idx, noise_std, cfg.num_centers - n, n)
    tail_coeffs = cfg.coeff_bound * tail_u
    params = samples.params
    tail_points = grid.points[tail_idx]
    chol, _ = _interpolation_factor(params, kernel)
    cross = kernel_matrix(params, tail_points, kernel)
    rhs = samples.targets(i) + eps - cross @ tail_coeffs
    head_coeffs = sla.cho_solve((chol, True), rhs)
    centers = np.vstack([params, tail_points])
    coeffs = np.concatenate([head_coeffs, tail_coeffs])
    return RkhsFunction(kernel, centers, coeffs)


def interpolating_norms(samples: SampleSet, i: int, noise_std: float,
                        grid: GridDomain, kernel: KernelConfig,
                        cfg: SamplerConfig, seed_path: tuple, count: int,
                        start_index: int = 0, region=None,
                        chunk: int = 256) -> np.ndarray:
    """Norms of ``count`` interpolating draws, evaluated chunk-wise.

    Draw ``j`` consumes exactly the stream ``derive_rng(*seed_path,
    start_index + j)``, matching :func:`sample_interpolating_function`
    called with that stream, so results do not depend on chunking or on
    how callers schedule the work.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("interpolation needs at least one sample")
    if cfg.num_centers <= n:
        raise ValueError(f"num_centers ({cfg.num_centers}) must exceed the "
                         f"number of samples ({n})")
    if len(seed_path) == 0:
        raise ValueError("seed_path must contain at least the base seed")
    region_idx = _region_indices(grid, region)
    num_tail = cfg.num_centers - n
    params = samples.params
    y = samples.targets(i)
    chol, gram_aa = _interpolation_factor(params, kernel)
    ell = kernel.lengthscale

    def batched_dist(diff):
        # matches pairwise_dist: plain abs in one dimension
        if diff.shape[-1] == 1:
            return np.abs(diff[..., 0])
        return np.sqrt(np.sum(diff * diff, axis=-1))

    norms = np.empty(count)
    for lo in range(0, count, chunk):
        hi = min(lo + chunk, count)
        c = hi - lo
        tails = np.empty((c, num_tail), dtype=np.int64)
        tail_coeffs = np.empty((c, num_tail))
        eps = np.empty((c, n))
        for j in range(lo, hi):
            rng = derive_rng(*seed_path, start_index + j)
            t_idx, t_u, e = _draw_interpolation_parts(
                rng, grid, region_idx, noise_std, num_tail, n)
            tails[j - lo] = t_idx
            tail_coeffs[j - lo] = cfg.coeff_bound * t_u
            eps[j - lo] = e
        tp = grid.points[tails]                      # (c, T, n)
        # cross Gram against the fixed sample block, (c, N, T)
        cross = matern32(batched_dist(params[None, :, None, :] - tp[:, None, :, :]), ell)
        rhs = (y + eps) - np.einsum("cnt,ct->cn", cross, tail_coeffs)
        head = sla.cho_solve((chol, True), rhs.T).T  # (c, N)
        # tail-tail Gram, (c, T, T)
        k_tt = matern32(batched_dist(tp[:, :, None, :] - tp[:, None, :, :]), ell)
        sq = (np.einsum("cn,nm,cm->c", head, gram_aa, head)
              + 2.0 * np.einsum("cnt,cn,ct->c", cross, head, tail_coeffs)
              + np.einsum("ctu,ct,cu->c", k_tt, tail_coeffs, tail_coeffs))
        norms[lo:hi] = np.sqrt(np.maximum(sq, 0.0))
    return norms


def to_record(f: RkhsFunction) -> dict:
    """Flat serializable record of the expansion."""
    return {
        "schema_version": _SCHEMA_VERSION,
        "kernel": {"family": f.kernel.family, "lengthscale": f.kernel.lengthscale},
        "centers": f.centers.tolist(),
        "coefficients": f.coefficients.tolist(),
    }


def from_record(record: dict) -> RkhsFunction:
    if record.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version "
                         f"{record.get('schema_version')!r}")
    kernel = KernelConfig(lengthscale=float(record["kernel"]["lengthscale"]),
                          family=record["kernel"]["family"])
    return RkhsFunction(kernel, np.asarray(record["centers"], dtype=float),
                        np.asarray(record["coefficients"], dtype=float))


def save_rkhs_function(path, f: RkhsFunction) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_record(f), fh)
        fh.write("\n")


def load_rkhs_function(path) -> RkhsFunction:
    with open(path, "r", encoding="utf-8") as fh:
        return from_record(json.load(fh))
