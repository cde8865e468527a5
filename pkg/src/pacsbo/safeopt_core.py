"""Safe exploration subroutine over a masked grid.

Given per-channel posteriors and a kernel-norm bound B per channel, this
module builds confidence intervals, classifies grid points into the safe
set S, the potential maximizers M, and the potential expanders G, and picks
the next evaluation as the most uncertain point of M | G.

All point sets are boolean arrays over the full grid; points outside the
active mask are never members. Confidence values outside the mask are NaN
on purpose, so any accidental use of an out-of-mask bound surfaces as a
non-finite result instead of a silently wrong one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel_gp import GpPosterior, gp_predict, posterior_with_observation
from .subdomain import DomainMask


def beta_scale(bound: float, noise_std: float, gamma: float, delta: float) -> float:
    """Confidence scaling sqrt(beta) = B + sigma*sqrt(2*(gamma + 1 + ln(1/delta))).

    ``gamma`` is the information gain of the data the posterior was fitted
    on, a computable stand-in for the maximal information gain appearing in
    frequentist GP confidence bounds.
    """
    if bound <= 0:
        raise ValueError(f"norm bound must be positive, got {bound}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if gamma < 0:
        raise ValueError(f"information gain must be nonnegative, got {gamma}")
    if noise_std < 0:
        raise ValueError(f"noise level must be nonnegative, got {noise_std}")
    return bound + noise_std * math.sqrt(2.0 * (gamma + 1.0 + math.log(1.0 / delta)))


@dataclass(frozen=True)
class ConfidenceField:
    """Lower/upper confidence bounds per function channel on masked points."""

    mask: DomainMask
    betas: dict  # channel -> sqrt(beta)
    lower: dict  # channel -> array over the full grid, NaN outside the mask
    upper: dict

    @property
    def channels(self) -> tuple:
        return tuple(sorted(self.lower))

    def width(self, i: int) -> np.ndarray:
        return self.upper[i] - self.lower[i]


def confidence_bounds(posteriors: dict, betas: dict, mask: DomainMask) -> ConfidenceField:
    """Evaluate l = mu - sqrt(beta)*sigma and u = mu + sqrt(beta)*sigma on the mask."""
    if set(posteriors) != set(betas):
        raise ValueError("posteriors and betas must cover the same channels")
    idx = mask.indices()
    pts = mask.grid.points[idx]
    lower, upper = {}, {}
    for i, post in posteriors.items():
        mean, var = gp_predict(post, pts)
        half = betas[i] * np.sqrt(var)
        lo = np.full(mask.grid.num_points, np.nan)
        hi = np.full(mask.grid.num_points, np.nan)
        lo[idx] = mean - half
        hi[idx] = mean + half
        lower[i], upper[i] = lo, hi
    return ConfidenceField(mask, dict(betas), lower, upper)


def safe_set(field: ConfidenceField, seed_indices, mask: DomainMask):
    """Safe points: the seed set plus every point whose constraint lower
    bounds are all nonnegative.

    Returns ``(S, seeded)`` where ``seeded`` is False when no seed point
    lies inside the mask; the caller is expected to fall back to a wider
    partition in that case.
    """
    seed = np.zeros(mask.grid.num_points, dtype=bool)
    seed[np.asarray(list(seed_indices), dtype=int)] = True
    seed &= mask.member
    constraints = [i for i in field.channels if i != 0]
    certified = mask.member.copy()
    for i in constraints:
        with np.errstate(invalid="ignore"):
            certified &= field.lower[i] >= 0.0
    return seed | certified, bool(seed.any())


def maximizers(field: ConfidenceField, safe: np.ndarray) -> np.ndarray:
    """Safe points whose reward upper bound reaches the best safe lower bound."""
    m = np.zeros_like(safe)
    if not safe.any():
        return m
    best_lower = field.lower[0][safe].max()
    with np.errstate(invalid="ignore"):
        m[safe] = field.upper[0][safe] >= best_lower
    return m


def _boundary_candidates(safe: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Safe points with an axis neighbor (one cell away) outside the safe set.

    This is the default candidate filter for the expander test; points deep
    inside the safe region cannot certify new points better than their
    boundary neighbors in practice, and skipping them cuts the refit count.
    """
    grid = mask.grid
    res = tuple(grid.resolution)
    shape = res if len(res) > 1 else (res[0],)
    s = safe.reshape(shape)
    outside = (mask.member & ~safe).reshape(shape)
    near = np.zeros_like(s)
    for axis in range(len(shape)):
        for shift in (1, -1):
            rolled = np.roll(outside, shift, axis=axis)
            # roll wraps around; kill the wrapped slice
            sl = [slice(None)] * len(shape)
            sl[axis] = 0 if shift == 1 else -1
            rolled[tuple(sl)] = False
            near |= rolled
    return (s & near).reshape(-1)


def expanders(posteriors: dict, field: ConfidenceField, safe: np.ndarray,
              mask: DomainMask, exact: bool = False) -> np.ndarray:
    """Safe points whose optimistic refit would certify a new point as safe.

    For each candidate a, every constraint channel receives a fictitious
    observation at its upper bound u(a, i); a point outside the safe set
    that gets nonnegative refitted lower bounds on all channels makes a an
    expander. With ``exact=True`` all safe points are tested instead of
    only those near the safe-set boundary.
    """
    g = np.zeros_like(safe)
    constraints = [i for i in field.channels if i != 0]
    if not constraints:
        return g
    outside = mask.member & ~safe
    if not outside.any() or not safe.any():
        return g
    out_idx = np.flatnonzero(outside)
    out_pts = mask.grid.points[out_idx]
    candidates = safe if exact else _boundary_candidates(safe, mask)
    for a in np.flatnonzero(candidates):
        newly_safe = np.ones(len(out_idx), dtype=bool)
        for i in constraints:
            refit = posterior_with_observation(posteriors[i], a,
                                               float(field.upper[i][a]))
            mean, var = gp_predict(refit, out_pts)
            newly_safe &= mean - field.betas[i] * np.sqrt(var) >= 0.0
            if not newly_safe.any():
                break
        if newly_safe.any():
            g[a] = True
    return g


def acquire(field: ConfidenceField, candidates: np.ndarray):
    """Most uncertain candidate: argmax over max-channel interval width.

    Ties break toward the lowest grid index. Returns None when the
    candidate set is empty.
    """
    idx = np.flatnonzero(candidates)
    if len(idx) == 0:
        return None
    widths = np.max([field.width(i)[idx] for i in field.channels], axis=0)
    return int(idx[int(np.argmax(widths))])


@dataclass(frozen=True)
class SafeOptState:
    """One iteration's classification of the masked grid."""

    mask: DomainMask
    field: ConfidenceField
    safe: np.ndarray
    maximizer_set: np.ndarray
    expander_set: np.ndarray
    seeded: bool

    def __post_init__(self):
        if (self.maximizer_set & ~self.safe).any():
            raise ValueError("maximizers leak outside the safe set")
        if (self.expander_set & ~self.safe).any():
            raise ValueError("expanders leak outside the safe set")

    def candidates(self) -> np.ndarray:
        return self.maximizer_set | self.expander_set


def compute_state(posteriors: dict, betas: dict, mask: DomainMask,
                  seed_indices, exact_expanders: bool = False) -> SafeOptState:
    """Classify the masked grid for the current posteriors and bounds."""
    field = confidence_bounds(posteriors, betas, mask)
    safe, seeded = safe_set(field, seed_indices, mask)
    m = maximizers(field, safe)
    g = expanders(posteriors, field, safe, mask, exact=exact_expanders)
    return SafeOptState(mask, field, safe, m, g, seeded)
