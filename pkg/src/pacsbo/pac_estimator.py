"""PAC over-estimation of the kernel norm from measured data.

The estimator starts from a predicted bound B, draws batches of random
interpolating functions for the current measurements, and accepts B once it
dominates the empirical mean of their kernel norms plus a Hoeffding
confidence width. If the budget of draws runs out before acceptance, B is
escalated by a safety factor until the test passes and the result is
flagged as escalated.

Draw j of a call is seeded as (seed_path..., j), so pooling more draws
extends the earlier ones exactly and the outcome does not depend on how
batches are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .kernel_gp import KernelConfig, SampleSet
from .rkhs_function import SamplerConfig, interpolating_norms
from .subdomain import DomainMask


def hoeffding_width(delta: float, q: int, value_range: float) -> float:
    """Confidence width sqrt(ln(2/delta) * range^2 / (2 q))."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if q < 1:
        raise ValueError(f"need at least one draw, got q={q}")
    if value_range < 0:
        raise ValueError(f"range must be nonnegative, got {value_range}")
    return math.sqrt(math.log(2.0 / delta) * value_range ** 2 / (2.0 * q))


@dataclass(frozen=True)
class PacConfig:
    """Budget and confidence knobs for the norm estimator."""

    delta: float = 0.1
    q_init: int = 500
    q_max: int = 5000
    f_safety: float = 1.5
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.q_init < 1:
            raise ValueError(f"q_init must be positive, got {self.q_init}")
        if self.q_init > self.q_max:
            raise ValueError(
                f"q_init ({self.q_init}) may not exceed q_max ({self.q_max})")
        if self.f_safety <= 1.0:
            raise ValueError(
                f"safety factor must exceed 1, got {self.f_safety}")


@dataclass(frozen=True)
class PacResult:
    """Outcome of one norm over-estimation call."""

    bound: float
    q_used: int
    empirical_mean: float
    width: float
    escalated: bool

    def __post_init__(self):
        if not self.escalated and self.bound < self.empirical_mean + self.width:
            raise ValueError("non-escalated bound below the acceptance level")


def estimate_upper_bound(eta, trace, samples: SampleSet, i: int,
                         noise_std: float, kernel: KernelConfig,
                         mask: DomainMask, cfg: PacConfig,
                         seed_path: tuple) -> PacResult:
    """Run the accept-or-grow loop for channel ``i`` on the masked region.

    ``eta`` maps the norm trace to the starting bound (typically the trained
    predictor); ``seed_path`` roots the deterministic draw seeds. Tail
    centers of the drawn functions are restricted to the mask.
    """
    start = float(eta(trace))
    if not math.isfinite(start):
        raise NumericError(f"predicted norm bound is not finite: {start}")
    bound = max(start, float(np.finfo(float).tiny))
    grid = mask.grid
    region = mask.member

    norms = np.empty(0)
    q = 0
    while True:
        batch = interpolating_norms(samples, i, noise_std, grid, kernel,
                                    cfg.sampler, seed_path, cfg.q_init,
                                    start_index=q, region=region)
        norms = np.concatenate([norms, batch])
        q += cfg.q_init
        mean = float(np.mean(norms))
        width = hoeffding_width(cfg.delta, q,
                                float(norms.max() - norms.min()))
        if bound >= mean + width:
            return PacResult(bound, q, mean, width, escalated=False)
        if q > cfg.q_max:
            break

    while bound < mean + width:
        bound *= cfg.f_safety
    return PacResult(bound, q, mean, width, escalated=True)
