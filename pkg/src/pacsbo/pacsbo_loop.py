"""Outer optimization loops.

Two algorithms share the iteration scaffolding. The main loop estimates a
kernel-norm bound per region and channel each iteration (three nested
regions: sample hull, enlarged hull, full domain), runs the safe-exploration
subroutine per region, and queries the most uncertain candidate across all
regions. The baseline runs the same subroutine on the full domain with a
fixed norm bound and no estimation.

Per-channel norm traces are extended at the start of each iteration, from
the currently measured data, before the estimator reads them; that way the
trace lengths seen by the predictor online match the prefix lengths it was
trained on (training emits one row per completed rollout step).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .kernel_gp import (
    GridDomain,
    KernelConfig,
    SampleSet,
    gp_fit,
    info_gain,
    mean_rkhs_norm,
    reciprocal_cov_integral,
)
from .pac_estimator import PacConfig, estimate_upper_bound
from .predictor import MlpPredictor, NormTrace, append_trace, predict_norm
from .rkhs_function import RkhsFunction, rkhs_norm
from .safeopt_core import acquire, beta_scale, compute_state
from .seeding import derive_rng, truncated_normal
from .subdomain import global_mask, partition_masks

PARTITION_ORDER = ("tilde", "hat", "global")
CHANNELS = (0, 1)


@dataclass(frozen=True)
class GroundTruth:
    """Synthetic experiment: reward function and safety threshold.

    The reward channel measures the function itself; the constraint channel
    measures the function minus the threshold, so nonnegative means safe.
    """

    reward: RkhsFunction
    threshold: float

    def value(self, grid: GridDomain, index: int, channel: int) -> float:
        v = float(self.reward(grid.points[index].reshape(1, -1))[0])
        return v if channel == 0 else v - self.threshold

    def norm(self) -> float:
        return rkhs_norm(self.reward)


@dataclass(frozen=True)
class RunConfig:
    grid: GridDomain
    kernel: KernelConfig
    s0_indices: tuple
    noise_std: float = 0.01
    delta: float = 0.1
    budget: int = 20
    pac: PacConfig = field(default_factory=PacConfig)
    predictor: MlpPredictor = None
    algorithm: str = "pacsbo"
    fixed_bound: float = None
    enlargement: float = 1.1
    exact_expanders: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("pacsbo", "safeopt"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not self.s0_indices:
            raise ConfigError("initial safe set must be nonempty")
        if self.budget < 1:
            raise ConfigError(f"iteration budget must be >= 1, got {self.budget}")
        if self.algorithm == "safeopt":
            if self.fixed_bound is None or self.fixed_bound <= 0:
                raise ConfigError("safeopt mode needs a positive fixed bound")
        elif self.predictor is None:
            raise ConfigError("pacsbo mode needs a trained predictor")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must be in (0, 1), got {self.delta}")
        if self.noise_std < 0:
            raise ConfigError("noise level must be nonnegative")
        for s in self.s0_indices:
            if not 0 <= int(s) < self.grid.num_points:
                raise ConfigError(f"seed point {s} is off the grid")


@dataclass(frozen=True)
class PartitionStats:
    channel_bounds: tuple  # norm bound per channel, in CHANNELS order
    q_used: int
    escalated: bool
    safe_count: int
    maximizer_count: int
    expander_count: int

    @property
    def bound(self) -> float:
        return max(self.channel_bounds)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    chosen: int
    chosen_partition: str
    measured: dict  # channel -> measured value
    partitions: dict  # label -> PartitionStats
    best_safe_reward: float
    unsafe: bool  # true function value of the constraint was negative
    wall_time: float = field(compare=False, default=0.0)


@dataclass(frozen=True)
class RunHistory:
    records: tuple
    status: str  # "completed" | "stalled"
    best_index: int
    best_reward: float

    def __len__(self) -> int:
        return len(self.records)

    def any_unsafe(self) -> bool:
        return any(rec.unsafe for rec in self.records)


@dataclass(frozen=True)
class LoopState:
    samples: SampleSet
    traces: dict  # (label, channel) -> NormTrace
    iteration: int


def _measure(truth: GroundTruth, grid: GridDomain, index: int,
             noise_std: float, rng) -> dict:
    out = {}
    for i in CHANNELS:
        eps = float(truncated_normal(rng, noise_std, size=1)[0])
        out[i] = truth.value(grid, index, i) + eps
    return out


def _initial_state(cfg: RunConfig, truth: GroundTruth) -> LoopState:
    samples = SampleSet(cfg.grid, (), {i: () for i in CHANNELS})
    for k, s in enumerate(cfg.s0_indices):
        rng = derive_rng(cfg.seed, "seed-measure", k)
        samples = samples.append(int(s),
                                 _measure(truth, cfg.grid, int(s),
                                          cfg.noise_std, rng))
    traces = {(label, i): NormTrace()
              for label in PARTITION_ORDER for i in CHANNELS}
    return LoopState(samples, traces, 0)


def _best_safe(samples: SampleSet):
    """Best measured reward among parameters whose constraint measurement
    came back nonnegative; (-1, nan) before any does."""
    rewards = samples.targets(0)
    constraints = samples.targets(1)
    ok = constraints >= 0.0
    if not ok.any():
        return -1, float("nan")
    rewards = np.where(ok, rewards, -np.inf)
    k = int(np.argmax(rewards))
    return samples.indices[k], float(rewards[k])


def _partition_bounds(cfg: RunConfig, state: LoopState, masks: dict,
                      posteriors: dict, traces: dict):
    """Norm bound per (partition, channel) via the estimator, after pushing
    the current (mean norm, reciprocal covariance) pair onto each trace."""
    split = cfg.delta / (len(PARTITION_ORDER) * len(CHANNELS))
    bounds, results, new_traces = {}, {}, {}
    for p_idx, label in enumerate(PARTITION_ORDER):
        mask = masks[label]
        for i in CHANNELS:
            post = posteriors[i]
            trace = append_trace(traces[(label, i)], mean_rkhs_norm(post),
                                 reciprocal_cov_integral(post, mask.member))
            new_traces[(label, i)] = trace
            pac_cfg = replace(cfg.pac, delta=split)
            res = estimate_upper_bound(
                lambda tr: predict_norm(cfg.predictor, tr), trace,
                state.samples, i, cfg.noise_std, cfg.kernel, mask, pac_cfg,
                (cfg.seed, "pac", state.iteration, p_idx, i))
            bounds[(label, i)] = res.bound
            results[(label, i)] = res
    return bounds, results, new_traces


def pacsbo_step(cfg: RunConfig, state: LoopState, truth: GroundTruth):
    """One iteration of the main loop: (state', record)."""
    t0 = time.monotonic()
    tilde, hat, glob = partition_masks(state.samples, cfg.grid,
                                       cfg.enlargement)
    masks = {"tilde": tilde, "hat": hat, "global": glob}
    posteriors = {i: gp_fit(state.samples, i, cfg.noise_std, cfg.kernel)
                  for i in CHANNELS}
    bounds, results, traces = _partition_bounds(cfg, state, masks,
                                                posteriors, state.traces)

    gammas = {i: info_gain(posteriors[i]) for i in CHANNELS}
    best = None  # (width, partition order, grid index, label, state)
    stats = {}
    for p_idx, label in enumerate(PARTITION_ORDER):
        mask = masks[label]
        betas = {i: beta_scale(bounds[(label, i)], cfg.noise_std, gammas[i],
                               cfg.delta)
                 for i in CHANNELS}
        st = compute_state(posteriors, betas, mask, cfg.s0_indices,
                           cfg.exact_expanders)
        res = [results[(label, i)] for i in CHANNELS]
        stats[label] = PartitionStats(
            channel_bounds=tuple(bounds[(label, i)] for i in CHANNELS),
            q_used=max(r.q_used for r in res),
            escalated=any(r.escalated for r in res),
            safe_count=int(st.safe.sum()),
            maximizer_count=int(st.maximizer_set.sum()),
            expander_count=int(st.expander_set.sum()),
        )
        if not st.seeded:
            continue  # region misses the seed set: contributes no candidates
        choice = acquire(st.field, st.candidates())
        if choice is None:
            continue
        width = max(float(st.field.width(i)[choice]) for i in CHANNELS)
        key = (-width, p_idx, choice)
        if best is None or key < best[0]:
            best = (key, choice, label)

    if best is None:
        return None, None  # stalled

    _, choice, label = best
    rng = derive_rng(cfg.seed, "measure", state.iteration)
    measured = _measure(truth, cfg.grid, choice, cfg.noise_std, rng)
    samples = state.samples.append(choice, measured)
    unsafe = truth.value(cfg.grid, choice, 1) < 0.0
    _, best_reward = _best_safe(samples)
    record = IterationRecord(state.iteration, choice, label, measured, stats,
                             best_reward, unsafe, time.monotonic() - t0)
    return LoopState(samples, traces, state.iteration + 1), record


def safeopt_step(cfg: RunConfig, state: LoopState, truth: GroundTruth):
    """One fixed-bound baseline iteration on the full domain."""
    t0 = time.monotonic()
    mask = global_mask(cfg.grid)
    posteriors = {i: gp_fit(state.samples, i, cfg.noise_std, cfg.kernel)
                  for i in CHANNELS}
    betas = {i: beta_scale(cfg.fixed_bound, cfg.noise_std,
                           info_gain(posteriors[i]), cfg.delta)
             for i in CHANNELS}
    st = compute_state(posteriors, betas, mask, cfg.s0_indices,
                       cfg.exact_expanders)
    choice = acquire(st.field, st.candidates())
    if choice is None:
        return None, None
    stats = {"global": PartitionStats(
        channel_bounds=(cfg.fixed_bound,) * len(CHANNELS),
        q_used=0, escalated=False,
        safe_count=int(st.safe.sum()),
        maximizer_count=int(st.maximizer_set.sum()),
        expander_count=int(st.expander_set.sum()))}
    rng = derive_rng(cfg.seed, "measure", state.iteration)
    measured = _measure(truth, cfg.grid, choice, cfg.noise_std, rng)
    samples = state.samples.append(choice, measured)
    unsafe = truth.value(cfg.grid, choice, 1) < 0.0
    _, best_reward = _best_safe(samples)
    record = IterationRecord(state.iteration, choice, "global", measured,
                             stats, best_reward, unsafe,
                             time.monotonic() - t0)
    return LoopState(samples, state.traces, state.iteration + 1), record


def run(cfg: RunConfig, truth: GroundTruth) -> RunHistory:
    """Run the configured algorithm for its iteration budget."""
    state = _initial_state(cfg, truth)
    step = pacsbo_step if cfg.algorithm == "pacsbo" else safeopt_step
    records = []
    status = "completed"
    for _ in range(cfg.budget):
        nxt, record = step(cfg, state, truth)
        if record is None:
            status = "stalled"
            break
        state = nxt
        records.append(record)
    best_index, best_reward = _best_safe(state.samples)
    return RunHistory(tuple(records), status, best_index, best_reward)
