"""Norm traces and the trace-to-bound predictor.

While the optimizer runs, each iteration contributes a pair (kernel norm of
the posterior mean, reciprocal covariance integral) to a trace. A small
fully connected network maps the zero-padded trace to a positive starting
bound for the norm estimator. Training data comes from safe-exploration
rollouts on random functions whose kernel norm is known exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .kernel_gp import (
    GridDomain,
    KernelConfig,
    SampleSet,
    gp_fit,
    info_gain,
    mean_rkhs_norm,
    reciprocal_cov_integral,
)
from .rkhs_function import RkhsFunction, SamplerConfig, rkhs_norm, sample_random_function
from .safeopt_core import acquire, beta_scale, compute_state
from .seeding import derive_rng
from .subdomain import global_mask

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_T_MAX = 50


@dataclass(frozen=True)
class NormTrace:
    """Chronological (mean norm, reciprocal covariance) pairs.

    The trace is capped at ``t_max`` pairs; appending beyond that drops the
    oldest pair and marks the trace truncated.
    """

    pairs: tuple = ()
    t_max: int = DEFAULT_T_MAX
    truncated: bool = False

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if len(self.pairs) > self.t_max:
            raise ValueError("trace longer than its window")

    def __len__(self) -> int:
        return len(self.pairs)


def append_trace(trace: NormTrace, norm: float, r: float) -> NormTrace:
    if norm < 0:
        raise ValueError(f"mean norm must be nonnegative, got {norm}")
    if r <= 0:
        raise ValueError(f"reciprocal covariance must be positive, got {r}")
    pairs = trace.pairs + ((float(norm), float(r)),)
    truncated = trace.truncated
    if len(pairs) > trace.t_max:
        pairs = pairs[1:]
        truncated = True
    return NormTrace(pairs, trace.t_max, truncated)


def encode_trace(trace: NormTrace, length: int) -> np.ndarray:
    """Raw input vector: left zero-padding, then the pairs in order."""
    if 2 * len(trace) > length:
        raise ValueError(
            f"trace with {len(trace)} pairs does not fit length {length}")
    flat = np.zeros(length)
    if trace.pairs:
        tail = np.asarray(trace.pairs, dtype=float).reshape(-1)
        flat[length - len(tail):] = tail
    return flat


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray  # (rows, L) raw encoded traces
    labels: np.ndarray  # (rows,) positive

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on the row count")
        if self.labels.size and self.labels.min() <= 0:
            raise ValueError("labels must be positive")

    @property
    def rows(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class RolloutConfig:
    """Settings for training-data generation."""

    grid: GridDomain
    kernel: KernelConfig
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    q_train: int = 200
    rollout_iters: int = 30
    noise_std: float = 0.01
    delta: float = 0.1
    label_multiplier: float = 1.0
    safe_quantile: float = 0.4
    t_max: int = DEFAULT_T_MAX

    def __post_init__(self):
        if self.q_train < 1 or self.rollout_iters < 1:
            raise ValueError("q_train and rollout_iters must be positive")
        if self.label_multiplier < 1.0:
            raise ValueError("label multiplier below 1 would anti-bound")
        if not 0 < self.safe_quantile < 1:
            raise ValueError("safe quantile must be in (0, 1)")
        if self.rollout_iters > self.t_max:
            raise ValueError("rollout longer than the trace window")


def _rollout(cfg: RolloutConfig, rho: RkhsFunction, rng) -> list:
    """One safe-exploration rollout; returns the trace prefix rows."""
    grid, kernel = cfg.grid, cfg.kernel
    values = rho(grid.points)
    threshold = float(np.quantile(values, cfg.safe_quantile))
    bound = rkhs_norm(rho)
    margin = 0.1 * (values.max() - threshold)
    safe_enough = np.flatnonzero(values - threshold >= margin)
    seed_idx = int(rng.choice(safe_enough))
    mask = global_mask(grid)

    samples = SampleSet(grid, (), {0: (), 1: ()})
    noisy = values[seed_idx] + cfg.noise_std * rng.standard_normal()
    samples = samples.append(seed_idx, {0: noisy, 1: noisy - threshold})

    trace = NormTrace(t_max=cfg.t_max)
    rows = []
    for step in range(cfg.rollout_iters):
        posteriors = {i: gp_fit(samples, i, cfg.noise_std, kernel)
                      for i in (0, 1)}
        betas = {i: beta_scale(bound, cfg.noise_std, info_gain(posteriors[i]),
                               cfg.delta)
                 for i in (0, 1)}
        state = compute_state(posteriors, betas, mask, [seed_idx])
        choice = acquire(state.field, state.candidates())
        if choice is None:
            log.warning("rollout abandoned at step %d: no candidates", step)
            return []
        y = values[choice] + cfg.noise_std * rng.standard_normal()
        g = values[choice] - threshold + cfg.noise_std * rng.standard_normal()
        samples = samples.append(choice, {0: y, 1: g})

        post = gp_fit(samples, 0, cfg.noise_std, kernel)
        trace = append_trace(trace, mean_rkhs_norm(post),
                             reciprocal_cov_integral(post, mask.member))
        rows.append((encode_trace(trace, 2 * cfg.t_max),
                     cfg.label_multiplier * bound))
    return rows


def generate_training_data(cfg: RolloutConfig, seed: int) -> TrainingSet:
    """Rollout the safe optimizer on random functions of known norm.

    Every prefix of every rollout's trace becomes one training row, labeled
    with the function's (optionally inflated) kernel norm. Rollouts are
    seeded per function, so the result is independent of evaluation order.
    """
    all_rows = []
    for j in range(cfg.q_train):
        rng = derive_rng(seed, "rollout", j)
        rho = sample_random_function(cfg.grid, cfg.kernel, cfg.sampler, rng)
        all_rows.extend(_rollout(cfg, rho, rng))
    if not all_rows:
        raise NumericError("every training rollout was abandoned")
    inputs = np.stack([r[0] for r in all_rows])
    labels = np.array([r[1] for r in all_rows])
    return TrainingSet(inputs, labels)


# ---------------------------------------------------------------------------
# the network


@dataclass(frozen=True)
class MlpPredictor:
    """Fully connected trace-to-bound network with softplus output."""

    input_len: int
    hidden: tuple
    weights: tuple  # per layer, shape (fan_out, fan_in)
    biases: tuple
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    final_loss: float

    def forward(self, raw: np.ndarray) -> np.ndarray:
        x = (np.atleast_2d(raw) - self.feat_mean) / self.feat_scale
        out = _forward_normalized(self.weights, self.biases, x)[0]
        return out

    def save(self, path) -> None:
        save_predictor(self, path)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(np.logaddexp(0.0, z), np.finfo(float).tiny)


def _forward_normalized(weights, biases, x):
    """Forward pass on already-normalized inputs; returns output and the
    per-layer activations needed for the backward pass."""
    acts = [x]
    pre = []
    a = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        pre.append(z)
        a = np.tanh(z) if k < len(weights) - 1 else _softplus(z)
        acts.append(a)
    return acts[-1][:, 0], (acts, pre)


def _loss_and_gradients(weights, biases, x, y):
    """Mean squared error and its gradients for one normalized batch.

    Overflow is not an error here: divergence shows up as a non-finite
    loss, which the training loop detects and reports.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        out, (acts, pre) = _forward_normalized(weights, biases, x)
        m = x.shape[0]
        err = out - y
        loss = float(np.mean(err ** 2))
        # softplus'(z) = sigmoid(z); tanh'(z) = 1 - tanh(z)^2
        delta = (2.0 * err / m)[:, None] * _sigmoid(pre[-1])
        grads_w, grads_b = [], []
        for k in range(len(weights) - 1, -1, -1):
            grads_w.append(delta.T @ acts[k])
            grads_b.append(delta.sum(axis=0))
            if k > 0:
                delta = (delta @ weights[k]) * (1.0 - acts[k] ** 2)
    return loss, grads_w[::-1], grads_b[::-1]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _init_layers(sizes, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = 1.0 / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 400
    batch_size: int = 64
    step: float = 0.003

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.step <= 0:
            raise ValueError("bad training hyperparameters")


def train_mlp(data: TrainingSet, hidden=(64, 64),
              hyper: TrainHyper = TrainHyper(), seed: int = 0) -> MlpPredictor:
    """Mini-batch gradient descent on mean squared error.

    Deterministic given the seed: initialization and epoch shuffles come
    from one derived generator.
    """
    if data.rows < 1:
        raise ValueError("empty training set")
    rng = derive_rng(seed, "mlp-train")
    length = data.inputs.shape[1]
    feat_mean = data.inputs.mean(axis=0)
    feat_scale = np.maximum(data.inputs.std(axis=0), 1e-12)
    x_all = (data.inputs - feat_mean) / feat_scale
    y_all = data.labels

    sizes = (length,) + tuple(hidden) + (1,)
    weights, biases = _init_layers(sizes, rng)
    loss = float("nan")
    for epoch in range(hyper.epochs):
        order = rng.permutation(data.rows)
        for lo in range(0, data.rows, hyper.batch_size):
            sel = order[lo:lo + hyper.batch_size]
            loss, gw, gb = _loss_and_gradients(weights, biases,
                                               x_all[sel], y_all[sel])
            if not np.isfinite(loss):
                raise NumericError(
                    f"training diverged at epoch {epoch} "
                    f"(step={hyper.step}, batch={hyper.batch_size})")
            for k in range(len(weights)):
                weights[k] = weights[k] - hyper.step * gw[k]
                biases[k] = biases[k] - hyper.step * gb[k]
    final, _, _ = _loss_and_gradients(weights, biases, x_all, y_all)
    return MlpPredictor(length, tuple(hidden),
                        tuple(w.copy() for w in weights),
                        tuple(b.copy() for b in biases),
                        feat_mean, feat_scale, final)


def predict_norm(model: MlpPredictor, trace: NormTrace) -> float:
    """Positive starting bound for the estimator from the current trace."""
    raw = encode_trace(trace, model.input_len)
    return float(model.forward(raw)[0])


def gradient_check_error(input_len: int, hidden, seed: int,
                         batch: int = 5, step: float = 1e-5) -> float:
    """Norm-relative gap between backprop and central finite differences.

    Builds a random network and batch, then compares the analytic gradient
    of the training loss against the symmetric difference quotient for
    every weight and bias. The return value is
    ||g - g_fd|| / max(||g||, ||g_fd||).
    """
    rng = derive_rng(seed, "grad-check")
    sizes = (input_len,) + tuple(hidden) + (1,)
    weights, biases = _init_layers(sizes, rng)
    x = rng.normal(size=(batch, input_len))
    y = rng.uniform(0.5, 3.0, size=batch)

    _, gw, gb = _loss_and_gradients(weights, biases, x, y)
    analytic = np.concatenate([g.ravel() for g in gw + gb])

    def loss_at(flat):
        ws, bs, pos = [], [], 0
        for w in weights:
            ws.append(flat[pos:pos + w.size].reshape(w.shape))
            pos += w.size
        for b in biases:
            bs.append(flat[pos:pos + b.size])
            pos += b.size
        out, _ = _forward_normalized(ws, bs, x)
        return float(np.mean((out - y) ** 2))

    theta = np.concatenate([w.ravel() for w in weights]
                           + [b.ravel() for b in biases])
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        bump = np.zeros_like(theta)
        bump[k] = step
        numeric[k] = (loss_at(theta + bump) - loss_at(theta - bump)) / (2 * step)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


# ---------------------------------------------------------------------------
# persistence


def save_predictor(model: MlpPredictor, path) -> None:
    record = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trace-norm-predictor",
        "input_len": model.input_len,
        "hidden": list(model.hidden),
        "feat_mean": model.feat_mean.tolist(),
        "feat_scale": model.feat_scale.tolist(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "final_loss": model.final_loss,
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_predictor(path) -> MlpPredictor:
    with open(path) as fh:
        record = json.load(fh)
    if record.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported predictor schema {record.get('schema_version')!r}")
    return MlpPredictor(
        int(record["input_len"]),
        tuple(record["hidden"]),
        tuple(np.asarray(w) for w in record["weights"]),
        tuple(np.asarray(b) for b in record["biases"]),
        np.asarray(record["feat_mean"]),
        np.asarray(record["feat_scale"]),
        float(record["final_loss"]),
    )
