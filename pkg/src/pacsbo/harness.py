"""Experiment recipes: scenario configs, seed fan-out, CSV and manifest IO.

Each scenario resolves a YAML config into an :class:`ExperimentSpec`, runs
every seed (optionally on a thread pool), and writes per-seed record files,
a merged summary, and a manifest with the config hash and library versions.
All outputs are plain CSV or YAML so plots can be drawn with external tools.
"""

from __future__ import annotations

import csv
import hashlib
import importlib.metadata
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import yaml
from scipy import ndimage

from .errors import ConfigError
from .kernel_gp import (
    GridDomain,
    KernelConfig,
    SampleSet,
    gp_fit,
    gp_predict,
    info_gain,
    mean_rkhs_norm,
)
from .pac_estimator import PacConfig, estimate_upper_bound, hoeffding_width
from .pacsbo_loop import (
    CHANNELS,
    GroundTruth,
    RunConfig,
    RunHistory,
    _initial_state,
    run,
)
from .predictor import (
    NormTrace,
    RolloutConfig,
    TrainHyper,
    generate_training_data,
    load_predictor,
    save_predictor,
    train_mlp,
)
from .rkhs_function import (
    SamplerConfig,
    sample_random_function,
    scale_to_norm,
)
from .safeopt_core import beta_scale, confidence_bounds
from .seeding import derive_rng
from .subdomain import global_mask, partition_masks

SCHEMA_VERSION = 1
SCENARIOS = ("fig3_thresholds", "compare_conservative", "compare_optimistic",
             "synthetic2d", "hoeffding_mc")
PARTITION_LABELS = ("tilde", "hat", "global")


def _scenario_defaults(scenario: str) -> dict:
    common = dict(lengthscale=0.1, noise_std=0.01, delta=0.1,
                  norm_target=2.0, safe_fraction=0.6, f_g=None,
                  num_centers=100, alpha_bar=1.0, q_init=500, q_max=5000,
                  predictor_path=None, threads=1)
    per = {
        "fig3_thresholds": dict(grid_resolution=100, noise_std=0.001,
                                norm_target=1.0, sample_counts=[5, 20, 50]),
        "compare_conservative": dict(grid_resolution=100, budget=14,
                                     fixed_bound=10.0,
                                     snapshot_iterations=[3, 14],
                                     opt_fraction=0.9,
                                     s0_placement="far"),
        "compare_optimistic": dict(grid_resolution=100, budget=14,
                                   alpha_bar=0.04, fixed_bound=0.4,
                                   safe_fraction=0.5,
                                   snapshot_iterations=[3, 14],
                                   opt_fraction=0.9,
                                   s0_placement="far"),
        "synthetic2d": dict(grid_resolution=[50, 50], budget=15,
                            snapshot_iterations=[15],
                            s0_placement="argmax"),
        "hoeffding_mc": dict(replicates=500, q=200, deltas=[0.1, 0.5]),
    }
    out = dict(common)
    out.update(per[scenario])
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    out_dir: str
    seeds: tuple
    params: dict

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; "
                              f"expected one of {', '.join(SCENARIOS)}")
        if not self.seeds:
            raise ConfigError("seeds list must be nonempty")
        if self.scenario == "hoeffding_mc":
            if int(self.params["replicates"]) < 1:
                raise ConfigError("replicates must be >= 1")
            if int(self.params["q"]) < 1:
                raise ConfigError("q must be >= 1")
            if not self.params["deltas"]:
                raise ConfigError("deltas list must be nonempty")
        if self.scenario in ("compare_conservative", "compare_optimistic",
                             "synthetic2d"):
            if not self.params.get("predictor_path"):
                raise ConfigError(
                    f"scenario {self.scenario} requires predictor_path")
        res = self.params.get("grid_resolution")
        if self.scenario == "synthetic2d":
            if not isinstance(res, (list, tuple)) or len(res) != 2:
                raise ConfigError("synthetic2d needs a 2-D grid_resolution")


def load_spec(path, out_dir=None, seed=None, threads=None) -> ExperimentSpec:
    """Parse and validate a scenario config file.

    ``out_dir``, ``seed``, and ``threads`` are optional overrides that win
    over both the file and the environment.
    """
    raw = _load_yaml(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    scenario = raw.pop("scenario", None)
    if scenario is None:
        raise ConfigError(f"{path}: missing required key 'scenario'")
    if scenario not in SCENARIOS:
        raise ConfigError(f"{path}: unknown scenario {scenario!r}")
    out = raw.pop("out_dir", None)
    seeds = raw.pop("seeds", None)
    params = _scenario_defaults(scenario)
    for key, value in raw.items():
        if key not in params:
            raise ConfigError(f"{path}: unknown key {key!r} for scenario "
                              f"{scenario}")
        params[key] = value
    if out_dir is not None:
        out = out_dir
    if out is None:
        raise ConfigError(f"{path}: missing required key 'out_dir'")
    if seed is not None:
        seeds = [int(seed)]
    if seeds is None:
        seeds = [0]
    if threads is not None:
        params["threads"] = int(threads)
    return ExperimentSpec(scenario, str(out), tuple(int(s) for s in seeds),
                          params)


def _load_yaml(path):
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: {exc}")


# ---------------------------------------------------------------------------
# ground truths and start sets

def make_truth(spec_params: dict, grid: GridDomain, kernel: KernelConfig,
               seed: int) -> GroundTruth:
    """Random ground truth at the target norm; the threshold either comes
    from the config or is placed so the requested fraction of the domain
    is safe."""
    f = sample_random_function(grid, kernel,
                               SamplerConfig(num_centers=100),
                               derive_rng(seed, "truth"))
    f = scale_to_norm(f, float(spec_params["norm_target"]))
    if spec_params.get("f_g") is not None:
        f_g = float(spec_params["f_g"])
    else:
        vals = f(grid.points)
        f_g = float(np.quantile(vals, 1.0 - float(
            spec_params["safe_fraction"])))
    return GroundTruth(f, f_g)


def seed_triple(truth: GroundTruth, grid: GridDomain, margin: float = 0.1,
                placement: str = "argmax") -> tuple:
    """Three contiguous grid points, each with true constraint value at
    least ``margin``. Contiguity is along the last grid axis (consecutive
    flat indices within one row).

    ``placement`` picks among the valid windows: "argmax" starts at the
    constraint maximizer (guaranteed-comfortable start), "far" starts as
    far from the maximizer as possible while staying inside its safe
    connected component, so a comparison run actually has ground to cover.
    """
    vals = truth.reward(grid.points) - truth.threshold
    row_len = grid.resolution[-1]
    if row_len < 3:
        raise ConfigError("grid too coarse for a three-point start set")
    j = int(np.argmax(vals))
    if placement == "far":
        labels, _ = ndimage.label((vals >= 0.0).reshape(grid.resolution))
        component = labels.reshape(-1) == labels.reshape(-1)[j]
        best, best_score = None, -np.inf
        for start in _row_windows(grid, row_len):
            window = slice(start, start + 3)
            if not component[window].all():
                continue
            if float(vals[window].min()) < margin:
                continue
            score = float(np.linalg.norm(
                np.atleast_1d(grid.points[start + 1])
                - np.atleast_1d(grid.points[j])))
            if score > best_score + 1e-12:
                best, best_score = start, score
        if best is not None:
            return (best, best + 1, best + 2)
        # no distant window qualifies: fall through to the argmax rule
    row0 = (j // row_len) * row_len
    lo = int(np.clip(j - 1, row0, row0 + row_len - 3))
    best, best_min = None, -np.inf
    for start in range(row0, row0 + row_len - 2):
        window_min = float(vals[start:start + 3].min())
        if window_min > best_min:
            best, best_min = start, window_min
    candidate_min = float(vals[lo:lo + 3].min())
    if candidate_min < margin:
        lo = best
        candidate_min = best_min
    if candidate_min < margin:
        raise ConfigError(
            f"no three-point start window clears the safety margin "
            f"{margin} (best {candidate_min:.3f})")
    return (lo, lo + 1, lo + 2)


def _row_windows(grid: GridDomain, row_len: int):
    for row0 in range(0, grid.num_points, row_len):
        yield from range(row0, row0 + row_len - 2)


def _grid_for(params: dict) -> GridDomain:
    return GridDomain.uniform(params["grid_resolution"])


def _kernel_for(params: dict) -> KernelConfig:
    return KernelConfig(lengthscale=float(params["lengthscale"]))


# ---------------------------------------------------------------------------
# CSV and manifest plumbing

def write_csv(path, header, rows) -> None:
    """Write rows after checking each one matches the header width."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"row {k} has {len(row)} cells for "
                             f"{len(header)} columns")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv_rows(path):
    """Round-trip reader: returns (header, rows of string dicts)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [dict(zip(header, row, strict=True)) for row in reader]
    return header, rows


def _versions() -> dict:
    try:
        pkg = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def config_hash(payload: dict) -> str:
    canon = yaml.safe_dump(payload, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(spec: ExperimentSpec, files, extra=None) -> Path:
    payload = {
        "scenario": spec.scenario,
        "seeds": list(spec.seeds),
        "params": {k: v for k, v in sorted(spec.params.items())},
    }
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(payload),
        "scenario": spec.scenario,
        "seeds": list(spec.seeds),
        "params": payload["params"],
        "versions": _versions(),
        "files": sorted(str(f) for f in files),
    }
    if extra:
        manifest.update(extra)
    out = Path(spec.out_dir) / "manifest.yaml"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=False)
    return out


# ---------------------------------------------------------------------------
# run records

def record_header(dim: int) -> list:
    cols = ["schema_version", "seed", "algorithm", "iteration"]
    cols += [f"a{k}" for k in range(dim)]
    cols += ["reward", "constraint", "unsafe"]
    for label in PARTITION_LABELS:
        cols += [f"B_{label}", f"q_{label}", f"escalated_{label}",
                 f"S_{label}", f"M_{label}", f"G_{label}"]
    cols.append("best_so_far")
    return cols


def history_rows(spec_seed: int, algorithm: str, grid: GridDomain,
                 history: RunHistory) -> list:
    rows = []
    for rec in history.records:
        row = [SCHEMA_VERSION, spec_seed, algorithm, rec.iteration]
        row += [f"{c:.10g}" for c in np.atleast_1d(grid.points[rec.chosen])]
        row += [f"{rec.measured[0]:.10g}", f"{rec.measured[1]:.10g}",
                int(rec.unsafe)]
        for label in PARTITION_LABELS:
            st = rec.partitions.get(label)
            if st is None:
                row += ["", "", "", "", "", ""]
            else:
                row += [f"{st.bound:.10g}", st.q_used, int(st.escalated),
                        st.safe_count, st.maximizer_count, st.expander_count]
        row.append(f"{rec.best_safe_reward:.10g}")
        rows.append(row)
    return rows


def _predictor_for(params: dict):
    path = params.get("predictor_path")
    if path is None:
        return None
    try:
        return load_predictor(path)
    except FileNotFoundError:
        raise ConfigError(f"predictor file not found: {path}")


def _pacsbo_config(params: dict, grid, kernel, s0, seed) -> RunConfig:
    sampler = SamplerConfig(num_centers=int(params["num_centers"]),
                            coeff_bound=float(params["alpha_bar"]))
    pac = PacConfig(delta=float(params["delta"]),
                    q_init=int(params["q_init"]),
                    q_max=int(params["q_max"]), sampler=sampler)
    return RunConfig(grid=grid, kernel=kernel, s0_indices=s0,
                     noise_std=float(params["noise_std"]),
                     delta=float(params["delta"]),
                     budget=int(params["budget"]), pac=pac,
                     predictor=_predictor_for(params),
                     algorithm="pacsbo", seed=seed)


def _safeopt_config(params: dict, grid, kernel, s0, seed) -> RunConfig:
    return RunConfig(grid=grid, kernel=kernel, s0_indices=s0,
                     noise_std=float(params["noise_std"]),
                     delta=float(params["delta"]),
                     budget=int(params["budget"]),
                     algorithm="safeopt",
                     fixed_bound=float(params["fixed_bound"]), seed=seed)


# ---------------------------------------------------------------------------
# GP snapshots (enough to redraw the comparison figures)

def snapshot_header(dim: int) -> list:
    cols = [f"x{k}" for k in range(dim)] + ["sampled", "mu"]
    for label in PARTITION_LABELS:
        cols += [f"l_{label}", f"u_{label}"]
    return cols


def replay_snapshots(cfg: RunConfig, truth: GroundTruth,
                     history: RunHistory, iterations) -> dict:
    """Recompute the reward-channel confidence fields at chosen iterations.

    Snapshot ``t`` is the classification state the loop saw while picking
    its ``t``-th sample: the posterior on the prior measurements and the
    recorded norm bounds of that iteration. Returns {t: rows} keyed by the
    one-based iteration number.
    """
    wanted = {int(t) for t in iterations}
    out = {}
    samples = _initial_state(cfg, truth).samples
    for rec in history.records:
        t = rec.iteration + 1
        if t in wanted:
            posts = {i: gp_fit(samples, i, cfg.noise_std, cfg.kernel)
                     for i in CHANNELS}
            if cfg.algorithm == "pacsbo":
                tilde, hat, glob = partition_masks(samples, cfg.grid,
                                                   cfg.enlargement)
                masks = {"tilde": tilde, "hat": hat, "global": glob}
            else:
                masks = {"global": global_mask(cfg.grid)}
            mu = gp_predict(posts[0], cfg.grid.points)[0]
            fields = {}
            for label, mask in masks.items():
                st = rec.partitions[label]
                betas = {i: beta_scale(st.channel_bounds[k], cfg.noise_std,
                                       info_gain(posts[i]), cfg.delta)
                         for k, i in enumerate(CHANNELS)}
                fields[label] = confidence_bounds(posts, betas, mask)
            sampled = np.zeros(cfg.grid.num_points, dtype=bool)
            sampled[list(samples.indices)] = True
            rows = []
            for j in range(cfg.grid.num_points):
                row = [f"{c:.10g}" for c in np.atleast_1d(cfg.grid.points[j])]
                row += [int(sampled[j]), f"{mu[j]:.10g}"]
                for label in PARTITION_LABELS:
                    if label in fields:
                        row += [f"{fields[label].lower[0][j]:.10g}",
                                f"{fields[label].upper[0][j]:.10g}"]
                    else:
                        row += ["", ""]
                rows.append(row)
            out[t] = rows
        samples = samples.append(rec.chosen, rec.measured)
    return out


# ---------------------------------------------------------------------------
# scenarios

def _map_seeds(fn, spec: ExperimentSpec):
    threads = int(spec.params.get("threads", 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, spec.seeds))
    return [fn(s) for s in spec.seeds]


def scenario_fig3(spec: ExperimentSpec) -> dict:
    """Norm-bound study on a unit-norm truth: run the accept-or-grow
    estimator after 5, 20, and 50 measurements and record the accepted
    bound next to the final draw mean + Hoeffding width.

    The starting guess is the RKHS norm of the GP posterior mean, so the
    study exercises the estimator exactly as the optimization loop does,
    minus the trained predictor."""
    params = spec.params
    grid = _grid_for(params)
    kernel = _kernel_for(params)
    counts = [int(m) for m in params["sample_counts"]]
    sampler = SamplerConfig(num_centers=int(params["num_centers"]),
                            coeff_bound=float(params["alpha_bar"]))
    noise = float(params["noise_std"])
    pac = PacConfig(delta=float(params["delta"]),
                    q_init=int(params["q_init"]),
                    q_max=int(params["q_max"]),
                    sampler=sampler)
    mask = global_mask(grid)

    def one_seed(seed):
        f = scale_to_norm(
            sample_random_function(grid, kernel, SamplerConfig(100),
                                   derive_rng(seed, "truth")),
            float(params["norm_target"]))
        draw = derive_rng(seed, "draw")
        order = draw.permutation(grid.num_points)[:max(counts)]
        noise_rng = derive_rng(seed, "noise")
        eps = noise_rng.normal(0.0, noise, size=max(counts)) if noise else \
            np.zeros(max(counts))
        rows = []
        for m in counts:
            samples = SampleSet(grid, (), {0: (), 1: ()})
            for j in order[:m]:
                v = float(f(grid.points[int(j)].reshape(1, -1))[0])
                y = v + float(eps[len(samples)])
                samples = samples.append(int(j), {0: y, 1: y})
            guess = mean_rkhs_norm(gp_fit(samples, 0, noise, kernel))
            res = estimate_upper_bound(lambda _trace: guess, NormTrace(),
                                       samples, 0, noise, kernel, mask,
                                       pac, (seed, "fig3", m))
            rows.append((seed, m, guess, res))
        return rows

    per_seed = _map_seeds(one_seed, spec)
    header = ["schema_version", "seed", "num_samples", "initial_guess",
              "accepted_bound", "q_used", "escalated", "draw_mean",
              "draw_width", "threshold"]
    rows = [[SCHEMA_VERSION, s, m, f"{guess:.10g}", f"{res.bound:.10g}",
             res.q_used, int(res.escalated), f"{res.empirical_mean:.10g}",
             f"{res.width:.10g}",
             f"{res.empirical_mean + res.width:.10g}"]
            for seed_rows in per_seed
            for (s, m, guess, res) in seed_rows]
    out = Path(spec.out_dir)
    csv_path = out / "thresholds.csv"
    write_csv(csv_path, header, rows)
    bound_means = {m: float(np.mean([res.bound
                                     for seed_rows in per_seed
                                     for (_, mm, _, res) in seed_rows
                                     if mm == m]))
                   for m in counts}
    threshold_means = {m: float(np.mean([res.empirical_mean + res.width
                                         for seed_rows in per_seed
                                         for (_, mm, _, res) in seed_rows
                                         if mm == m]))
                       for m in counts}
    decreasing = all(
        all(seed_rows[k][3].bound > seed_rows[k + 1][3].bound
            for k in range(len(seed_rows) - 1))
        for seed_rows in per_seed)
    manifest = write_manifest(spec, [csv_path],
                              {"bound_means": bound_means,
                               "threshold_means": threshold_means,
                               "per_seed_decreasing": decreasing})
    return {"bound_means": bound_means, "threshold_means": threshold_means,
            "decreasing": decreasing, "csv": csv_path, "manifest": manifest}


def _true_safe_optimum(truth: GroundTruth, grid: GridDomain) -> float:
    vals = truth.reward(grid.points)
    safe = vals - truth.threshold >= 0.0
    return float(vals[safe].max())


def _iters_to_fraction(history: RunHistory, target: float):
    for rec in history.records:
        if rec.best_safe_reward >= target:
            return rec.iteration + 1
    return None


def scenario_compare(spec: ExperimentSpec) -> dict:
    """Both algorithms on the same truths, one pair of runs per seed."""
    params = spec.params
    grid = _grid_for(params)
    kernel = _kernel_for(params)
    out = Path(spec.out_dir)

    def one_seed(seed):
        truth = make_truth(params, grid, kernel, seed)
        s0 = seed_triple(truth, grid, placement=params["s0_placement"])
        results = {}
        for algorithm in ("pacsbo", "safeopt"):
            maker = _pacsbo_config if algorithm == "pacsbo" \
                else _safeopt_config
            cfg = maker(params, grid, kernel, s0, seed)
            results[algorithm] = (cfg, run(cfg, truth))
        return seed, truth, results

    outputs = _map_seeds(one_seed, spec)
    files, summary_rows = [], []
    frac = float(params["opt_fraction"])
    for seed, truth, results in outputs:
        optimum = _true_safe_optimum(truth, grid)
        for algorithm, (cfg, history) in results.items():
            path = out / f"records_{algorithm}_seed{seed}.csv"
            write_csv(path, record_header(grid.dim),
                      history_rows(seed, algorithm, grid, history))
            files.append(path)
            snaps = replay_snapshots(cfg, truth, history,
                                     params["snapshot_iterations"])
            for t, rows in snaps.items():
                spath = out / "snapshots" / \
                    f"{algorithm}_seed{seed}_iter{t}.csv"
                write_csv(spath, snapshot_header(grid.dim), rows)
                files.append(spath)
            reached = _iters_to_fraction(history, frac * optimum)
            summary_rows.append(
                [SCHEMA_VERSION, seed, algorithm,
                 f"{history.best_reward:.10g}",
                 int(history.any_unsafe()),
                 "" if reached is None else reached,
                 f"{optimum:.10g}"])
    summary_rows.sort(key=lambda r: (r[2], r[1]))
    summary_path = out / "summary.csv"
    write_csv(summary_path,
              ["schema_version", "seed", "algorithm", "best_reward",
               "any_unsafe", "iters_to_fraction", "safe_optimum"],
              summary_rows)
    files.append(summary_path)
    manifest = write_manifest(spec, files)
    return {"summary": summary_rows, "csv": summary_path,
            "manifest": manifest}


def scenario_synthetic2d(spec: ExperimentSpec) -> dict:
    """2-D run with the explored-region dump after the final iteration."""
    params = spec.params
    grid = _grid_for(params)
    kernel = _kernel_for(params)
    out = Path(spec.out_dir)

    def one_seed(seed):
        truth = make_truth(params, grid, kernel, seed)
        s0 = seed_triple(truth, grid, placement=params["s0_placement"])
        cfg = _pacsbo_config(params, grid, kernel, s0, seed)
        return seed, truth, cfg, run(cfg, truth)

    outputs = _map_seeds(one_seed, spec)
    files, summary_rows = [], []
    for seed, truth, cfg, history in outputs:
        path = out / f"records_pacsbo_seed{seed}.csv"
        write_csv(path, record_header(grid.dim),
                  history_rows(seed, "pacsbo", grid, history))
        files.append(path)
        explored = _explored_rows(cfg, truth, history)
        epath = out / f"explored_seed{seed}.csv"
        write_csv(epath, ["x0", "x1", "sampled", "tilde", "hat"], explored)
        files.append(epath)
        summary_rows.append([SCHEMA_VERSION, seed, "pacsbo",
                             f"{history.best_reward:.10g}",
                             int(history.any_unsafe()),
                             len(history.records) + len(cfg.s0_indices)])
    summary_path = out / "summary.csv"
    write_csv(summary_path,
              ["schema_version", "seed", "algorithm", "best_reward",
               "any_unsafe", "total_samples"], summary_rows)
    files.append(summary_path)
    manifest = write_manifest(spec, files)
    return {"summary": summary_rows, "csv": summary_path,
            "manifest": manifest}


def _explored_rows(cfg, truth, history):
    samples = _initial_state(cfg, truth).samples
    for rec in history.records:
        samples = samples.append(rec.chosen, rec.measured)
    tilde, hat, _ = partition_masks(samples, cfg.grid, cfg.enlargement)
    sampled = np.zeros(cfg.grid.num_points, dtype=bool)
    sampled[list(samples.indices)] = True
    rows = []
    for j in range(cfg.grid.num_points):
        x = cfg.grid.points[j]
        rows.append([f"{x[0]:.10g}", f"{x[1]:.10g}", int(sampled[j]),
                     int(tilde.member[j]), int(hat.member[j])])
    return rows


def scenario_hoeffding(spec: ExperimentSpec) -> dict:
    """Monte Carlo coverage of the concentration width on bounded draws.

    Each replicate averages q uniform [0, 1] variables; the event counted
    is the true mean landing inside the two-sided width around the
    empirical mean.
    """
    params = spec.params
    replicates = int(params["replicates"])
    q = int(params["q"])
    rows, report = [], {}
    for delta in [float(d) for d in params["deltas"]]:
        width = hoeffding_width(delta, q, 1.0)
        hits = 0
        for rep in range(replicates):
            rng = derive_rng(spec.seeds[0], "hoeffding", rep,
                             int(round(delta * 1e6)))
            mean = float(rng.random(q).mean())
            hits += abs(mean - 0.5) <= width
        coverage = hits / replicates
        report[delta] = coverage
        rows.append([SCHEMA_VERSION, f"{delta:.10g}", replicates, q,
                     f"{width:.10g}", f"{coverage:.10g}"])
    out = Path(spec.out_dir)
    csv_path = out / "coverage.csv"
    write_csv(csv_path, ["schema_version", "delta", "replicates", "q",
                         "width", "coverage"], rows)
    manifest = write_manifest(spec, [csv_path], {"coverage": {
        f"{d:.10g}": c for d, c in report.items()}})
    return {"coverage": report, "csv": csv_path, "manifest": manifest}


def run_experiment(spec: ExperimentSpec) -> dict:
    if spec.scenario == "fig3_thresholds":
        return scenario_fig3(spec)
    if spec.scenario in ("compare_conservative", "compare_optimistic"):
        return scenario_compare(spec)
    if spec.scenario == "synthetic2d":
        return scenario_synthetic2d(spec)
    return scenario_hoeffding(spec)


# ---------------------------------------------------------------------------
# predictor training pipeline

TRAIN_DEFAULTS = dict(
    out_path=None, grid_resolution=100, lengthscale=0.1, noise_std=0.01,
    delta=0.1, q_train=200, rollout_iters=30, label_multiplier=1.0,
    safe_quantile=0.4, t_max=50, num_centers=100, alpha_bar=1.0,
    hidden=[64, 64], epochs=400, batch_size=64, step=0.003, seed=0,
)


def load_train_config(path, out_path=None, seed=None) -> dict:
    raw = _load_yaml(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    cfg = dict(TRAIN_DEFAULTS)
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"{path}: unknown key {key!r}")
        cfg[key] = value
    if out_path is not None:
        cfg["out_path"] = out_path
    if seed is not None:
        cfg["seed"] = int(seed)
    if not cfg["out_path"]:
        raise ConfigError(f"{path}: missing required key 'out_path'")
    if not isinstance(cfg["hidden"], (list, tuple)):
        raise ConfigError(f"{path}: 'hidden' must be a list of layer sizes")
    return cfg


def train_predictor_pipeline(cfg: dict) -> dict:
    """Generate rollout data, fit the network, save model and report."""
    grid = GridDomain.uniform(cfg["grid_resolution"])
    kernel = KernelConfig(lengthscale=float(cfg["lengthscale"]))
    sampler = SamplerConfig(num_centers=int(cfg["num_centers"]),
                            coeff_bound=float(cfg["alpha_bar"]))
    rollout = RolloutConfig(
        grid=grid, kernel=kernel, sampler=sampler,
        q_train=int(cfg["q_train"]),
        rollout_iters=int(cfg["rollout_iters"]),
        noise_std=float(cfg["noise_std"]), delta=float(cfg["delta"]),
        label_multiplier=float(cfg["label_multiplier"]),
        safe_quantile=float(cfg["safe_quantile"]), t_max=int(cfg["t_max"]))
    data = generate_training_data(rollout, int(cfg["seed"]))
    hyper = TrainHyper(epochs=int(cfg["epochs"]),
                       batch_size=int(cfg["batch_size"]),
                       step=float(cfg["step"]))
    model = train_mlp(data, tuple(int(h) for h in cfg["hidden"]), hyper,
                      seed=int(cfg["seed"]))
    out_path = Path(cfg["out_path"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_predictor(model, out_path)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "rows": len(data.labels),
        "label_mean": float(np.mean(data.labels)),
        "label_max": float(np.max(data.labels)),
        "final_loss": float(model.final_loss),
        "hidden": [int(h) for h in cfg["hidden"]],
        "epochs": int(cfg["epochs"]),
        "versions": _versions(),
    }
    report_path = out_path.with_suffix(".report.yaml")
    with open(report_path, "w") as fh:
        yaml.safe_dump(report, fh, sort_keys=False)
    return {"model": model, "report": report, "path": out_path,
            "report_path": report_path}
