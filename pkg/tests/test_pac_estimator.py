"""Accept-or-grow norm estimation and the Hoeffding width."""

import numpy as np
import pytest

from pacsbo.errors import NumericError
from pacsbo.kernel_gp import GridDomain, KernelConfig, SampleSet
from pacsbo.pac_estimator import (
    PacConfig,
    PacResult,
    estimate_upper_bound,
    hoeffding_width,
)
from pacsbo.rkhs_function import SamplerConfig, interpolating_norms
from pacsbo.subdomain import global_mask

W_01_5000_UNIT = 0.017308183826022852  # sqrt(ln(20) / 10000)


def test_hoeffding_width_frozen_value():
    assert hoeffding_width(0.1, 5000, 1.0) == pytest.approx(W_01_5000_UNIT,
                                                            abs=1e-18)


def test_hoeffding_width_zero_range():
    assert hoeffding_width(0.3, 10, 0.0) == 0.0


def test_hoeffding_width_quadrupling_q_halves():
    w1 = hoeffding_width(0.1, 250, 2.0)
    w2 = hoeffding_width(0.1, 1000, 2.0)
    assert w2 == pytest.approx(0.5 * w1, rel=1e-12)


@pytest.mark.parametrize("delta,q,rng", [(0.0, 10, 1.0), (1.0, 10, 1.0),
                                         (0.1, 0, 1.0), (0.1, 10, -1.0)])
def test_hoeffding_width_rejects_bad_arguments(delta, q, rng):
    with pytest.raises(ValueError):
        hoeffding_width(delta, q, rng)


def test_pac_config_validation():
    with pytest.raises(ValueError):
        PacConfig(delta=1.5)
    with pytest.raises(ValueError):
        PacConfig(q_init=100, q_max=50)
    with pytest.raises(ValueError):
        PacConfig(f_safety=1.0)
    with pytest.raises(ValueError):
        PacConfig(q_init=0)


def test_pac_result_rejects_inconsistent_bound():
    with pytest.raises(ValueError):
        PacResult(bound=1.0, q_used=10, empirical_mean=1.5, width=0.1,
                  escalated=False)
    PacResult(bound=1.0, q_used=10, empirical_mean=1.5, width=0.1,
              escalated=True)  # escalation exempts nothing to check here


def setup_problem(num_samples=3, resolution=60):
    grid = GridDomain.uniform(resolution)
    kernel = KernelConfig(lengthscale=0.1)
    rng = np.random.default_rng(77)
    idx = sorted(rng.choice(grid.num_points, size=num_samples, replace=False))
    vals = list(rng.uniform(-0.5, 0.5, size=num_samples))
    samples = SampleSet(grid, idx, {0: vals, 1: vals})
    return grid, kernel, samples


def test_generous_start_accepts_first_batch():
    grid, kernel, samples = setup_problem()
    cfg = PacConfig(q_init=50, q_max=200,
                    sampler=SamplerConfig(num_centers=30))
    res = estimate_upper_bound(lambda trace: 1e6, None, samples, 0, 0.01,
                               kernel, global_mask(grid), cfg, (0, 5))
    assert res.bound == 1e6
    assert res.q_used == cfg.q_init
    assert not res.escalated
    assert res.bound >= res.empirical_mean + res.width


def test_tiny_start_escalates_geometrically():
    grid, kernel, samples = setup_problem()
    cfg = PacConfig(q_init=50, q_max=100, f_safety=2.0,
                    sampler=SamplerConfig(num_centers=30))
    start = 0.01
    res = estimate_upper_bound(lambda trace: start, None, samples, 0, 0.01,
                               kernel, global_mask(grid), cfg, (0, 6))
    assert res.escalated
    level = res.empirical_mean + res.width
    assert res.bound >= level
    assert res.bound / 2.0 < level  # smallest sufficient power of two
    k = np.log2(res.bound / start)
    assert k == pytest.approx(round(k), abs=1e-9)
    assert res.q_used <= cfg.q_max + cfg.q_init


def test_escalation_uses_one_overshoot_batch():
    grid, kernel, samples = setup_problem()
    cfg = PacConfig(q_init=40, q_max=120,
                    sampler=SamplerConfig(num_centers=30))
    res = estimate_upper_bound(lambda trace: 1e-12, None, samples, 0, 0.01,
                               kernel, global_mask(grid), cfg, (0, 7))
    assert res.escalated
    assert res.q_used == 160  # 40, 80, 120, then the overshoot batch


def test_pooled_draws_match_direct_batch():
    grid, kernel, samples = setup_problem()
    sampler = SamplerConfig(num_centers=30)
    cfg = PacConfig(q_init=30, q_max=90, sampler=sampler)
    # a start that forces exactly two batches: above the 60-draw level but
    # below the 30-draw level is hard to hand-tune, so instead compare the
    # estimator's reported mean against the direct pooled computation
    res = estimate_upper_bound(lambda trace: 1e-12, None, samples, 0, 0.01,
                               kernel, global_mask(grid), cfg, (3, 1))
    direct = interpolating_norms(samples, 0, 0.01, grid, kernel, sampler,
                                 (3, 1), res.q_used,
                                 region=global_mask(grid).member)
    assert res.empirical_mean == pytest.approx(float(direct.mean()), abs=1e-12)
    assert res.width == pytest.approx(
        hoeffding_width(cfg.delta, res.q_used,
                        float(direct.max() - direct.min())), abs=1e-15)


def test_determinism_across_calls():
    grid, kernel, samples = setup_problem()
    cfg = PacConfig(q_init=25, q_max=50, sampler=SamplerConfig(num_centers=25))
    a = estimate_upper_bound(lambda trace: 2.5, None, samples, 0, 0.01,
                             kernel, global_mask(grid), cfg, (9, 0))
    b = estimate_upper_bound(lambda trace: 2.5, None, samples, 0, 0.01,
                             kernel, global_mask(grid), cfg, (9, 0))
    assert a == b


def test_non_finite_start_raises():
    grid, kernel, samples = setup_problem()
    cfg = PacConfig(q_init=10, q_max=20, sampler=SamplerConfig(num_centers=20))
    with pytest.raises(NumericError):
        estimate_upper_bound(lambda trace: float("nan"), None, samples, 0,
                             0.01, kernel, global_mask(grid), cfg, (1,))


def test_region_restriction_respected():
    grid, kernel, samples = setup_problem(num_samples=2, resolution=50)
    from pacsbo.subdomain import convex_hull_mask, enlarge_mask
    hull = convex_hull_mask(samples, grid)
    hat = enlarge_mask(hull, 1.1, grid)
    cfg = PacConfig(q_init=20, q_max=40, sampler=SamplerConfig(num_centers=20))
    res_hat = estimate_upper_bound(lambda trace: 1e-12, None, samples, 0,
                                   0.01, kernel, hat, cfg, (4, 2))
    res_all = estimate_upper_bound(lambda trace: 1e-12, None, samples, 0,
                                   0.01, kernel, global_mask(grid), cfg,
                                   (4, 2))
    # same seeds, different tail-center regions: distinct distributions
    assert res_hat.empirical_mean != res_all.empirical_mean
