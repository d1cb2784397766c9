import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from windowed_conv.errors import InsufficientDataError, InvalidArgumentError, InvalidConfigError
from windowed_conv.signal_core import (
    GridSignal,
    StationaryPairConfig,
    WindowSpec,
    apply_window,
    draw_noise,
    empirical_autocovariance,
    generate_stationary_pair,
    pair_from_noise,
    sample_variance,
)

SMOOTH = StationaryPairConfig(1.0, (0.5, 1.0, -0.3, 0.2), (0.3, 0.8, 0.5, -0.4, 0.2), "tanh")


def test_generated_pair_shares_grid():
    x, y = generate_stationary_pair(SMOOTH, 3, extent=50.0, resolution=0.5)
    assert x.spatial_shape == y.spatial_shape == (100,)
    assert x.origin == y.origin and x.resolution == y.resolution == 0.5


def test_vanishing_noise_gives_vanishing_signals():
    cfg = StationaryPairConfig(1e-200, SMOOTH.gen_filter, SMOOTH.target_filter, "tanh")
    x, y = generate_stationary_pair(cfg, 0, 64)
    assert np.max(np.abs(x.values)) < 1e-190
    assert np.max(np.abs(y.values)) < 1e-190


def test_identity_pair_is_equal():
    cfg = StationaryPairConfig(2.0, (1.0,), (1.0,), "identity")
    x, y = generate_stationary_pair(cfg, 11, 128)
    np.testing.assert_array_equal(x.values, y.values)


def test_input_variance_matches_closed_form():
    g = np.array(SMOOTH.gen_filter)
    cfg = StationaryPairConfig(1.7, tuple(g), (1.0,), "identity")
    expected = 1.7**2 * np.sum(g**2)
    # process mean is zero, so mean(x^2) is an unbiased per-seed estimate
    est = np.array([np.mean(generate_stationary_pair(cfg, s, 512)[0].values ** 2) for s in range(100)])
    se = est.std(ddof=1) / np.sqrt(est.size)
    assert abs(est.mean() - expected) <= 3 * se
    assert cfg.variance_x() == pytest.approx(expected)


def test_same_seed_same_bits():
    a = generate_stationary_pair(SMOOTH, 42, 300)
    b = generate_stationary_pair(SMOOTH, 42, 300)
    for u, v in zip(a, b):
        assert u.values.tobytes() == v.values.tobytes()


@pytest.mark.parametrize("kwargs", [dict(noise_std=0.0), dict(noise_std=-1.0)])
def test_bad_noise_rejected(kwargs):
    with pytest.raises(InvalidConfigError):
        StationaryPairConfig(gen_filter=(1.0,), **kwargs)


def test_extent_below_support_rejected():
    with pytest.raises(InvalidConfigError):
        generate_stationary_pair(SMOOTH, 0, extent=4.0)


def test_clamp_bounds_noise():
    cfg = StationaryPairConfig(1.0, (1.0,), (1.0,), clamp=True)
    w = draw_noise(cfg, 0, 200_000)
    assert np.max(np.abs(w)) <= 6.0


def test_noise_shift_shifts_both_outputs():
    n, k = 200, 7
    w = draw_noise(SMOOTH, 5, n)
    x0, y0 = pair_from_noise(SMOOTH, w, n)
    x1, y1 = pair_from_noise(SMOOTH, np.roll(w, k), n)
    np.testing.assert_array_equal(x1.values[k:], x0.values[:-k])
    np.testing.assert_array_equal(y1.values[k:], y0.values[:-k])


def test_2d_pair_generation():
    g = np.outer([1.0, 0.5], [1.0, -0.5])
    cfg = StationaryPairConfig(1.0, g, np.eye(3), "relu")
    x, y = generate_stationary_pair(cfg, 0, 16)
    assert x.spatial_shape == (16, 16)
    assert np.all(y.values >= 0)


def test_halves_agree_statistically():
    diffs_mean, diffs_cov = [], []
    for s in range(100):
        x, _ = generate_stationary_pair(SMOOTH, s, 1024)
        left = GridSignal(x.values[:512])
        right = GridSignal(x.values[512:])
        diffs_mean.append(left.values.mean() - right.values.mean())
        diffs_cov.append(empirical_autocovariance(left, 1) - empirical_autocovariance(right, 1))
    for d in (np.array(diffs_mean), np.array(diffs_cov)):
        assert abs(d.mean()) <= 3 * d.std(ddof=1) / np.sqrt(d.size)


# ------------------------------------------------------------------ windows


def test_window_covering_grid_is_identity():
    sig = GridSignal(np.arange(10.0), resolution=1.0, origin=-4.5)
    out = apply_window(sig, WindowSpec(width=100.0))
    np.testing.assert_array_equal(out.values, sig.values)
    assert (out.origin, out.resolution) == (sig.origin, sig.resolution)


def test_tiny_window_keeps_at_most_one_sample():
    sig = GridSignal(np.ones(11), origin=-5.0)
    for c in (0.0, 0.3, 0.5, -2.9):
        out = apply_window(sig, WindowSpec(width=0.2, center=c))
        assert np.count_nonzero(out.values) <= 1


def test_half_window_sum_matches_mask():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=64)
    sig = GridSignal(vals, resolution=0.5, origin=-15.75)
    w = WindowSpec(width=16.0, center=0.0)
    out = apply_window(sig, w)
    coords = -15.75 + 0.5 * np.arange(64)
    expect = sum(v for v, c in zip(vals, coords) if -8.0 <= c <= 8.0)
    assert out.values.sum() == pytest.approx(expect, rel=1e-12)


def test_disjoint_window_zeroes_everything():
    sig = GridSignal(np.ones(8))
    assert not apply_window(sig, WindowSpec(2.0, center=100.0)).values.any()


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40),
    st.floats(0.01, 50.0),
    st.floats(-30.0, 30.0),
)
def test_apply_window_idempotent(vals, width, center):
    sig = GridSignal(np.array(vals), origin=-len(vals) / 2)
    w = WindowSpec(width, center)
    once = apply_window(sig, w)
    np.testing.assert_array_equal(apply_window(once, w).values, once.values)


def test_2d_window():
    sig = GridSignal(np.ones((6, 6)), origin=-2.5)
    out = apply_window(sig, WindowSpec(2.0))
    assert out.values.sum() == 4.0


# ---------------------------------------------------------------- statistics


def test_variance_of_constant_is_zero():
    sigs = [GridSignal(np.full(10, 3.0)), GridSignal(np.full(5, 3.0))]
    assert sample_variance(sigs, WindowSpec(100.0)) == 0.0


def test_pooled_variance_by_hand():
    sigs = [GridSignal(np.array([0.0])), GridSignal(np.array([2.0]))]
    assert sample_variance(sigs, WindowSpec(1.0)) == 2.0


def test_pooled_variance_needs_samples():
    with pytest.raises(InsufficientDataError):
        sample_variance([GridSignal(np.ones(4))], WindowSpec(1.0, center=50.0))
    with pytest.raises(InsufficientDataError):
        sample_variance([GridSignal(np.ones(1))], WindowSpec(1.0))


def test_pooled_variance_matches_closed_form():
    cfg = StationaryPairConfig(1.0, SMOOTH.gen_filter, (1.0,))
    sigs = [generate_stationary_pair(cfg, s, 200)[0] for s in range(100)]
    region = WindowSpec(1000.0)
    per = np.array([sample_variance([s], region) for s in sigs])
    assert abs(sample_variance(sigs, region) - cfg.variance_x()) <= 3 * per.std(ddof=1) / 10 + 0.01


def test_autocovariance_definitions():
    assert empirical_autocovariance(GridSignal(np.full(9, 2.0)), 0) == 0.0
    vals = np.random.default_rng(1).normal(size=50)
    assert empirical_autocovariance(GridSignal(vals), 0) == pytest.approx(np.var(vals))


def test_white_noise_uncorrelated_at_positive_lag():
    cfg = StationaryPairConfig(1.0, (1.0,), (1.0,))
    for lag in (1, 3):
        est = np.array([empirical_autocovariance(generate_stationary_pair(cfg, s, 256)[0], lag)
                        for s in range(100)])
        assert abs(est.mean()) <= 3 * est.std(ddof=1) / 10


def test_autocovariance_lag_range():
    with pytest.raises(InvalidArgumentError):
        empirical_autocovariance(GridSignal(np.ones(5)), 5)


def test_grid_signal_invariants():
    with pytest.raises(InvalidArgumentError):
        GridSignal(np.array([1.0, np.nan]))
    with pytest.raises(InvalidArgumentError):
        GridSignal(np.ones(3), resolution=0.0)
    with pytest.raises(InvalidArgumentError):
        GridSignal(np.ones(0))
    sig = GridSignal(np.ones(3))
    with pytest.raises(ValueError):
        sig.values[0] = 2.0
