import math

import numpy as np
import pytest
from scipy import stats

from almost_anosov.maps import TorusPoint
from almost_anosov.stats_lab import (
    CorrelationSeries,
    MeasureSampler,
    birkhoff_sums,
    bump_at,
    clt_experiment,
    constant,
    correlation_series,
    cos_x,
    cos_y,
    distance_power,
    first_noise_crossing,
    fit_exponential_decay,
    lagged_covariance,
    parse_observable,
    sample_measure,
)


# ---------------------------------------------------------------- observables


def test_builtin_observables():
    xs, ys = np.array([0.0, 0.25, 0.5]), np.array([0.5, 0.0, 0.25])
    assert np.allclose(cos_x()(xs, ys), [1, 0, -1], atol=1e-15)
    assert np.allclose(cos_y(2)(xs, ys), [1, 1, -1], atol=1e-15)
    assert np.allclose(distance_power(2)(xs, ys), [0.25, 0.0625, 0.3125])
    assert np.all(constant(3)(xs, ys) == 3)
    b = bump_at(0.5, 0.5, 0.1)
    assert b(0.5, 0.5) == pytest.approx(1.0)
    assert b(0.5, 0.61) == 0.0


@pytest.mark.parametrize("text,name,params", [
    ("cos_x", "cos_x", (1,)), ("cos_y:3", "cos_y", (3,)), ("bump:0.5,0.4,0.1", "bump", (0.5, 0.4, 0.1)),
    ("dist_pow:0.5", "dist_pow", (0.5,)), ("const:2", "const", (2.0,)),
])
def test_parse_observable(text, name, params):
    h = parse_observable(text)
    assert h.name == name and h.params == params


def test_parse_unknown_observable():
    with pytest.raises(ValueError):
        parse_observable("sin_x")


def test_declared_holder_data_bounds_increments(rng):
    for h in (cos_x(), cos_y(2), bump_at(0.3, 0.3, 0.2), distance_power(0.5)):
        p = rng.random((2, 2000))
        q = (p + rng.normal(0, 1e-3, p.shape)) % 1.0
        d = np.hypot(*((p - q + 0.5) % 1.0 - 0.5))
        inc = np.abs(h(*p) - h(*q))
        assert np.all(inc <= h.holder_constant * d**h.holder_exponent + 1e-12)


# ---------------------------------------------------------------- sampling


def test_dirac_sampler(fmap):
    xs, ys = sample_measure(fmap, "dirac", 100)
    assert np.all(xs == 0) and np.all(ys == 0)


def test_sampler_reproducible(fmap):
    a = sample_measure(fmap, "srb", 1000, seed=3)
    b = sample_measure(fmap, "srb", 1000, seed=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_cat_map_srb_sampling_is_uniform(cat):
    xs, ys = sample_measure(cat, "srb", 10**5, seed=1)
    counts, _, _ = np.histogram2d(xs, ys, bins=10, range=[[0, 1], [0, 1]])
    assert stats.chisquare(counts.ravel()).pvalue > 0.05


def test_ulam_sampler_follows_weights(fmap):
    w = np.zeros((4, 4))
    w[1, 2] = 1.0
    xs, ys = sample_measure(fmap, MeasureSampler("ulam", w), 500)
    assert np.all((xs >= 0.25) & (xs < 0.5) & (ys >= 0.5) & (ys < 0.75))


def test_sampler_validation():
    with pytest.raises(ValueError):
        MeasureSampler("lebesgue")
    with pytest.raises(ValueError):
        MeasureSampler("ulam")


# ---------------------------------------------------------------- correlations


def test_lagged_covariance_oracle(rng):
    a, b = rng.random(1000), rng.random(1000)
    C = lagged_covariance(a, b, 3)
    assert C[0] == pytest.approx(np.cov(a, b, bias=True)[0, 1])
    assert C[2] == pytest.approx(np.cov(a[2:], b[:-2], bias=True)[0, 1])


def test_constant_observable_has_no_correlation(fmap):
    c = correlation_series(fmap, "srb", cos_x(), constant(1.0), 10, 10**5)
    assert np.abs(c.C).max() <= 3 / math.sqrt(10**5)


def test_c0_is_covariance(fmap):
    c = correlation_series(fmap, "srb", cos_x(), cos_y(), 5, 10**5, seed=2)
    xs, ys = sample_measure(fmap, "srb", 10**5 + 5, seed=2)
    assert c.C[0] == pytest.approx(np.cov(np.cos(2 * np.pi * xs), np.cos(2 * np.pi * ys), bias=True)[0, 1])


def test_swap_symmetry_at_lag_zero(fmap):
    a = correlation_series(fmap, "srb", cos_x(), bump_at(0.5, 0.5), 3, 10**5)
    b = correlation_series(fmap, "srb", bump_at(0.5, 0.5), cos_x(), 3, 10**5)
    assert a.C[0] == pytest.approx(b.C[0], rel=1e-12)


def test_dirac_correlations_vanish(fmap):
    c = correlation_series(fmap, "dirac", cos_x(), cos_y(), 10, 10**5)
    assert np.all(c.C == 0)


def test_orbit_length_guard(fmap):
    with pytest.raises(ValueError):
        correlation_series(fmap, "srb", cos_x(), cos_x(), 10, 1000)


def test_default_correlations_decay(fmap):
    c = correlation_series(fmap, "srb", cos_x(), cos_x(), 30, 10**6)
    fit = fit_exponential_decay(c, (1, 30))
    decayed = np.abs(c.C[10:]).max() <= c.noise_floor
    assert decayed or (fit.kappa < 1 and fit.r_squared >= 0.9)
    assert first_noise_crossing(c) is not None


# ---------------------------------------------------------------- decay fits


def test_fit_geometric_synthetic():
    fit = fit_exponential_decay(0.8 ** np.arange(31), (1, 30))
    assert fit.status == "fit"
    assert fit.kappa == pytest.approx(0.8, abs=0.01)
    assert fit.r_squared > 0.999


def test_fit_power_law_flagged():
    C = np.concatenate([[1.0], 1.0 / np.arange(1, 31) ** 2])
    fit = fit_exponential_decay(C, (1, 30))
    assert fit.r_squared < 0.9
    assert fit.kappa > 0.8


def test_fit_zero_series_decayed_to_noise():
    assert fit_exponential_decay(np.zeros(31), (1, 30)).status == "decayed-to-noise"


def test_noise_crossing():
    s = CorrelationSeries(np.arange(6), np.array([1, 0.5, 0.2, 0.001, 0.3, 0.0]), 10**6, 0, 0, 0.003)
    assert first_noise_crossing(s) == 3


# ---------------------------------------------------------------- CLT


def test_zero_observable_is_coboundary_candidate(fmap):
    r = clt_experiment(fmap, "srb", constant(0.0), 1000, 10**4)
    assert r.sigma == 0 and r.coboundary_candidate


def test_clt_size_guard(fmap):
    with pytest.raises(ValueError):
        clt_experiment(fmap, "srb", cos_x(), 100, 10**4)


def test_birkhoff_sums_match_direct_iteration(fmap):
    s = MeasureSampler("ulam", np.full((8, 8), 1 / 64))
    fast = birkhoff_sums(fmap, s, cos_x(), 50, 20, seed=5)
    xs, ys = sample_measure(fmap, s, 20, seed=5)
    acc = np.zeros(20)
    for _ in range(50):
        acc += np.cos(2 * np.pi * xs)
        xs, ys = fmap.apply_xy(xs, ys)
    assert np.allclose(fast, acc, atol=1e-9)


def test_clt_default(fmap):
    r = clt_experiment(fmap, "srb", cos_x(), 1000, 10**4)
    assert r.sigma > 0 and not r.coboundary_candidate
    assert r.ks_distance < 0.05
    assert 0 <= r.ks_distance <= 1
    assert np.trapezoid(r.hist_density, r.hist_centers) == pytest.approx(1.0, abs=0.05)


def test_sigma_stabilises(fmap):
    a = clt_experiment(fmap, "srb", cos_x(), 1000, 10**4).sigma
    b = clt_experiment(fmap, "srb", cos_x(), 2000, 10**4).sigma
    assert abs(b - a) / a < 0.1


def test_ks_does_not_grow_with_trials(fmap):
    ks = []
    for trials in (10**3, 10**4):
        S = birkhoff_sums(fmap, MeasureSampler("srb"), cos_x(), 1000, trials, seed=0)
        z = (S - S.mean()) / math.sqrt(1000)
        ks.append(stats.kstest(z, "norm", args=(0, z.std(ddof=1))).statistic)
    assert ks[1] <= ks[0] + 0.01
