import math

import numpy as np
import pytest

from almost_anosov.maps import TorusPoint, torus_distance
from almost_anosov.thermo import birkhoff_histogram
from almost_anosov.tower import (
    TIMEOUT,
    Rectangle,
    ReturnTimeHistogram,
    StablePairs,
    check_arithmetic_condition,
    check_contraction,
    check_distortion,
    check_intermediate_bound,
    first_return_time,
    fit_tail_rate,
    rect_srb_mass,
    return_time_histogram,
    return_times_xy,
    stable_pairs,
    track_pairs,
)

from .conftest import LAMBDA_U, LOG_LAMBDA


@pytest.fixture(scope="module")
def rect(fmap):
    return Rectangle.default(fmap)


@pytest.fixture(scope="module")
def pairs(fmap, rect):
    return stable_pairs(fmap, rect, 200)


# ---------------------------------------------------------------- rectangle


def test_default_rectangle_invariants(fmap, rect):
    assert rect.diameter < 0.2
    assert rect.boundary_distance_to_origin() > fmap.spec.r1
    assert rect.area == pytest.approx(0.01, rel=1e-12)


def test_rectangle_meeting_singularity_rejected(fmap):
    with pytest.raises(ValueError):
        Rectangle.around(fmap, TorusPoint(0.06, 0.0), 0.05, 0.05)
    with pytest.raises(ValueError):
        Rectangle.around(fmap, TorusPoint(0.5, 0.5), 0.09, 0.09)


def test_boundary_is_not_inside(rect):
    x, y = rect.to_xy(np.array([rect.u_half, 0.0]), np.array([0.0, -rect.s_half]))
    assert not rect.contains_xy(x, y).any()
    x, y = rect.to_xy(np.array([0.999 * rect.u_half]), np.array([0.0]))
    assert rect.contains_xy(x, y).all()


# ---------------------------------------------------------------- return times


def test_return_time_one_when_image_inside(fmap, rect, rng):
    xs, ys = rect.sample(rng, 20)
    px, py = fmap.inverse_xy(xs, ys)
    for x, y in zip(px, py):
        assert first_return_time(fmap, rect, TorusPoint(x, y)) == 1


def test_return_time_matches_orbit_replay(fmap, rect, rng):
    xs, ys = rect.sample(rng, 1000)
    taus = return_times_xy(fmap, rect, xs, ys, 2000)
    for x, y, tau in zip(xs, ys, taus):
        px, py = np.array([x]), np.array([y])
        want = TIMEOUT
        for n in range(1, 2001):
            px, py = fmap.apply_xy(px, py)
            if rect.contains_xy(px, py)[0]:
                want = n
                break
        assert tau == want


def test_timeout_is_a_value(fmap, rect):
    # the origin never moves, so it never enters the rectangle
    assert first_return_time(fmap, rect, TorusPoint(0.0, 0.0), 50) == TIMEOUT


def test_histogram_bookkeeping_and_reproducibility(fmap, rect):
    a = return_time_histogram(fmap, rect, 10**4, 500, seed=3)
    b = return_time_histogram(fmap, rect, 10**4, 500, seed=3)
    assert a == b
    assert sum(a.counts.values()) + a.timeouts == a.samples == 10**4
    assert all(n >= 1 for n in a.counts)
    rows = list(a.rows())
    assert rows[-1][2] == pytest.approx(1 - a.timeout_fraction)


def test_histogram_merge_is_associative():
    h = [ReturnTimeHistogram.from_times(np.array(t), 10) for t in ([1, 2, 2], [3, -1], [2, 5, 5, -1])]
    left = h[0].merge(h[1]).merge(h[2])
    right = h[0].merge(h[1].merge(h[2]))
    assert left == right
    assert left.counts == {1: 1, 2: 3, 3: 1, 5: 2}
    assert left.timeouts == 2


def test_minimum_sample_count(fmap, rect):
    with pytest.raises(ValueError):
        return_time_histogram(fmap, rect, 100)


def test_kac_consistency(fmap, rect):
    hist = return_time_histogram(fmap, rect, 10**5, 10**4)
    assert hist.timeout_fraction < 0.01
    mu = birkhoff_histogram(fmap, 64, 4 * 10**6, orbits=4).reshape(64, 64)
    kac = hist.mean_return * rect_srb_mass(rect, mu)
    assert 0.9 <= kac <= 1.1


def test_kac_linear_map(cat, rect):
    hist = return_time_histogram(cat, rect, 10**4, 10**4)
    assert hist.mean_return * rect.area == pytest.approx(1.0, rel=0.1)


def test_smaller_rectangle_returns_later(fmap, rect):
    small = Rectangle.default(fmap, u_half=0.02, s_half=0.02)
    big = return_time_histogram(fmap, rect, 10**4, 10**4)
    little = return_time_histogram(fmap, small, 10**4, 10**4)
    assert little.mean_return > big.mean_return


# ---------------------------------------------------------------- tail fit


def test_fit_geometric_synthetic():
    counts = {n: int(round(math.exp(0.5 * n))) for n in range(1, 31)}
    assert fit_tail_rate(counts).h_fit == pytest.approx(0.5, abs=0.02)


def test_fit_constant_synthetic():
    assert abs(fit_tail_rate({n: 100 for n in range(1, 31)}).h_fit) < 1e-12


def test_fit_adds_unstable_rate():
    counts = {n: int(round(1e12 * math.exp(-0.4 * n))) for n in range(1, 31)}
    fit = fit_tail_rate(counts, unstable_rate=LOG_LAMBDA)
    assert fit.decay_rate == pytest.approx(-0.4, abs=0.01)
    assert fit.h_fit == pytest.approx(LOG_LAMBDA - 0.4, abs=0.01)


def test_fit_needs_bins():
    with pytest.raises(ValueError):
        fit_tail_rate({1: 5, 2: 3, 3: 1})


def test_default_tail_rate_below_topological_entropy(fmap, rect):
    hist = return_time_histogram(fmap, rect, 10**5, 200)
    fit = fit_tail_rate(hist, fmap.log_lambda_u)
    assert fit.r_squared >= 0.8
    assert fit.h_fit < LOG_LAMBDA


@pytest.mark.parametrize("obs,g", [({2: 1, 4: 7, 6: 2}, 2), ({3: 4, 5: 1}, 1), ({9: 1, 6: 0, 3: 2}, 3)])
def test_gcd(obs, g):
    assert check_arithmetic_condition(obs) == g


def test_default_gcd_is_one(fmap, rect):
    assert check_arithmetic_condition(return_time_histogram(fmap, rect, 10**4, 500)) == 1


# ---------------------------------------------------------------- stable pairs


def test_stable_pairs_in_rectangle(rect, pairs):
    assert rect.contains_xy(pairs.x[:, 0], pairs.x[:, 1]).all()
    assert rect.contains_xy(pairs.y[:, 0], pairs.y[:, 1]).all()
    assert (pairs.delta >= 0.9e-4).all() and (pairs.delta <= 1.01e-2).all()


def test_linear_pair_ratio_is_inverse_lambda_power(cat, rect):
    sp = stable_pairs(cat, rect, 50)
    tr = track_pairs(cat, rect, sp, 1)
    ok = tr.taus[:, 0] > 0
    ratio = tr.d_end[ok, 0] / sp.delta[ok]
    assert np.allclose(ratio, LAMBDA_U ** (-tr.taus[ok, 0].astype(float)), rtol=1e-8)


def test_linear_pairs_have_zero_distortion(cat, rect):
    rep = check_distortion(cat, rect, stable_pairs(cat, rect, 50), 3)
    assert np.abs(rep.log_ratios[~np.isnan(rep.log_ratios)]).max() < 1e-12


def test_identical_pair_has_zero_log_ratio(fmap, rect):
    x = np.array([[0.5, 0.5], [0.52, 0.49]])
    sp = StablePairs(x, x.copy(), np.zeros(2))
    tr = track_pairs(fmap, rect, sp, 3)
    assert np.all(tr.log_ratio[tr.taus > 0] == 0)


def test_contraction_default(fmap, rect, pairs):
    rep = check_contraction(fmap, rect, pairs)
    assert rep.worst_a < 1
    assert rep.skipped_timeouts == 0


def test_distortion_default(fmap, rect, pairs):
    rep = check_distortion(fmap, rect, pairs, 6)
    assert rep.fit_ok and 0 < rep.kappa < 1
    assert rep.suprema[0] > rep.suprema[-1]


def test_intermediate_stable_pairs_decrease(fmap, rect, pairs):
    rep = check_intermediate_bound(fmap, rect, pairs, "stable")
    assert rep.worst_K <= 1 + 1e-9


def test_intermediate_unstable_pairs_peak_at_return(fmap, rect):
    # long returns need offsets below double resolution and are skipped
    rep = check_intermediate_bound(fmap, rect, 400, "unstable")
    assert rep.pairs_used >= 20
    assert rep.argmax_at_tau_fraction >= 0.95
    assert rep.worst_K <= 1 + 1e-3


def test_rect_mass_uniform_is_area(rect):
    n = 64
    assert rect_srb_mass(rect, np.full((n, n), 1 / n**2)) == pytest.approx(rect.area, rel=0.01)


def test_pair_points_are_close(pairs):
    d = torus_distance((pairs.x[:, 0], pairs.x[:, 1]), (pairs.y[:, 0], pairs.y[:, 1]))
    assert np.allclose(d, pairs.delta)
