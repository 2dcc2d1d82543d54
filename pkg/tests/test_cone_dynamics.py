import math

import numpy as np
import pytest

from almost_anosov.cone_dynamics import (
    bracket,
    geometric_potential,
    invariance_residual,
    line_angle,
    local_manifold,
    lyapunov_exponent,
    splitting_angle,
    stable_direction,
    stable_directions,
    unstable_direction,
    unstable_directions,
)
from almost_anosov.maps import ORIGIN, TorusPoint, torus_distance

from .conftest import LOG_LAMBDA


def _far_points(f, n, rng, r=0.3):
    xs, ys = rng.random(4 * n), rng.random(4 * n)
    keep = torus_distance((xs, ys)) > r
    return xs[keep][:n], ys[keep][:n]


def test_unstable_direction_linear_map_is_eigendirection(cat, rng):
    xs, ys = rng.random(100), rng.random(100)
    assert line_angle(unstable_directions(cat, xs, ys), cat.e_u).max() < 1e-12
    assert line_angle(stable_directions(cat, xs, ys), cat.e_s).max() < 1e-12


def test_direction_is_unit(fmap):
    u = unstable_direction(fmap, TorusPoint(0.01, 0.003))
    assert abs(np.linalg.norm(u.vector) - 1) < 1e-12


def test_origin_direction_is_eigendirection(fmap):
    assert line_angle(unstable_direction(fmap, ORIGIN).vector, fmap.e_u)[0] < 1e-12
    assert line_angle(stable_direction(fmap, ORIGIN).vector, fmap.e_s)[0] < 1e-12


def test_cocycle_convergence_in_depth(fmap, rng):
    xs, ys = rng.random(1000), rng.random(1000)
    d40 = unstable_directions(fmap, xs, ys, 40)
    d60 = unstable_directions(fmap, xs, ys, 60)
    assert np.median(line_angle(d40, d60)) <= 1e-8
    s40 = stable_directions(fmap, xs, ys, 40)
    s60 = stable_directions(fmap, xs, ys, 60)
    assert np.median(line_angle(s40, s60)) <= 1e-8


def test_adaptive_mode_improves_near_origin(fmap):
    # the backward orbit of this point lingers at the indifferent fixed point,
    # so the fixed-depth cocycle converges only polynomially
    p = TorusPoint(0.002, 0.001)
    ref = unstable_direction(fmap, p, m=16000).vector
    fixed = line_angle(unstable_direction(fmap, p).vector, ref)[0]
    adaptive = line_angle(unstable_direction(fmap, p, adaptive=True, m_max=4000).vector, ref)[0]
    assert adaptive < fixed / 10


def test_splitting_transverse(fmap):
    xs, ys = np.meshgrid(np.arange(256) / 256, np.arange(256) / 256)
    ang = splitting_angle(fmap, xs.ravel(), ys.ravel())
    assert ang.min() >= math.radians(10)


def test_invariance_residual(fmap, rng):
    xs, ys = rng.random(1000), rng.random(1000)
    assert invariance_residual(fmap, xs, ys, "unstable").max() <= 1e-6
    assert invariance_residual(fmap, xs, ys, "stable").max() <= 1e-6


def test_potential_zero_at_t0_and_origin(fmap):
    assert geometric_potential(fmap, TorusPoint(0.2, 0.7), 0.0).value == 0.0
    for t in (-1.0, 0.5, 2.0):
        assert abs(geometric_potential(fmap, ORIGIN, t).value) < 1e-12


def test_potential_linear_region(fmap):
    v = geometric_potential(fmap, TorusPoint(0.4, 0.3), 1.0).value
    assert abs(v + LOG_LAMBDA) < 1e-10


def test_potential_linear_in_t_and_nonpositive(fmap, rng):
    for _ in range(20):
        p = TorusPoint(*rng.random(2))
        one = geometric_potential(fmap, p, 1.0).value
        assert one <= 0
        assert geometric_potential(fmap, p, 1.7).value == pytest.approx(1.7 * one, rel=1e-14)


def test_lyapunov_linear_map(cat):
    assert abs(lyapunov_exponent(cat, TorusPoint(0.1234, 0.5678), 10**4) - LOG_LAMBDA) < 1e-10


def test_lyapunov_origin_zero(fmap):
    assert lyapunov_exponent(fmap, ORIGIN, 10**3) == 0.0


def test_lyapunov_default(fmap):
    lam = lyapunov_exponent(fmap, TorusPoint(0.3141, 0.2718), 10**6)
    assert abs(lam - LOG_LAMBDA) / LOG_LAMBDA <= 0.1


def test_lyapunov_rejects_short_orbit(fmap):
    with pytest.raises(ValueError):
        lyapunov_exponent(fmap, TorusPoint(0.1, 0.2), 10)


def test_local_manifold_linear_region_is_straight(cat):
    p = TorusPoint(0.4, 0.3)
    for side, e in (("unstable", cat.e_u), ("stable", cat.e_s)):
        pts = local_manifold(cat, p, side, 0.02, 51)
        d = pts - np.array(p.lift())
        # all points on the line through p along e
        assert np.abs(d[:, 0] * e[1] - d[:, 1] * e[0]).max() < 1e-12


def test_local_manifold_tangency(fmap):
    p = TorusPoint(0.03, 0.02)
    pts = local_manifold(fmap, p, "unstable", 0.01, 101)
    sec = pts[51] - pts[49]
    assert math.degrees(line_angle(sec, unstable_direction(fmap, p).vector)[0]) <= 1.0


def test_stable_manifold_tracking(fmap):
    p = TorusPoint(0.03, 0.02)
    eps = 0.01
    pts = local_manifold(fmap, p, "stable", eps, 21)
    xs, ys = pts[:, 0] % 1.0, pts[:, 1] % 1.0
    px, py = np.array([p.x]), np.array([p.y])
    for _ in range(20):
        xs, ys = fmap.apply_xy(xs, ys)
        px, py = fmap.apply_xy(px, py)
        assert torus_distance((xs, ys), (px[0], py[0])).max() <= eps


def test_local_manifold_arc_limit(fmap):
    with pytest.raises(ValueError):
        local_manifold(fmap, TorusPoint(0.5, 0.5), "unstable", 0.1)


def test_bracket_identity(fmap):
    x = TorusPoint(0.3, 0.6)
    assert bracket(fmap, x, x) == x


def test_bracket_linear_is_eigenline_intersection(cat):
    x, y = TorusPoint(0.40, 0.30), TorusPoint(0.41, 0.305)
    z = bracket(cat, x, y)
    # solve x + s e_u = y + t e_s
    M = np.column_stack([cat.e_u, -cat.e_s])
    s, _ = np.linalg.solve(M, np.subtract(y.lift(), x.lift()))
    want = np.add(x.lift(), s * cat.e_u)
    assert torus_distance((z.x, z.y), tuple(want)) < 1e-10


def test_bracket_idempotent_and_local(fmap, rng):
    for _ in range(5):
        x = TorusPoint(*rng.random(2))
        y = TorusPoint(x.x + rng.uniform(-0.01, 0.01), x.y + rng.uniform(-0.01, 0.01))
        z = bracket(fmap, x, y)
        zz = bracket(fmap, x, z)
        assert torus_distance((z.x, z.y), (zz.x, zz.y)) < 1e-8
        dxy = torus_distance((x.x, x.y), (y.x, y.y))
        assert torus_distance((z.x, z.y), (x.x, x.y)) + torus_distance((z.x, z.y), (y.x, y.y)) <= 4 * dxy
