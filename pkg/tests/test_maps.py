import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from almost_anosov import _kernels as K
from almost_anosov.maps import (
    ORIGIN,
    AlmostAnosovMap,
    InvalidSpec,
    MapSpec,
    TorusPoint,
    check_cone_invariance,
    check_nondegeneracy,
    distance_to_singularity,
    hyperbolicity_certificate,
    smoothness_check,
    sweep_hyperbolicity,
    torus_distance,
    validate_spec,
)

from .conftest import LAMBDA_U


# ---------------------------------------------------------------- validation


def test_small_coefficient_spec_is_valid():
    # det = 1, trace = 3, b = 3 > 2d = 2, ad - bc = 4 - 3 = 1 > 0
    assert validate_spec(MapSpec(a=4, b=3, c=1, d=1, r0=0.02, r1=0.05)) == []


def test_default_spec_is_valid():
    assert validate_spec(MapSpec()) == []


def test_parabolic_matrix_rejected():
    errs = validate_spec(MapSpec(A=((1, 1), (0, 1))))
    assert "A not hyperbolic" in errs


def test_ad_minus_bc_rejected():
    errs = validate_spec(MapSpec(a=2, b=8, c=1, d=1))
    assert "a·d − b·c > 0 violated" in errs


def test_radius_ordering_rejected():
    assert "0 < r0 < r1 < 1/4 violated" in validate_spec(MapSpec(r1=0.3))
    assert "0 < r0 < r1 < 1/4 violated" in validate_spec(MapSpec(r0=0.06, r1=0.05))


def test_determinant_rejected():
    assert "det A = 1 violated" in validate_spec(MapSpec(A=((2, 1), (1, 2))))


def test_constructor_raises_with_all_errors():
    with pytest.raises(InvalidSpec) as exc:
        AlmostAnosovMap(MapSpec(A=((1, 1), (0, 1)), r1=0.3))
    assert len(exc.value.errors) == 2


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(-1, 10), b=st.floats(-1, 10), c=st.floats(-1, 10), d=st.floats(-1, 10),
    r0=st.floats(-0.1, 0.3), r1=st.floats(-0.1, 0.3),
)
def test_validator_is_conjunction_of_predicates(a, b, c, d, r0, r1):
    spec = MapSpec(a=a, b=b, c=c, d=d, r0=r0, r1=r1)
    preds = [0 < r0 < r1 < 0.25, min(a, b, c, d) > 0, b > 2 * d, a * d - b * c > 0]
    assert (validate_spec(spec) == []) == all(preds)
    assert len(validate_spec(spec)) == sum(not p for p in preds)


# ---------------------------------------------------------------- apply


def test_origin_fixed(fmap):
    assert fmap.apply(ORIGIN) == ORIGIN
    assert fmap.apply_inverse(ORIGIN) == ORIGIN


def test_half_half_maps_linearly(fmap):
    q = fmap.apply(TorusPoint(0.5, 0.5))
    assert torus_distance((q.x, q.y), (0.5, 0.0)) < 1e-12


def test_inverse_of_half_zero(fmap):
    q = fmap.apply_inverse(TorusPoint(0.5, 0.0))
    assert torus_distance((q.x, q.y), (0.5, 0.5)) < 1e-12


def test_inner_closed_form_standard_chart(small_coeff_map):
    q = small_coeff_map.apply(TorusPoint(0.01, 0.0))
    assert abs(q.x - 0.010004) < 1e-15
    assert abs(q.y) < 1e-15


def test_inner_closed_form_on_random_points(fmap, rng):
    s = fmap.spec
    r = rng.uniform(0, s.r0, 500)
    th = rng.uniform(0, 2 * math.pi, 500)
    xi, eta = r * np.cos(th), r * np.sin(th)
    # torus coordinates of the chart point (xi, eta)
    R = fmap.chart
    u, v = R[0, 0] * xi + R[0, 1] * eta, R[1, 0] * xi + R[1, 1] * eta
    fx, fy = fmap.apply_xy(u % 1.0, v % 1.0)
    nxi = xi * (1 + s.a * xi**2 + s.b * eta**2)
    neta = eta * (1 - s.c * xi**2 - s.d * eta**2)
    ex, ey = R[0, 0] * nxi + R[0, 1] * neta, R[1, 0] * nxi + R[1, 1] * neta
    assert torus_distance((fx, fy), (ex, ey)).max() < 1e-12


def test_linear_outside_r1(fmap, rng):
    xs, ys = rng.random(20000), rng.random(20000)
    keep = torus_distance((xs, ys)) >= fmap.spec.r1
    xs, ys = xs[keep], ys[keep]
    fx, fy = fmap.apply_xy(xs, ys)
    lx, ly = (2 * xs + ys) % 1.0, (xs + ys) % 1.0
    assert torus_distance((fx, fy), (lx, ly)).max() <= 1e-12


def test_inverse_round_trip(fmap, rng):
    xs, ys = rng.random(10**4), rng.random(10**4)
    ix, iy = fmap.inverse_xy(*fmap.apply_xy(xs, ys))
    assert torus_distance((ix, iy), (xs, ys)).max() <= 1e-10


def test_inverse_round_trip_near_origin(fmap, rng):
    r = np.exp(rng.uniform(math.log(1e-4), math.log(0.06), 2000))
    th = rng.uniform(0, 2 * math.pi, 2000)
    xs, ys = (r * np.cos(th)) % 1.0, (r * np.sin(th)) % 1.0
    ix, iy = fmap.inverse_xy(*fmap.apply_xy(xs, ys))
    assert torus_distance((ix, iy), (xs, ys)).max() <= 1e-10


def test_iterate_matches_repeated_apply(fmap):
    p = TorusPoint(0.123, 0.456)
    q = p
    for _ in range(25):
        q = fmap.apply(q)
    r = fmap.iterate(p, 25)
    assert torus_distance((q.x, q.y), (r.x, r.y)) < 1e-12


# ---------------------------------------------------------------- differential


def test_differential_at_origin_is_identity(fmap):
    assert np.abs(fmap.differential(ORIGIN) - np.eye(2)).max() <= 1e-12


def test_differential_linear_region(fmap):
    assert np.array_equal(fmap.differential(TorusPoint(0.3, 0.6)), np.array([[2.0, 1.0], [1.0, 1.0]]))


def test_local_differential_closed_form():
    J = np.array(K.local_jac(0.01, 0.02, 1.0, 1.0, 1.0, 1.0)).reshape(2, 2)
    assert np.allclose(J, [[1.0007, 0.0004], [-0.0004, 0.9987]], atol=1e-15)


def test_determinant_positive_and_unit_in_linear_region(fmap):
    xs, ys = np.meshgrid(np.arange(128) / 128, np.arange(128) / 128)
    xs, ys = xs.ravel(), ys.ravel()
    J = fmap.jacobian_xy(xs, ys)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    assert (det > 0).all()
    lin = torus_distance((xs, ys)) >= fmap.spec.r1
    assert np.abs(det[lin] - 1).max() < 1e-12


def test_smoothness_against_finite_differences(fmap):
    rep = smoothness_check(fmap, 100)
    assert rep.max_deviation["linear"] <= 1e-9
    assert rep.max_deviation["inner"] <= 1e-7
    assert rep.max_deviation["annulus"] <= 1e-6


# ---------------------------------------------------------------- distance


@pytest.mark.parametrize("p,d", [((0, 0), 0.0), ((0.9, 0), 0.1), ((0.5, 0.5), math.sqrt(2) / 2)])
def test_distance_to_singularity(p, d):
    assert abs(distance_to_singularity(TorusPoint(*p)) - d) < 1e-12


# ---------------------------------------------------------------- certificate


def test_certificate_identity_not_hyperbolic():
    assert not hyperbolicity_certificate(np.eye(2)).hyperbolic


def test_certificate_cat_matrix():
    rep = hyperbolicity_certificate([[2, 1], [1, 1]])
    assert rep.hyperbolic
    assert abs(rep.eigenvalues[0] - LAMBDA_U) < 1e-12
    assert abs(rep.eigenvalues[0] * rep.eigenvalues[1] - 1) < 1e-12


def test_certificate_near_identity():
    rep = hyperbolicity_certificate([[1.0007, 0.0004], [-0.0004, 0.9987]])
    assert rep.hyperbolic
    # characteristic polynomial oracle
    tr, det = 1.0007 + 0.9987, 1.0007 * 0.9987 + 0.0004**2
    l1 = (tr + math.sqrt(tr * tr - 4 * det)) / 2
    assert abs(rep.eigenvalues[0] - l1) < 1e-12
    assert abs(rep.eigenvalues[0] - 1.0006) < 1e-4 and abs(rep.eigenvalues[1] - 0.9988) < 1e-4


def test_certificate_rotation_not_hyperbolic():
    c, s = math.cos(0.3), math.sin(0.3)
    assert not hyperbolicity_certificate([[c, -s], [s, c]]).hyperbolic


# ---------------------------------------------------------------- sweeps


def test_sweep_default_passes(fmap):
    rep = sweep_hyperbolicity(fmap, 512, 1e-3)
    assert rep.passed and rep.failures == 0
    assert rep.checked > 0.99 * 512**2


def test_sweep_without_exclusion_flags_origin(fmap):
    rep = sweep_hyperbolicity(fmap, 64, 0.0)
    assert not rep.passed
    assert rep.first_failure == ORIGIN
    assert rep.failure_report.eigenvalues is None or not rep.failure_report.hyperbolic


def test_sweep_linear_region_matches_certificate_of_A(fmap):
    rep = sweep_hyperbolicity(fmap, 128, 1e-3, min_radius=fmap.spec.r1)
    assert rep.passed
    assert abs(rep.min_det - 1.0) < 1e-12


def test_nondegeneracy_constants_positive(fmap):
    rep = check_nondegeneracy(fmap, 2000)
    assert not rep.degenerate
    assert rep.kappa_u > 0 and rep.kappa_s > 0


def test_nondegeneracy_linear_map_lower_bound(cat):
    rep = check_nondegeneracy(cat, 1000)
    # |Df v| = lambda on E^u, and d(x, 0) <= sqrt(2)/2 on the torus
    assert rep.kappa_u >= (LAMBDA_U - 1) / 0.5 - 1e-9
    assert abs(rep.K_u - LAMBDA_U) < 1e-9


def test_cone_invariance_45_degrees(fmap):
    assert check_cone_invariance(fmap, math.radians(45), 256).passed


def test_cone_invariance_fails_for_full_cones(fmap):
    assert not check_cone_invariance(fmap, math.pi / 2, 32).passed


def test_eigendirection_strictly_inside_cone(cat):
    rep = check_cone_invariance(cat, math.radians(10), 32)
    assert rep.passed and rep.worst_margin > 0


def test_rng_streams_reproducible(fmap):
    assert np.array_equal(fmap.rng(5).random(10), fmap.rng(5).random(10))
    assert not np.array_equal(fmap.rng(5).random(10), fmap.rng(6).random(10))
