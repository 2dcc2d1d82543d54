"""Glued almost Anosov diffeomorphisms of the 2-torus.

The map is linear (``p -> A p mod 1``) away from the origin and equal to
the indifferent normal form

    (x, y) -> (x (1 + a x^2 + b y^2), y (1 - c x^2 - d y^2))

on a small disc around it; a bump in log-radius interpolates between the
two on the annulus ``r0 < |p| < r1``.  The local coordinates are taken in
the eigenframe of ``A`` (unstable axis first) so the expanding direction of
the normal form lines up with the unstable direction of ``A``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K

BUMPS = {"smooth": K.BUMP_SMOOTH, "poly9": K.BUMP_POLY9}
CHARTS = ("eigen", "standard")


class InvalidSpec(ValueError):
    """Raised when a MapSpec violates one of its defining inequalities."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InverseFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TorusPoint:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(K.mod1(float(self.x))))
        object.__setattr__(self, "y", float(K.mod1(float(self.y))))

    def lift(self) -> tuple[float, float]:
        """Representative in [-1/2, 1/2)^2."""
        return float(K.wrap(self.x)), float(K.wrap(self.y))

    def __iter__(self):
        yield self.x
        yield self.y


ORIGIN = TorusPoint(0.0, 0.0)


@dataclass(frozen=True)
class MapSpec:
    A: tuple = ((2, 1), (1, 1))
    a: float = 4000.0
    b: float = 3200.0
    c: float = 400.0
    d: float = 400.0
    r0: float = 0.005
    r1: float = 0.05
    bump: str = "smooth"
    seed: int = 0
    chart: str = "eigen"

    def __post_init__(self):
        object.__setattr__(self, "A", tuple(tuple(int(v) for v in row) for row in self.A))

    @classmethod
    def from_dict(cls, data: dict) -> "MapSpec":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    @classmethod
    def from_json(cls, path) -> "MapSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["A"] = [list(row) for row in self.A]
        return out


def validate_spec(spec: MapSpec) -> list[str]:
    """Every violated MapSpec inequality, as a list of messages (empty if valid)."""
    errors = []
    A = np.asarray(spec.A)
    if A.shape != (2, 2):
        return ["A must be a 2x2 integer matrix"]
    det = int(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    if det != 1:
        errors.append("det A = 1 violated")
    if abs(int(A[0, 0] + A[1, 1])) <= 2:
        errors.append("A not hyperbolic")
    if not 0 < spec.r0 < spec.r1 < 0.25:
        errors.append("0 < r0 < r1 < 1/4 violated")
    if not min(spec.a, spec.b, spec.c, spec.d) > 0:
        errors.append("a, b, c, d > 0 violated")
    if not spec.b > 2 * spec.d:
        errors.append("b > 2d violated")
    if not spec.a * spec.d - spec.b * spec.c > 0:
        errors.append("a·d − b·c > 0 violated")
    if spec.bump not in BUMPS:
        errors.append(f"unknown bump profile {spec.bump!r}")
    if spec.chart not in CHARTS:
        errors.append(f"unknown chart {spec.chart!r}")
    if not (isinstance(spec.seed, int) and spec.seed >= 0):
        errors.append("seed must be a nonnegative integer")
    return errors


def eigenframe(A) -> tuple[np.ndarray, np.ndarray, float]:
    """Unit unstable/stable eigenvectors of A (as columns, det > 0) and |lambda_u|."""
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A)
    order = np.argsort(-np.abs(w))
    w = w[order].real
    V = V[:, order].real
    V /= np.linalg.norm(V, axis=0)
    if V[0, 0] < 0:
        V[:, 0] *= -1
    if np.linalg.det(V) < 0:
        V[:, 1] *= -1
    return V[:, 0].copy(), V[:, 1].copy(), float(abs(w[0]))


class AlmostAnosovMap:
    """Evaluable glued map built from a validated :class:`MapSpec`.

    Scalar methods take and return :class:`TorusPoint`; the ``*_xy`` methods
    are the vectorised counterparts on coordinate arrays.
    """

    def __init__(self, spec: MapSpec | None = None, *, linear: bool = False):
        spec = spec or MapSpec()
        errors = validate_spec(spec)
        if errors:
            raise InvalidSpec(errors)
        self.linear = linear
        self.spec = spec
        self.A = np.asarray(spec.A, dtype=float)
        self.A_inv = np.linalg.inv(self.A)
        self.e_u, self.e_s, self.lambda_u = eigenframe(self.A)
        R = np.column_stack([self.e_u, self.e_s]) if spec.chart == "eigen" else np.eye(2)
        self.chart = R
        self.params = np.concatenate(
            [
                self.A.ravel(),
                [spec.a, spec.b, spec.c, spec.d],
                # a negative glue radius switches the bump off everywhere
                [-1.0, -1.0] if linear else [spec.r0, spec.r1],
                [BUMPS[spec.bump]],
                R.ravel(),
                np.linalg.inv(R).ravel(),
                self.A_inv.ravel(),
            ]
        ).astype(np.float64)
        assert self.params.size == K.NPARAM

    def __repr__(self):
        return f"AlmostAnosovMap({self.spec!r}{', linear=True' if self.linear else ''})"

    @classmethod
    def linear_map(cls, spec: MapSpec | None = None) -> "AlmostAnosovMap":
        """The toral automorphism p -> A p mod 1 behind the same interface (reference case)."""
        return cls(spec, linear=True)

    @property
    def log_lambda_u(self) -> float:
        return math.log(self.lambda_u)

    # scalar interface
    def apply(self, p: TorusPoint) -> TorusPoint:
        return TorusPoint(*K.fmap(p.x, p.y, self.params))

    def apply_inverse(self, p: TorusPoint) -> TorusPoint:
        qx, qy, ok = K.finv(p.x, p.y, self.params)
        if not ok:
            raise InverseFailure(f"Newton inverse did not converge at {p}")
        return TorusPoint(qx, qy)

    def differential(self, p: TorusPoint) -> np.ndarray:
        return np.array(K.fjac(p.x, p.y, self.params)).reshape(2, 2)

    def iterate(self, p: TorusPoint, n: int) -> TorusPoint:
        x, y = K.iterate_many(np.array([p.x]), np.array([p.y]), self.params, n)
        return TorusPoint(x[0], y[0])

    # vectorised interface
    def apply_xy(self, xs, ys):
        return K.fmap_many(_arr(xs), _arr(ys), self.params)

    def inverse_xy(self, xs, ys, strict: bool = True):
        qx, qy, ok = K.finv_many(_arr(xs), _arr(ys), self.params)
        if strict and not ok.all():
            raise InverseFailure(f"{int((~ok).sum())} inverse solves did not converge")
        return qx, qy

    def jacobian_xy(self, xs, ys) -> np.ndarray:
        return K.fjac_many(_arr(xs), _arr(ys), self.params)

    def iterate_xy(self, xs, ys, n: int):
        return K.iterate_many(_arr(xs), _arr(ys), self.params, int(n))

    def local_form(self, xi, eta):
        """Normal form in chart coordinates (no gluing)."""
        s = self.spec
        return K.local_form(xi, eta, s.a, s.b, s.c, s.d)

    def local_differential(self, xi, eta) -> np.ndarray:
        s = self.spec
        return np.array(K.local_jac(xi, eta, s.a, s.b, s.c, s.d)).reshape(2, 2)

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Generator for a named stream split off the map's root seed."""
        return np.random.default_rng([self.spec.seed, stream])


def _arr(z):
    return np.ascontiguousarray(np.atleast_1d(np.asarray(z, dtype=np.float64)))


def torus_distance(p, q=(0.0, 0.0)):
    """Flat distance on R^2/Z^2; works on scalars or arrays of coordinates."""
    dx = np.asarray(p[0], dtype=float) - q[0]
    dy = np.asarray(p[1], dtype=float) - q[1]
    dx = dx - np.round(dx)
    dy = dy - np.round(dy)
    return np.hypot(dx, dy)


def distance_to_singularity(p) -> float:
    return float(torus_distance((p.x, p.y)) if isinstance(p, TorusPoint) else torus_distance(p))


# --------------------------------------------------------------------------
# hyperbolicity


@dataclass
class HyperbolicityReport:
    hyperbolic: bool
    eigenvalues: tuple | None
    expanding_modulus: float
    contracting_modulus: float


# Discriminants and eigenvalue gaps to the unit circle below this count as
# neutral, so round-off in a chart-rotated identity (whose discriminant comes
# out as a few ulps instead of 0) is not mistaken for hyperbolicity.
NEUTRAL_TOL = 1e-12


def _eig2(tr, det):
    disc = tr * tr - 4.0 * det
    sq = np.sqrt(np.maximum(disc, 0.0))
    l1 = 0.5 * (tr + sq)
    l2 = 0.5 * (tr - sq)
    big = np.maximum(np.abs(l1), np.abs(l2))
    small = np.minimum(np.abs(l1), np.abs(l2))
    return disc, l1, l2, big, small


def hyperbolicity_certificate(m) -> HyperbolicityReport:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc, l1, l2, big, small = _eig2(tr, det)
    if disc <= NEUTRAL_TOL:
        mod = math.sqrt(abs(det))
        return HyperbolicityReport(False, None, mod, mod)
    ok = bool(big > 1.0 + NEUTRAL_TOL and small < 1.0 - NEUTRAL_TOL)
    return HyperbolicityReport(ok, (float(l1), float(l2)), float(big), float(small))


def hyperbolic_mask(J: np.ndarray) -> np.ndarray:
    """Vectorised certificate over a stack of 2x2 matrices (shape (n, 2, 2))."""
    tr = J[:, 0, 0] + J[:, 1, 1]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    disc, _, _, big, small = _eig2(tr, det)
    return (disc > NEUTRAL_TOL) & (big > 1.0 + NEUTRAL_TOL) & (small < 1.0 - NEUTRAL_TOL)


@dataclass
class SweepReport:
    passed: bool
    checked: int
    failures: int
    min_det: float
    first_failure: TorusPoint | None = None
    failure_report: HyperbolicityReport | None = None


def grid_points(n: int):
    g = np.arange(n) / n
    X, Y = np.meshgrid(g, g, indexing="ij")
    return X.ravel(), Y.ravel()


def sweep_hyperbolicity(f: AlmostAnosovMap, grid_n: int = 512, exclusion_radius: float = 1e-3,
                        min_radius: float = 0.0) -> SweepReport:
    """Certify Df on the grid_n x grid_n lattice, skipping d(p, 0) <= exclusion_radius.

    ``min_radius`` optionally restricts the sweep to d(p, 0) >= min_radius.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    xs, ys = grid_points(grid_n)
    r = torus_distance((xs, ys))
    keep = (r > exclusion_radius) | (exclusion_radius <= 0)
    keep &= r >= min_radius
    xs, ys = xs[keep], ys[keep]
    J = f.jacobian_xy(xs, ys)
    ok = hyperbolic_mask(J)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    rep = SweepReport(bool(ok.all()), int(ok.size), int((~ok).sum()), float(det.min()) if det.size else math.nan)
    if not rep.passed:
        i = int(np.flatnonzero(~ok)[0])
        rep.first_failure = TorusPoint(xs[i], ys[i])
        rep.failure_report = hyperbolicity_certificate(J[i])
    return rep


# --------------------------------------------------------------------------
# nondegeneracy and cones


@dataclass
class NondegeneracyReport:
    kappa_u: float
    kappa_s: float
    sample_count: int
    worst_point: TorusPoint
    degenerate: bool = False
    K_u: float = math.nan
    K_s: float = math.nan


def _radial_samples(f: AlmostAnosovMap, n: int, r_min: float, stream: int):
    """Half uniform on the torus, half log-uniform in radius near the origin."""
    rng = f.rng(stream)
    n_uni = n - n // 2
    xs = rng.random(4 * n_uni + 16)
    ys = rng.random(4 * n_uni + 16)
    keep = torus_distance((xs, ys)) > r_min
    xs, ys = xs[keep][:n_uni], ys[keep][:n_uni]
    rr = np.exp(rng.uniform(math.log(r_min * (1 + 1e-9)), math.log(0.25), n // 2))
    th = rng.uniform(0, 2 * math.pi, n // 2)
    return np.concatenate([xs, (rr * np.cos(th)) % 1.0]), np.concatenate([ys, (rr * np.sin(th)) % 1.0])


def check_nondegeneracy(f: AlmostAnosovMap, sample_n: int = 4000, r: float | None = None,
                        m: int = 40) -> NondegeneracyReport:
    """Best empirical constants in |Df v| >= (1 + k_u d^2)|v|, |Df v| <= (1 - k_s d^2)|v|.

    ``v`` ranges over the invariant directions E^u(x), E^s(x); samples avoid B_r(0).
    """
    from .cone_dynamics import stable_directions, unstable_directions

    r = f.spec.r0 / 2 if r is None else r
    if not 0 < r < f.spec.r0:
        raise ValueError("need 0 < r < r0")
    xs, ys = _radial_samples(f, sample_n, r, stream=11)
    d2 = torus_distance((xs, ys)) ** 2
    J = f.jacobian_xy(xs, ys)
    eu = unstable_directions(f, xs, ys, m)
    es = stable_directions(f, xs, ys, m)
    gu = np.linalg.norm(np.einsum("nij,nj->ni", J, eu), axis=1)
    gs = np.linalg.norm(np.einsum("nij,nj->ni", J, es), axis=1)
    ku = (gu - 1.0) / d2
    ks = (1.0 - gs) / d2
    degenerate = bool((gu <= 1.0).any() or (gs >= 1.0).any())
    iu, is_ = int(np.argmin(ku)), int(np.argmin(ks))
    worst = iu if ku[iu] <= ks[is_] else is_
    return NondegeneracyReport(
        kappa_u=0.0 if degenerate else float(ku[iu]),
        kappa_s=0.0 if degenerate else float(ks[is_]),
        sample_count=int(xs.size),
        worst_point=TorusPoint(xs[worst], ys[worst]),
        degenerate=degenerate,
        K_u=float(gu.min()),
        K_s=float(gs.max()),
    )


@dataclass
class ConeReport:
    passed: bool
    half_angle: float
    checked: int
    worst_margin: float
    worst_point: TorusPoint | None


def _angle_to_axis(v: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Unsigned angle between lines spanned by rows of v and by axis, in [0, pi/2]."""
    c = np.abs(v @ axis) / np.linalg.norm(v, axis=1)
    return np.arccos(np.clip(c, 0.0, 1.0))


def _rot(v, ang):
    c, s = math.cos(ang), math.sin(ang)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def check_cone_invariance(f: AlmostAnosovMap, half_angle: float = math.radians(45.0),
                          sample_n: int = 256, points=None) -> ConeReport:
    """Df_x C^u_x inside C^u_{fx} and Df_x^{-1} C^s_{fx} inside C^s_x on a grid.

    Cones are constant sectors about the eigendirections of A.  The margin of
    a sample is how far (radians) the image boundary rays stay inside the
    target sector; negative means a violation.
    """
    if points is None:
        xs, ys = grid_points(sample_n)
    else:
        xs, ys = (np.asarray(z, dtype=float) for z in points)
    J = f.jacobian_xy(xs, ys)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    margin = np.full(xs.size, np.inf)
    if half_angle >= math.pi / 2:
        # the sector is the whole projective line; the opposite cone cannot be disjoint
        margin[:] = -1.0
    else:
        for sign in (-1.0, 1.0):
            bu = _rot(f.e_u, sign * half_angle)
            bs = _rot(f.e_s, sign * half_angle)
            img_u = J @ bu
            img_s = Jinv @ bs
            margin = np.minimum(margin, half_angle - _angle_to_axis(img_u, f.e_u))
            margin = np.minimum(margin, half_angle - _angle_to_axis(img_s, f.e_s))
        # orientation reversal would swap the image sector for its complement
        margin = np.where(det > 0, margin, -1.0)
    i = int(np.argmin(margin))
    passed = bool(margin[i] >= 0)
    return ConeReport(passed, half_angle, int(xs.size), float(margin[i]),
                      None if passed else TorusPoint(xs[i], ys[i]))


def tune_cone_half_angle(f: AlmostAnosovMap, angles_deg=range(5, 86, 5), sample_n: int = 256):
    """Half-angles (degrees) for which the constant cone field is invariant on the grid."""
    return [a for a in angles_deg if check_cone_invariance(f, math.radians(a), sample_n).passed]


# --------------------------------------------------------------------------
# smoothness


@dataclass
class SmoothnessReport:
    max_deviation: dict = field(default_factory=dict)
    step: float = 0.0

    @property
    def overall(self) -> float:
        return max(self.max_deviation.values())


def fd_jacobian(f: AlmostAnosovMap, u: float, v: float, h: float) -> np.ndarray:
    P = f.params
    out = np.empty((2, 2))
    for k, (du, dv) in enumerate(((h, 0.0), (0.0, h))):
        pu, pv = K.lift_map(u + du, v + dv, P)
        mu, mv = K.lift_map(u - du, v - dv, P)
        out[0, k] = (pu - mu) / (2 * h)
        out[1, k] = (pv - mv) / (2 * h)
    return out


def smoothness_check(f: AlmostAnosovMap, sample_n: int = 200) -> SmoothnessReport:
    """Max entrywise |analytic Df - central differences| per region.

    The step is eps^(1/3) scaled by the distance to the origin, since the
    map's derivatives there scale with inverse powers of the radius.
    """
    rng = f.rng(stream=13)
    s = f.spec
    eps3 = np.finfo(float).eps ** (1 / 3)
    regions = {
        "linear": (s.r1 * 1.01, 0.45),
        "inner": (s.r0 * 0.05, s.r0 * 0.99),
        "annulus": (s.r0 * 1.01, s.r1 * 0.99),
    }
    rep = SmoothnessReport(step=eps3)
    for name, (lo, hi) in regions.items():
        rr = rng.uniform(lo, hi, sample_n)
        th = rng.uniform(0, 2 * math.pi, sample_n)
        worst = 0.0
        for r, t in zip(rr, th):
            u, v = r * math.cos(t), r * math.sin(t)
            h = eps3 * min(r, 1.0) if name != "linear" else eps3
            an = np.array(K.lift_jac(u, v, f.params)).reshape(2, 2)
            worst = max(worst, float(np.abs(an - fd_jacobian(f, u, v, h)).max()))
        rep.max_deviation[name] = worst
    return rep
