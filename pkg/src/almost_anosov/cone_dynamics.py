"""Invariant splitting, geometric potential, Lyapunov exponents, local manifolds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .maps import AlmostAnosovMap, TorusPoint, _arr, torus_distance


@dataclass(frozen=True)
class UnitTangent:
    base: TorusPoint
    direction: tuple

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        v = v / np.linalg.norm(v)
        object.__setattr__(self, "direction", (float(v[0]), float(v[1])))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.direction)


@dataclass(frozen=True)
class PotentialValue:
    t: float
    value: float


def line_angle(u, v) -> np.ndarray:
    """Angle in [0, pi/2] between the lines spanned by u and v (rowwise)."""
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    c = np.abs(np.sum(u * v, axis=1)) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
    return np.arccos(np.clip(c, 0.0, 1.0))


def unstable_directions(f: AlmostAnosovMap, xs, ys, m: int = 40) -> np.ndarray:
    out, _ = K.unstable_many(_arr(xs), _arr(ys), f.params, int(m), f.e_u[0], f.e_u[1])
    return out


def stable_directions(f: AlmostAnosovMap, xs, ys, m: int = 40) -> np.ndarray:
    return K.stable_many(_arr(xs), _arr(ys), f.params, int(m), f.e_s[0], f.e_s[1])


def unstable_direction(f: AlmostAnosovMap, p: TorusPoint, m: int = 40, adaptive: bool = False,
                       tol: float = 1e-9, m_max: int = 2000) -> UnitTangent:
    """E^u(p) as the normalised push-forward of A's unstable direction along f^{-m}(p).

    With ``adaptive`` the depth doubles until successive directions agree to ``tol``.
    """
    v = unstable_directions(f, [p.x], [p.y], m)[0]
    if adaptive:
        while m < m_max:
            m *= 2
            w = unstable_directions(f, [p.x], [p.y], m)[0]
            done = line_angle(v, w)[0] < tol
            v = w
            if done:
                break
    return UnitTangent(p, v)


def stable_direction(f: AlmostAnosovMap, p: TorusPoint, m: int = 40, adaptive: bool = False,
                     tol: float = 1e-9, m_max: int = 2000) -> UnitTangent:
    v = stable_directions(f, [p.x], [p.y], m)[0]
    if adaptive:
        while m < m_max:
            m *= 2
            w = stable_directions(f, [p.x], [p.y], m)[0]
            done = line_angle(v, w)[0] < tol
            v = w
            if done:
                break
    return UnitTangent(p, v)


def log_unstable_jacobian(f: AlmostAnosovMap, xs, ys, m: int = 40) -> np.ndarray:
    """log |Df_x|_{E^u(x)}| on arrays of points."""
    return K.log_unstable_growth_many(_arr(xs), _arr(ys), f.params, int(m), f.e_u[0], f.e_u[1])


def geometric_potential(f: AlmostAnosovMap, p: TorusPoint, t: float, m: int = 40) -> PotentialValue:
    """phi_t(p) = -t log |Df_p|_{E^u(p)}|."""
    return PotentialValue(t, -t * float(log_unstable_jacobian(f, [p.x], [p.y], m)[0]))


def lyapunov_exponent(f: AlmostAnosovMap, p0: TorusPoint, n: int = 10**6, burn_in: int = 1000) -> float:
    """Orbit average of log |Df u_k| with u_k the carried unstable vector."""
    if n < 1000:
        raise ValueError("n must be >= 1000")
    if p0.x == 0.0 and p0.y == 0.0:
        return 0.0
    return float(K.lyapunov_many(np.array([p0.x]), np.array([p0.y]), f.params, int(n), int(burn_in),
                                 f.e_u[0], f.e_u[1])[0])


# --------------------------------------------------------------------------
# local manifolds


def _polyline_grow(f: AlmostAnosovMap, p: TorusPoint, side: str, arc: float, n_pts: int,
                   m: int, iters: int) -> np.ndarray:
    """Graph-transform growth of W^side_arc(p) in the lift around p.

    A short segment along E^side at f^{-m}(p) (unstable) or f^{m}(p)
    (stable) is mapped m steps towards p, repeated ``iters`` times with
    increasing depth.  The returned vertices are exact images of seed
    points, placed at equal arclength by inverting the arclength of a dense
    first pass, so no vertex carries interpolation error.
    """
    P = f.params
    forward = side == "unstable"
    vec_fn = unstable_directions if forward else stable_directions
    best = None
    for it in range(iters):
        depth = max(1, m // iters * (it + 1))
        # base point depth steps away
        bx, by = p.x, p.y
        for _ in range(depth):
            if forward:
                bx, by, _ = K.finv(bx, by, P)
            else:
                bx, by = K.fmap(bx, by, P)
        e = vec_fn(f, [bx], [by], m)[0]
        # seed segment long enough to cover twice the arc after depth steps
        seed_len = 2.0 * arc / _growth(f, bx, by, e, depth, forward)
        base = np.array([K.wrap(bx), K.wrap(by)])
        s = np.linspace(-seed_len, seed_len, 8 * n_pts + 1)
        pts = _push(P, base + s[:, None] * e, depth, forward)
        s_targ = _arclength_seeds(pts, s, arc, n_pts)
        best = _align(_push(P, base + s_targ[:, None] * e, depth, forward), p)
    return best


def _push(P, pts: np.ndarray, depth: int, forward: bool) -> np.ndarray:
    for _ in range(depth):
        new = np.empty_like(pts)
        for k in range(pts.shape[0]):
            if forward:
                qx, qy = K.fmap(pts[k, 0] % 1.0, pts[k, 1] % 1.0, P)
            else:
                qx, qy, _ = K.finv(pts[k, 0] % 1.0, pts[k, 1] % 1.0, P)
            new[k] = qx, qy
        pts = _unwrap_polyline(new)
    return pts


def _growth(f: AlmostAnosovMap, x, y, e, depth, forward):
    """|Df^{depth} e| (forward) or |Df^{-depth} e| (backward) from (x, y)."""
    P = f.params
    v = np.asarray(e, dtype=float)
    g = 1.0
    for _ in range(depth):
        J = np.array(K.fjac(x, y, P)).reshape(2, 2)
        if forward:
            w = J @ v
            x, y = K.fmap(x, y, P)
        else:
            x, y, _ = K.finv(x, y, P)
            w = np.linalg.solve(np.array(K.fjac(x, y, P)).reshape(2, 2), v)
        n = math.hypot(w[0], w[1])
        g *= n
        v = w / n
    return g


def _unwrap_polyline(pts: np.ndarray) -> np.ndarray:
    out = pts.copy()
    d = np.diff(out, axis=0)
    d -= np.round(d)
    out[1:] = out[0] + np.cumsum(d, axis=0)
    return out


def _arclength_seeds(pts: np.ndarray, s: np.ndarray, arc: float, n_pts: int) -> np.ndarray:
    """Seed parameters whose images sit at equal arclength within ``arc`` of p.

    The middle vertex of ``pts`` is the image of the seed base point, i.e. p.
    """
    k0 = pts.shape[0] // 2
    seg = np.hypot(*np.diff(pts, axis=0).T)
    acc = np.concatenate([[0.0], np.cumsum(seg)])
    a0 = acc[k0]
    if a0 - arc < acc[0] or a0 + arc > acc[-1]:
        raise RuntimeError("manifold growth did not cover the requested arc")
    return np.interp(np.linspace(a0 - arc, a0 + arc, n_pts), acc, s)


def _align(pts: np.ndarray, p: TorusPoint) -> np.ndarray:
    """Shift the polyline to the lift whose middle vertex is nearest p."""
    d = pts[pts.shape[0] // 2] - np.array([p.x, p.y])
    return pts - np.round(d)


def local_manifold(f: AlmostAnosovMap, p: TorusPoint, side: str = "unstable", arc: float = 0.02,
                   n_pts: int = 101, m: int = 16, iters: int = 8) -> np.ndarray:
    """Polyline (n_pts x 2, lifted coordinates near p) approximating W^side_arc(p)."""
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    if arc > 0.05:
        raise ValueError("arc must be <= 0.05")
    return _polyline_grow(f, p, side, arc, n_pts, m, iters)


# --------------------------------------------------------------------------
# bracket


def _seg_intersect(p1, p2, q1, q2):
    r = p2 - p1
    s = q2 - q1
    den = r[0] * s[1] - r[1] * s[0]
    if den == 0:
        return None
    qp = q1 - p1
    t = (qp[0] * s[1] - qp[1] * s[0]) / den
    u = (qp[0] * r[1] - qp[1] * r[0]) / den
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
        return p1 + t * r
    return None


def bracket(f: AlmostAnosovMap, x: TorusPoint, y: TorusPoint, eps: float = 0.05,
            delta0: float = 0.05, n_pts: int = 201) -> TorusPoint:
    """[x, y] = W^u_eps(x) intersected with W^s_eps(y), located on polyline approximations."""
    if torus_distance((x.x, x.y), (y.x, y.y)) >= delta0:
        raise ValueError("points farther apart than delta0")
    if x == y:
        return x
    wu = local_manifold(f, x, "unstable", eps, n_pts)
    ws = local_manifold(f, y, "stable", eps, n_pts)
    # put W^s(y) in the same lift as W^u(x)
    off = ws[n_pts // 2] - wu[n_pts // 2]
    ws = ws - np.round(off)
    for i in range(n_pts - 1):
        for j in range(n_pts - 1):
            hit = _seg_intersect(wu[i], wu[i + 1], ws[j], ws[j + 1])
            if hit is not None:
                return TorusPoint(hit[0], hit[1])
    raise RuntimeError("no intersection within eps; delta0 too large")


def splitting_angle(f: AlmostAnosovMap, xs, ys, m: int = 40) -> np.ndarray:
    return line_angle(unstable_directions(f, xs, ys, m), stable_directions(f, xs, ys, m))


def invariance_residual(f: AlmostAnosovMap, xs, ys, side: str = "unstable", m: int = 40) -> np.ndarray:
    """Angle between Df_p E(p) and E(f p)."""
    xs, ys = _arr(xs), _arr(ys)
    fn = unstable_directions if side == "unstable" else stable_directions
    J = f.jacobian_xy(xs, ys)
    e = fn(f, xs, ys, m)
    fx, fy = f.apply_xy(xs, ys)
    return line_angle(np.einsum("nij,nj->ni", J, e), fn(f, fx, fy, m))


def potential_field(f: AlmostAnosovMap, grid_n: int, t: float = 1.0, m: int = 40):
    """(x, y, phi_t) on cell midpoints of a grid_n x grid_n grid."""
    g = (np.arange(grid_n) + 0.5) / grid_n
    X, Y = np.meshgrid(g, g, indexing="ij")
    xs, ys = X.ravel(), Y.ravel()
    return xs, ys, -t * log_unstable_jacobian(f, xs, ys, m)


__all__ = [
    "UnitTangent", "PotentialValue", "unstable_direction", "stable_direction", "geometric_potential",
    "lyapunov_exponent", "local_manifold", "bracket", "unstable_directions", "stable_directions",
    "log_unstable_jacobian", "splitting_angle", "invariance_residual", "potential_field", "line_angle",
]
