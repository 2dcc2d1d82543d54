"""Anosov approximants H_eps of the glued map.

Near the origin the normal form is pushed into uniform hyperbolicity by
adding ``g_eps(r^2)`` to the expanding factor and ``-h_eps(r^2)`` to the
contracting one, where g_eps, h_eps integrate the radial infima of the
hyperbolicity margins.  As eps -> 0 these maps converge to f in C^0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .maps import AlmostAnosovMap, TorusPoint, grid_points, hyperbolic_mask, torus_distance

SAFETY = 0.9


def _is_hyperbolic(m00, m01, m10, m11):
    tr = m00 + m11
    det = m00 * m11 - m01 * m10
    disc = tr * tr - 4 * det
    if disc <= 0:
        return False
    sq = math.sqrt(disc)
    l1, l2 = abs(0.5 * (tr + sq)), abs(0.5 * (tr - sq))
    return max(l1, l2) > 1.0 > min(l1, l2)


def margin_matrix(spec, xi, eta, alpha=0.0, beta=0.0):
    """The normal-form differential with 3a -> 3a - alpha and 3d -> 3d - beta."""
    a, b, c, d = spec.a, spec.b, spec.c, spec.d
    return (
        1 + (3 * a - alpha) * xi * xi + b * eta * eta,
        2 * b * xi * eta,
        -2 * c * xi * eta,
        1 - c * xi * xi - (3 * d - beta) * eta * eta,
    )


def _bisect(ok, hi, rtol):
    """Largest v in [0, hi] with ok(w) for all tested w <= v (ok(0) assumed)."""
    if ok(hi):
        return hi
    lo = 0.0
    while hi - lo > rtol * max(lo, 1e-300) and hi - lo > 1e-300:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def hyperbolicity_margin(f: AlmostAnosovMap, xi: float, eta: float, rtol: float = 1e-6):
    """(pi, rho) at chart point (xi, eta): how far 3a (resp. 3d) can drop with Df still hyperbolic.

    Searched on [0, 3a] and [0, 3d]; the origin gets (0, 0).
    """
    if xi == 0.0 and eta == 0.0:
        return 0.0, 0.0
    s = f.spec
    pi = _bisect(lambda al: _is_hyperbolic(*margin_matrix(s, xi, eta, al, 0.0)), 3 * s.a, rtol)
    rho = _bisect(lambda be: _is_hyperbolic(*margin_matrix(s, xi, eta, 0.0, be)), 3 * s.d, rtol)
    return pi, rho


def hyperbolicity_margin_at(f: AlmostAnosovMap, p: TorusPoint, rtol: float = 1e-6):
    """Margins at a torus point in B_{r0}; converts to chart coordinates first."""
    if distance_gt(p, f.spec.r0):
        raise ValueError("margin only defined inside B_r0")
    u, v = p.lift()
    Rinv = np.linalg.inv(f.chart)
    xi, eta = Rinv @ np.array([u, v])
    return hyperbolicity_margin(f, float(xi), float(eta), rtol)


def distance_gt(p: TorusPoint, r: float) -> bool:
    return float(torus_distance((p.x, p.y))) > r


@dataclass
class MarginField:
    radii: np.ndarray  # (radial_n,)
    angles: np.ndarray  # (angular_n,)
    pi: np.ndarray  # (radial_n, angular_n)
    rho: np.ndarray
    alpha: np.ndarray  # radial infima, (radial_n,)
    beta: np.ndarray

    def alpha_at(self, s):
        """Linear interpolation of alpha(s), with alpha(0) = 0."""
        return np.interp(s, np.concatenate([[0.0], self.radii]), np.concatenate([[0.0], self.alpha]))

    def beta_at(self, s):
        return np.interp(s, np.concatenate([[0.0], self.radii]), np.concatenate([[0.0], self.beta]))


def build_margin_field(f: AlmostAnosovMap, radial_n: int = 64, angular_n: int = 64,
                       safety: float = SAFETY) -> MarginField:
    """Tabulate margins on a polar grid over B_r0 minus the origin.

    ``alpha``/``beta`` are the per-circle minima, shrunk by ``safety``.
    """
    if radial_n < 8 or angular_n < 8:
        raise ValueError("grid resolutions must be >= 8")
    radii = f.spec.r0 * np.arange(1, radial_n + 1) / radial_n
    angles = 2 * math.pi * np.arange(angular_n) / angular_n
    pi = np.empty((radial_n, angular_n))
    rho = np.empty_like(pi)
    for i, r in enumerate(radii):
        for j, th in enumerate(angles):
            pi[i, j], rho[i, j] = hyperbolicity_margin(f, r * math.cos(th), r * math.sin(th))
    return MarginField(radii, angles, pi, rho, safety * pi.min(axis=1), safety * rho.min(axis=1))


@dataclass
class HomotopyMember:
    """g_eps, h_eps tabulated on t in [0, eps^2]; piecewise quadratic in between."""

    epsilon: float
    t_nodes: np.ndarray
    g_nodes: np.ndarray
    h_nodes: np.ndarray
    alpha_nodes: np.ndarray  # alpha(sqrt t) at the nodes
    beta_nodes: np.ndarray
    map: AlmostAnosovMap

    def _eval(self, t, vals, integrand):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = t < self.t_nodes[-1]
        ti = np.clip(t[inside], 0.0, None)
        k = np.clip(np.searchsorted(self.t_nodes, ti, side="right") - 1, 0, len(self.t_nodes) - 2)
        t0, t1 = self.t_nodes[k], self.t_nodes[k + 1]
        i0, i1 = integrand[k], integrand[k + 1]
        lam = (ti - t0) / (t1 - t0)
        # integral of the linear integrand from ti to t1, added to the tabulated tail
        i_t = i0 + lam * (i1 - i0)
        seg = 0.5 * (i_t + i1) * (t1 - ti)
        out[inside] = vals[k + 1] + 0.25 * seg
        return out

    def g(self, t):
        return self._eval(t, self.g_nodes, self.alpha_nodes)

    def h(self, t):
        return self._eval(t, self.h_nodes, self.beta_nodes)

    def _deriv(self, t, integrand):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = t < self.t_nodes[-1]
        out[inside] = -0.25 * np.interp(t[inside], self.t_nodes, integrand)
        return out

    def dg(self, t):
        return self._deriv(t, self.alpha_nodes)

    def dh(self, t):
        return self._deriv(t, self.beta_nodes)


def build_homotopy_member(f: AlmostAnosovMap, margin: MarginField, epsilon: float,
                          nodes: int = 512) -> HomotopyMember:
    """Integrate g_eps(t) = 1/4 int_t^{eps^2} alpha(sqrt u) du (and h_eps with beta)."""
    if not 0 < epsilon <= f.spec.r0:
        raise ValueError("epsilon must lie in (0, r0]")
    if nodes < 256:
        raise ValueError("need at least 256 quadrature nodes")
    t = np.linspace(0.0, epsilon**2, nodes)
    al = margin.alpha_at(np.sqrt(t))
    be = margin.beta_at(np.sqrt(t))
    dt = np.diff(t)
    # composite trapezoid from the right end
    g = np.concatenate([np.cumsum((0.5 * (al[1:] + al[:-1]) * dt)[::-1])[::-1], [0.0]]) * 0.25
    h = np.concatenate([np.cumsum((0.5 * (be[1:] + be[:-1]) * dt)[::-1])[::-1], [0.0]]) * 0.25
    return HomotopyMember(epsilon, t, g, h, al, be, f)


def _homotopy_local(member: HomotopyMember, xi, eta):
    s = member.map.spec
    t = xi * xi + eta * eta
    g = member.g(t)
    h = member.h(t)
    return (xi * (1 + g + s.a * xi * xi + s.b * eta * eta),
            eta * (1 - h - s.c * xi * xi - s.d * eta * eta))


def _homotopy_local_jac(member: HomotopyMember, xi, eta):
    s = member.map.spec
    t = xi * xi + eta * eta
    g, h, dg, dh = member.g(t), member.h(t), member.dg(t), member.dh(t)
    Phi = g + (3 * s.a + 2 * dg) * xi * xi + s.b * eta * eta
    Psi = h + (3 * s.d + 2 * dh) * eta * eta + s.c * xi * xi
    return np.stack([
        np.stack([1 + Phi, 2 * xi * eta * (dg + s.b)], axis=-1),
        np.stack([-2 * xi * eta * (dh + s.c), 1 - Psi], axis=-1),
    ], axis=-2)


def _lift_arrays(xs, ys):
    u = (np.asarray(xs, dtype=float) + 0.5) % 1.0 - 0.5
    v = (np.asarray(ys, dtype=float) + 0.5) % 1.0 - 0.5
    return u, v


def apply_homotopy_xy(member: HomotopyMember, xs, ys):
    f = member.map
    u, v = _lift_arrays(xs, ys)
    ox, oy = f.apply_xy(np.atleast_1d(xs), np.atleast_1d(ys))
    u, v = np.atleast_1d(u), np.atleast_1d(v)
    inside = np.hypot(u, v) < member.epsilon
    if inside.any():
        Rinv = np.linalg.inv(f.chart)
        xi = Rinv[0, 0] * u[inside] + Rinv[0, 1] * v[inside]
        eta = Rinv[1, 0] * u[inside] + Rinv[1, 1] * v[inside]
        lx, ly = _homotopy_local(member, xi, eta)
        R = f.chart
        ox[inside] = (R[0, 0] * lx + R[0, 1] * ly) % 1.0
        oy[inside] = (R[1, 0] * lx + R[1, 1] * ly) % 1.0
    return ox, oy


def differential_homotopy_xy(member: HomotopyMember, xs, ys) -> np.ndarray:
    f = member.map
    J = f.jacobian_xy(np.atleast_1d(xs), np.atleast_1d(ys))
    u, v = _lift_arrays(np.atleast_1d(xs), np.atleast_1d(ys))
    inside = np.hypot(u, v) < member.epsilon
    if inside.any():
        R = f.chart
        Rinv = np.linalg.inv(R)
        xi = Rinv[0, 0] * u[inside] + Rinv[0, 1] * v[inside]
        eta = Rinv[1, 0] * u[inside] + Rinv[1, 1] * v[inside]
        J[inside] = R @ _homotopy_local_jac(member, xi, eta) @ Rinv
    return J


def apply_homotopy(member: HomotopyMember, p: TorusPoint) -> TorusPoint:
    ox, oy = apply_homotopy_xy(member, [p.x], [p.y])
    return TorusPoint(ox[0], oy[0])


def differential_homotopy(member: HomotopyMember, p: TorusPoint) -> np.ndarray:
    return differential_homotopy_xy(member, [p.x], [p.y])[0]


@dataclass
class HomotopyCheck:
    epsilon: float
    all_hyperbolic: bool
    c0_distance: float
    checked: int
    first_failure: TorusPoint | None = None


def verify_homotopy(member: HomotopyMember, grid_n: int = 256, local_n: int = 128) -> HomotopyCheck:
    """Certify DH_eps on the torus grid plus a refined grid over B_eps; sup-distance to f.

    The torus grid alone barely samples B_eps, so a local_n x local_n grid on
    [-eps, eps]^2 (origin included) is added.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be >= 64")
    xs, ys = grid_points(grid_n)
    g = np.linspace(-member.epsilon, member.epsilon, 2 * (local_n // 2) + 1)
    U, V = np.meshgrid(g, g, indexing="ij")
    xs = np.concatenate([xs, U.ravel() % 1.0])
    ys = np.concatenate([ys, V.ravel() % 1.0])
    J = differential_homotopy_xy(member, xs, ys)
    ok = hyperbolic_mask(J)
    hx, hy = apply_homotopy_xy(member, xs, ys)
    fx, fy = member.map.apply_xy(xs, ys)
    dist = float(torus_distance((hx, hy), (fx, fy)).max())
    first = None
    if not ok.all():
        i = int(np.flatnonzero(~ok)[0])
        first = TorusPoint(xs[i], ys[i])
    return HomotopyCheck(member.epsilon, bool(ok.all()), dist, int(xs.size), first)


def homotopy_sweep(f: AlmostAnosovMap, fractions=(0.2, 0.5, 1.0), grid_n: int = 256,
                   margin: MarginField | None = None):
    """verify_homotopy for eps = fraction * r0, in the given order."""
    margin = margin or build_margin_field(f)
    return [verify_homotopy(build_homotopy_member(f, margin, fr * f.spec.r0), grid_n) for fr in fractions]

