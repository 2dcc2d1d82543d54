"""Compiled point kernels for the glued torus map.

Everything here works on plain floats and a flat ``float64`` parameter
vector so that numba can compile it once and the higher level modules can
call it from tight loops.  Layout of the parameter vector::

    0..3   A (row-major)            4..7   a, b, c, d
    8, 9   r0, r1                   10     bump kind (0 smooth, 1 poly9)
    11..14 chart matrix R (row-major, columns = chart axes)
    15..18 R^{-1} (row-major)       19..22 A^{-1} (row-major)
"""

import math

import os

import numpy as np
from numba import config, njit, prange

# The TBB found on many systems is too old for numba and only produces a
# warning on every run; OpenMP is always available, so prefer it unless the
# user picked a layer explicitly.
if "NUMBA_THREADING_LAYER" not in os.environ:
    config.THREADING_LAYER = "omp"

NPARAM = 23
BUMP_SMOOTH = 0
BUMP_POLY9 = 1

INV_TOL = 1e-13
INV_MAXIT = 50


@njit(cache=True)
def wrap(z):
    """Representative of ``z`` mod 1 in [-1/2, 1/2)."""
    w = (z + 0.5) % 1.0 - 0.5
    if w >= 0.5:
        w -= 1.0
    return w


@njit(cache=True)
def mod1(z):
    w = z % 1.0
    if w >= 1.0:
        w = 0.0
    return w


@njit(cache=True)
def profile(s, kind):
    """Transition q on [0, 1] with q(0)=0, q(1)=1; returns (q, q')."""
    if s <= 0.0:
        return 0.0, 0.0
    if s >= 1.0:
        return 1.0, 0.0
    if kind == BUMP_POLY9:
        q = s**5 * (126.0 - 420.0 * s + 540.0 * s * s - 315.0 * s**3 + 70.0 * s**4)
        dq = 630.0 * s**4 * (1.0 - s) ** 4
        return q, dq
    # E(s)/(E(s)+E(1-s)) with E(s)=exp(-1/s), written to avoid underflow
    e = 1.0 / s - 1.0 / (1.0 - s)
    if e > 700.0:
        return 0.0, 0.0
    if e < -700.0:
        return 1.0, 0.0
    q = 1.0 / (1.0 + math.exp(e))
    dq = q * (1.0 - q) * (1.0 / (s * s) + 1.0 / ((1.0 - s) * (1.0 - s)))
    return q, dq


@njit(cache=True)
def bump(r, r0, r1, kind):
    """omega(r) and d omega/dr; the transition runs in log-radius."""
    if r <= r0:
        return 1.0, 0.0
    if r >= r1:
        return 0.0, 0.0
    lr = math.log(r1 / r0)
    s = math.log(r1 / r) / lr
    q, dq = profile(s, kind)
    return q, -dq / (r * lr)


@njit(cache=True)
def local_form(xi, eta, a, b, c, d):
    return xi * (1.0 + a * xi * xi + b * eta * eta), eta * (1.0 - c * xi * xi - d * eta * eta)


@njit(cache=True)
def local_jac(xi, eta, a, b, c, d):
    return (
        1.0 + 3.0 * a * xi * xi + b * eta * eta,
        2.0 * b * xi * eta,
        -2.0 * c * xi * eta,
        1.0 - c * xi * xi - 3.0 * d * eta * eta,
    )


@njit(cache=True)
def lift_map(u, v, P):
    """Image of the lifted point (u, v) (|u|,|v| <= 1/2), not reduced mod 1."""
    Au = P[0] * u + P[1] * v
    Av = P[2] * u + P[3] * v
    r = math.sqrt(u * u + v * v)
    if r >= P[9]:
        return Au, Av
    w, _ = bump(r, P[8], P[9], int(P[10]))
    xi = P[15] * u + P[16] * v
    eta = P[17] * u + P[18] * v
    lx, ly = local_form(xi, eta, P[4], P[5], P[6], P[7])
    Lu = P[11] * lx + P[12] * ly
    Lv = P[13] * lx + P[14] * ly
    return w * Lu + (1.0 - w) * Au, w * Lv + (1.0 - w) * Av


@njit(cache=True)
def lift_jac(u, v, P):
    r = math.sqrt(u * u + v * v)
    if r >= P[9]:
        return P[0], P[1], P[2], P[3]
    w, dw = bump(r, P[8], P[9], int(P[10]))
    xi = P[15] * u + P[16] * v
    eta = P[17] * u + P[18] * v
    j00, j01, j10, j11 = local_jac(xi, eta, P[4], P[5], P[6], P[7])
    # R * DL * R^{-1}
    m00 = P[11] * j00 + P[12] * j10
    m01 = P[11] * j01 + P[12] * j11
    m10 = P[13] * j00 + P[14] * j10
    m11 = P[13] * j01 + P[14] * j11
    d00 = m00 * P[15] + m01 * P[17]
    d01 = m00 * P[16] + m01 * P[18]
    d10 = m10 * P[15] + m11 * P[17]
    d11 = m10 * P[16] + m11 * P[18]
    o00 = w * d00 + (1.0 - w) * P[0]
    o01 = w * d01 + (1.0 - w) * P[1]
    o10 = w * d10 + (1.0 - w) * P[2]
    o11 = w * d11 + (1.0 - w) * P[3]
    if dw != 0.0:
        lx, ly = local_form(xi, eta, P[4], P[5], P[6], P[7])
        du = P[11] * lx + P[12] * ly - (P[0] * u + P[1] * v)
        dv = P[13] * lx + P[14] * ly - (P[2] * u + P[3] * v)
        gx = dw * u / r
        gy = dw * v / r
        o00 += du * gx
        o01 += du * gy
        o10 += dv * gx
        o11 += dv * gy
    return o00, o01, o10, o11


@njit(cache=True)
def fmap(x, y, P):
    u, v = lift_map(wrap(x), wrap(y), P)
    return mod1(u), mod1(v)


@njit(cache=True)
def fjac(x, y, P):
    return lift_jac(wrap(x), wrap(y), P)


@njit(cache=True)
def finv(x, y, P):
    """Newton solve of f(q) = p seeded at A^{-1} p. Returns (qx, qy, converged)."""
    qx = mod1(P[19] * x + P[20] * y)
    qy = mod1(P[21] * x + P[22] * y)
    # the seed is exact when it lands outside the glue disc
    if math.sqrt(wrap(qx) ** 2 + wrap(qy) ** 2) >= P[9] + 1e-12:
        return qx, qy, True
    u = wrap(qx)
    v = wrap(qy)
    tu = wrap(x)
    tv = wrap(y)
    for _ in range(INV_MAXIT):
        fu, fv = lift_map(u, v, P)
        ru = wrap(fu - tu)
        rv = wrap(fv - tv)
        res = math.sqrt(ru * ru + rv * rv)
        if res <= INV_TOL:
            return mod1(u), mod1(v), True
        j00, j01, j10, j11 = lift_jac(u, v, P)
        det = j00 * j11 - j01 * j10
        su = (j11 * ru - j01 * rv) / det
        sv = (-j10 * ru + j00 * rv) / det
        # backtracking keeps Newton inside the basin through the glue annulus
        step = 1.0
        for _k in range(30):
            nu = u - step * su
            nv = v - step * sv
            gu, gv = lift_map(nu, nv, P)
            nres = math.sqrt(wrap(gu - tu) ** 2 + wrap(gv - tv) ** 2)
            if nres < res:
                break
            step *= 0.5
        u = wrap(nu)
        v = wrap(nv)
    fu, fv = lift_map(u, v, P)
    res = math.sqrt(wrap(fu - tu) ** 2 + wrap(fv - tv) ** 2)
    return mod1(u), mod1(v), res <= 1e-12


@njit(cache=True, parallel=True)
def fmap_many(xs, ys, P):
    n = xs.shape[0]
    ox = np.empty(n)
    oy = np.empty(n)
    for i in prange(n):
        ox[i], oy[i] = fmap(xs[i], ys[i], P)
    return ox, oy


@njit(cache=True, parallel=True)
def fjac_many(xs, ys, P):
    n = xs.shape[0]
    out = np.empty((n, 2, 2))
    for i in prange(n):
        j00, j01, j10, j11 = fjac(xs[i], ys[i], P)
        out[i, 0, 0] = j00
        out[i, 0, 1] = j01
        out[i, 1, 0] = j10
        out[i, 1, 1] = j11
    return out


@njit(cache=True, parallel=True)
def finv_many(xs, ys, P):
    n = xs.shape[0]
    ox = np.empty(n)
    oy = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    for i in prange(n):
        ox[i], oy[i], ok[i] = finv(xs[i], ys[i], P)
    return ox, oy, ok


@njit(cache=True, parallel=True)
def iterate_many(xs, ys, P, n):
    m = xs.shape[0]
    ox = np.empty(m)
    oy = np.empty(m)
    for i in prange(m):
        x = xs[i]
        y = ys[i]
        for _ in range(n):
            x, y = fmap(x, y, P)
        ox[i] = x
        oy[i] = y
    return ox, oy


@njit(cache=True)
def unstable_vector(x, y, P, m, eu0, eu1):
    """Push the unstable eigendirection of A forward m steps from f^{-m}(x, y).

    The differentials are evaluated on the stored backward orbit; re-running
    it forward from f^{-m}(x, y) would drift off the true orbit by ~lambda^m ulps.
    Returns the unit vector at (x, y) and whether every inverse step converged.
    """
    xs = np.empty(m)
    ys = np.empty(m)
    bx = x
    by = y
    ok = True
    for k in range(m):
        bx, by, c = finv(bx, by, P)
        ok = ok and c
        xs[k] = bx
        ys[k] = by
    v0 = eu0
    v1 = eu1
    for k in range(m - 1, -1, -1):
        j00, j01, j10, j11 = fjac(xs[k], ys[k], P)
        n0 = j00 * v0 + j01 * v1
        n1 = j10 * v0 + j11 * v1
        nn = math.sqrt(n0 * n0 + n1 * n1)
        v0 = n0 / nn
        v1 = n1 / nn
    return v0, v1, ok


@njit(cache=True)
def stable_vector(x, y, P, m, es0, es1):
    """Pull the stable eigendirection of A back m steps from f^{m}(x, y)."""
    fx = x
    fy = y
    xs = np.empty(m)
    ys = np.empty(m)
    for k in range(m):
        xs[k] = fx
        ys[k] = fy
        fx, fy = fmap(fx, fy, P)
    v0 = es0
    v1 = es1
    for k in range(m - 1, -1, -1):
        j00, j01, j10, j11 = fjac(xs[k], ys[k], P)
        det = j00 * j11 - j01 * j10
        n0 = (j11 * v0 - j01 * v1) / det
        n1 = (-j10 * v0 + j00 * v1) / det
        nn = math.sqrt(n0 * n0 + n1 * n1)
        v0 = n0 / nn
        v1 = n1 / nn
    return v0, v1


@njit(cache=True, parallel=True)
def unstable_many(xs, ys, P, m, eu0, eu1):
    n = xs.shape[0]
    out = np.empty((n, 2))
    ok = np.empty(n, dtype=np.bool_)
    for i in prange(n):
        out[i, 0], out[i, 1], ok[i] = unstable_vector(xs[i], ys[i], P, m, eu0, eu1)
    return out, ok


@njit(cache=True, parallel=True)
def stable_many(xs, ys, P, m, es0, es1):
    n = xs.shape[0]
    out = np.empty((n, 2))
    for i in prange(n):
        out[i, 0], out[i, 1] = stable_vector(xs[i], ys[i], P, m, es0, es1)
    return out


@njit(cache=True, parallel=True)
def log_unstable_growth_many(xs, ys, P, m, eu0, eu1):
    """log |Df_x u(x)| with u the pushed-forward unstable direction."""
    n = xs.shape[0]
    out = np.empty(n)
    for i in prange(n):
        v0, v1, _ = unstable_vector(xs[i], ys[i], P, m, eu0, eu1)
        j00, j01, j10, j11 = fjac(xs[i], ys[i], P)
        n0 = j00 * v0 + j01 * v1
        n1 = j10 * v0 + j11 * v1
        out[i] = 0.5 * math.log(n0 * n0 + n1 * n1)
    return out


@njit(cache=True, parallel=True)
def lyapunov_many(xs, ys, P, n, burn, eu0, eu1):
    """Per-orbit mean of log|Df u_k| after ``burn`` steps, unstable vector carried along."""
    m = xs.shape[0]
    out = np.empty(m)
    for i in prange(m):
        x = xs[i]
        y = ys[i]
        v0 = eu0
        v1 = eu1
        acc = 0.0
        for k in range(burn + n):
            j00, j01, j10, j11 = fjac(x, y, P)
            n0 = j00 * v0 + j01 * v1
            n1 = j10 * v0 + j11 * v1
            nn = math.sqrt(n0 * n0 + n1 * n1)
            if k >= burn:
                acc += math.log(nn)
            v0 = n0 / nn
            v1 = n1 / nn
            x, y = fmap(x, y, P)
        out[i] = acc / n
    return out


@njit(cache=True)
def orbit(x, y, P, n):
    xs = np.empty(n)
    ys = np.empty(n)
    for k in range(n):
        xs[k] = x
        ys[k] = y
        x, y = fmap(x, y, P)
    return xs, ys
