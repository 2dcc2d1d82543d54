"""First-return statistics over a rectangle away from the indifferent point.

The rectangle is the base of a first-return tower.  Sampling it yields the
return-time histogram (tail rate, arithmetic condition, Kac consistency) and
stable-segment pairs for the contraction / distortion estimates of the
induced map F = f^tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from numba import njit, prange

from . import _kernels as K
from .cone_dynamics import local_manifold, unstable_directions
from .maps import AlmostAnosovMap, TorusPoint, torus_distance

TIMEOUT = -1


@dataclass(frozen=True)
class Rectangle:
    """Box centred at ``center`` with half-lengths along A's unstable/stable eigendirections."""

    center: TorusPoint
    u_half: float
    s_half: float
    e_u: tuple
    e_s: tuple

    @classmethod
    def default(cls, f: AlmostAnosovMap, center=(0.5, 0.5), u_half=0.05, s_half=0.05) -> "Rectangle":
        return cls.around(f, TorusPoint(*center), u_half, s_half)

    @classmethod
    def around(cls, f: AlmostAnosovMap, center: TorusPoint, u_half: float, s_half: float) -> "Rectangle":
        rect = cls(center, float(u_half), float(s_half), tuple(f.e_u), tuple(f.e_s))
        errs = rect.problems(f.spec.r1)
        if errs:
            raise ValueError("; ".join(errs))
        return rect

    def problems(self, r1: float) -> list[str]:
        out = []
        if self.u_half <= 0 or self.s_half <= 0:
            out.append("half-lengths must be positive")
        if self.diameter >= 0.2:
            out.append("rectangle diameter must be < 0.2")
        # the corners are the farthest points; the closest point to 0 is found on a fine boundary walk
        if self.boundary_distance_to_origin() <= r1:
            out.append("rectangle meets B_r1(0)")
        return out

    @property
    def diameter(self) -> float:
        return 2.0 * math.hypot(self.u_half, self.s_half)

    @property
    def basis(self) -> np.ndarray:
        return np.column_stack([self.e_u, self.e_s])

    @property
    def params(self) -> np.ndarray:
        Binv = np.linalg.inv(self.basis)
        return np.array([self.center.x, self.center.y, self.u_half, self.s_half, *Binv.ravel()])

    @property
    def area(self) -> float:
        return 4.0 * self.u_half * self.s_half * abs(np.linalg.det(self.basis))

    def boundary_distance_to_origin(self, n: int = 400) -> float:
        t = np.linspace(-1, 1, n)
        pts = []
        for su, ss in ((t, np.ones(n)), (t, -np.ones(n)), (np.ones(n), t), (-np.ones(n), t)):
            pts.append(self.to_xy(su * self.u_half, ss * self.s_half))
        xs = np.concatenate([p[0] for p in pts])
        ys = np.concatenate([p[1] for p in pts])
        inside0 = bool(self.contains_xy(np.array([0.0]), np.array([0.0]))[0])
        return 0.0 if inside0 else float(torus_distance((xs, ys)).min())

    def to_xy(self, su, ss):
        B = self.basis
        x = self.center.x + B[0, 0] * su + B[0, 1] * ss
        y = self.center.y + B[1, 0] * su + B[1, 1] * ss
        return np.mod(x, 1.0), np.mod(y, 1.0)

    def local_coords(self, xs, ys):
        return _local_coords_many(np.asarray(xs, float), np.asarray(ys, float), self.params)

    def contains_xy(self, xs, ys) -> np.ndarray:
        """Open-interior membership (the boundary does not count)."""
        return _inside_many(np.atleast_1d(np.asarray(xs, float)), np.atleast_1d(np.asarray(ys, float)), self.params)

    def sample(self, rng: np.random.Generator, n: int):
        su = rng.uniform(-self.u_half, self.u_half, n)
        ss = rng.uniform(-self.s_half, self.s_half, n)
        return self.to_xy(su, ss)


@njit(cache=True)
def _local(x, y, R):
    dx = K.wrap(x - R[0])
    dy = K.wrap(y - R[1])
    return R[4] * dx + R[5] * dy, R[6] * dx + R[7] * dy


@njit(cache=True)
def _inside(x, y, R):
    su, ss = _local(x, y, R)
    return abs(su) < R[2] and abs(ss) < R[3]


@njit(cache=True, parallel=True)
def _inside_many(xs, ys, R):
    out = np.empty(xs.shape[0], dtype=np.bool_)
    for i in prange(xs.shape[0]):
        out[i] = _inside(xs[i], ys[i], R)
    return out


@njit(cache=True)
def _local_coords_many(xs, ys, R):
    out = np.empty((xs.shape[0], 2))
    for i in range(xs.shape[0]):
        out[i, 0], out[i, 1] = _local(xs[i], ys[i], R)
    return out


@njit(cache=True)
def _return_time(x, y, P, R, n_max):
    for n in range(1, n_max + 1):
        x, y = K.fmap(x, y, P)
        if _inside(x, y, R):
            return n
    return -1


@njit(cache=True, parallel=True)
def _return_times(xs, ys, P, R, n_max):
    out = np.empty(xs.shape[0], dtype=np.int64)
    for i in prange(xs.shape[0]):
        out[i] = _return_time(xs[i], ys[i], P, R, n_max)
    return out


def first_return_time(f: AlmostAnosovMap, rect: Rectangle, x: TorusPoint, n_max: int = 10**4) -> int:
    """Least n in [1, n_max] with f^n(x) in the open rectangle, or TIMEOUT (-1)."""
    return int(_return_time(x.x, x.y, f.params, rect.params, int(n_max)))


def return_times_xy(f: AlmostAnosovMap, rect: Rectangle, xs, ys, n_max: int = 10**4) -> np.ndarray:
    return _return_times(np.ascontiguousarray(xs, float), np.ascontiguousarray(ys, float), f.params,
                         rect.params, int(n_max))


@dataclass
class ReturnTimeHistogram:
    counts: dict  # n -> number of samples with first return n
    samples: int
    n_max: int
    timeouts: int
    sum_returned: int = 0  # sum of resolved return times (for the Kac mean)

    def __post_init__(self):
        assert sum(self.counts.values()) + self.timeouts == self.samples
        assert all(n >= 1 for n in self.counts)

    @property
    def timeout_fraction(self) -> float:
        return self.timeouts / self.samples

    @property
    def mean_return(self) -> float:
        """Mean over resolved samples (a lower bound on the true mean when timeouts occur)."""
        k = self.samples - self.timeouts
        return self.sum_returned / k if k else math.inf

    def merge(self, other: "ReturnTimeHistogram") -> "ReturnTimeHistogram":
        if other.n_max != self.n_max:
            raise ValueError("cannot merge histograms with different n_max")
        counts = dict(self.counts)
        for n, c in other.counts.items():
            counts[n] = counts.get(n, 0) + c
        return ReturnTimeHistogram(dict(sorted(counts.items())), self.samples + other.samples, self.n_max,
                                   self.timeouts + other.timeouts, self.sum_returned + other.sum_returned)

    def rows(self):
        """(n, S_n, cumulative fraction of samples returned by time n)."""
        acc = 0
        for n in sorted(self.counts):
            acc += self.counts[n]
            yield n, self.counts[n], acc / self.samples

    @classmethod
    def from_times(cls, times: np.ndarray, n_max: int) -> "ReturnTimeHistogram":
        times = np.asarray(times)
        ok = times > 0
        vals, cnt = np.unique(times[ok], return_counts=True)
        return cls({int(v): int(c) for v, c in zip(vals, cnt)}, int(times.size), int(n_max),
                   int((~ok).sum()), int(times[ok].sum()))


def return_time_histogram(f: AlmostAnosovMap, rect: Rectangle, samples: int = 10**5, n_max: int = 10**4,
                          seed: int | None = None, chunks: int = 8) -> ReturnTimeHistogram:
    """Histogram of first-return times of uniform samples in ``rect``.

    Samples are split into ``chunks`` independent streams derived from the
    seed, and the partial histograms are merged in chunk order.
    """
    if samples < 10**4:
        raise ValueError("need at least 1e4 samples")
    seed = f.spec.seed if seed is None else seed
    sizes = [samples // chunks + (1 if i < samples % chunks else 0) for i in range(chunks)]
    parts = []
    for i, sz in enumerate(sizes):
        rng = np.random.default_rng([seed, 21, i])
        xs, ys = rect.sample(rng, sz)
        parts.append(ReturnTimeHistogram.from_times(return_times_xy(f, rect, xs, ys, n_max), n_max))
    return reduce(ReturnTimeHistogram.merge, parts)


@dataclass
class TailFit:
    h_fit: float  # growth rate of the s-set count estimate
    r_squared: float
    n_range: tuple
    decay_rate: float  # slope of log(sample count) against n
    bins_used: int


def fit_tail_rate(hist: ReturnTimeHistogram | dict, unstable_rate: float = 0.0, min_bins: int = 5) -> TailFit:
    """Least squares of log S_n against n over the upper half of the populated range.

    ``S_n`` are the histogram counts.  A sampled s-set with return time n has
    unstable width ~ exp(-n * unstable_rate), so the number of such s-sets is
    estimated by counts * exp(n * unstable_rate); h_fit is the slope of that
    estimate (with ``unstable_rate=0`` it is the slope of the raw counts).
    """
    counts = hist.counts if isinstance(hist, ReturnTimeHistogram) else hist
    ns = np.array(sorted(n for n, c in counts.items() if c > 0), dtype=float)
    if ns.size == 0:
        raise ValueError("empty histogram")
    lo = 0.5 * (ns[0] + ns[-1])
    sel = ns[ns >= lo]
    if sel.size < min_bins:
        raise ValueError(f"only {sel.size} populated bins in the upper half of the range (need {min_bins})")
    logs = np.log([counts[int(n)] for n in sel])
    slope, icpt = np.polyfit(sel, logs, 1)
    pred = slope * sel + icpt
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return TailFit(float(slope + unstable_rate), r2, (int(sel[0]), int(sel[-1])), float(slope), int(sel.size))


def check_arithmetic_condition(hist: ReturnTimeHistogram | dict) -> int:
    counts = hist.counts if isinstance(hist, ReturnTimeHistogram) else hist
    obs = [int(n) for n, c in counts.items() if c > 0]
    if not obs:
        raise ValueError("empty histogram")
    return reduce(math.gcd, obs)


# --------------------------------------------------------------------------
# stable pairs and the induced map


@dataclass
class StablePairs:
    x: np.ndarray  # (k, 2)
    y: np.ndarray
    delta: np.ndarray


def stable_pairs(f: AlmostAnosovMap, rect: Rectangle, pairs: int, seed: int | None = None,
                 delta_range=(1e-4, 1e-2)) -> StablePairs:
    """x uniform in ``rect``; y at arclength delta along the local stable manifold of x.

    Pairs whose partner leaves the open rectangle are redrawn.
    """
    seed = f.spec.seed if seed is None else seed
    rng = np.random.default_rng([seed, 22])
    lo, hi = delta_range
    if not 1e-4 <= lo <= hi <= 1e-2:
        raise ValueError("delta must lie in [1e-4, 1e-2]")
    xs, ys, ds = [], [], []
    while len(xs) < pairs:
        px, py = rect.sample(rng, 1)
        delta = float(np.exp(rng.uniform(math.log(lo), math.log(hi))))
        sign = 1 if rng.random() < 0.5 else -1
        w = local_manifold(f, TorusPoint(px[0], py[0]), "stable", delta, 3, m=16, iters=2)
        q = w[1 + sign] % 1.0
        if not rect.contains_xy(q[0], q[1])[0]:
            continue
        xs.append((px[0], py[0]))
        ys.append((q[0], q[1]))
        ds.append(float(torus_distance((px[0], py[0]), (q[0], q[1]))))
    return StablePairs(np.array(xs), np.array(ys), np.array(ds))


@njit(cache=True, parallel=True)
def _pair_track(x0, y0, P, R, n_comp, n_max, m, eu0, eu1, es0, es1):
    """Follow stable pairs (x, y) through ``n_comp`` returns of x.

    After every step the partner is put back on the stable line of the
    reference orbit at the current separation, which removes the round-off
    component along E^u (it would otherwise grow like lambda^n and destroy
    the pair within a few dozen steps).  Unstable vectors are carried along
    both orbits for J^uF.

    Returns per pair and composition: tau, d(F^k x, F^k y) after the block,
    the log J^uF ratio of the block, and the largest separation inside it.
    NaN/-1 mark timeouts.
    """
    k = x0.shape[0]
    taus = np.full((k, n_comp), -1, dtype=np.int64)
    dend = np.full((k, n_comp), np.nan)
    lrat = np.full((k, n_comp), np.nan)
    dmax = np.full((k, n_comp), np.nan)
    for i in prange(k):
        ax, ay = x0[i, 0], x0[i, 1]
        bx, by = y0[i, 0], y0[i, 1]
        av0, av1, _ = K.unstable_vector(ax, ay, P, m, eu0, eu1)
        bv0, bv1, _ = K.unstable_vector(bx, by, P, m, eu0, eu1)
        for c in range(n_comp):
            tau = _return_time(ax, ay, P, R, n_max)
            if tau < 0:
                break
            la = 0.0
            lb = 0.0
            dm = math.sqrt(K.wrap(bx - ax) ** 2 + K.wrap(by - ay) ** 2)
            d = dm
            for _ in range(tau):
                j00, j01, j10, j11 = K.fjac(ax, ay, P)
                n0 = j00 * av0 + j01 * av1
                n1 = j10 * av0 + j11 * av1
                nn = math.sqrt(n0 * n0 + n1 * n1)
                la += math.log(nn)
                av0, av1 = n0 / nn, n1 / nn
                j00, j01, j10, j11 = K.fjac(bx, by, P)
                n0 = j00 * bv0 + j01 * bv1
                n1 = j10 * bv0 + j11 * bv1
                nn = math.sqrt(n0 * n0 + n1 * n1)
                lb += math.log(nn)
                bv0, bv1 = n0 / nn, n1 / nn
                ax, ay = K.fmap(ax, ay, P)
                bx, by = K.fmap(bx, by, P)
                dx = K.wrap(bx - ax)
                dy = K.wrap(by - ay)
                d = math.sqrt(dx * dx + dy * dy)
                s0, s1 = K.stable_vector(ax, ay, P, m, es0, es1)
                sg = 1.0 if dx * s0 + dy * s1 >= 0.0 else -1.0
                bx = K.mod1(ax + sg * d * s0)
                by = K.mod1(ay + sg * d * s1)
                if d > dm:
                    dm = d
            taus[i, c] = tau
            dend[i, c] = d
            lrat[i, c] = la - lb
            dmax[i, c] = dm
    return taus, dend, lrat, dmax


@dataclass
class PairTrack:
    pairs: StablePairs
    taus: np.ndarray  # (k, n_comp)
    d_end: np.ndarray
    log_ratio: np.ndarray
    d_max: np.ndarray


def track_pairs(f: AlmostAnosovMap, rect: Rectangle, sp: StablePairs, n_compositions: int = 1,
                n_max: int = 10**4, m: int = 40) -> PairTrack:
    out = _pair_track(np.ascontiguousarray(sp.x), np.ascontiguousarray(sp.y), f.params, rect.params,
                      int(n_compositions), int(n_max), int(m), f.e_u[0], f.e_u[1], f.e_s[0], f.e_s[1])
    return PairTrack(sp, *out)


@dataclass
class ContractionReport:
    worst_a: float
    ratios: np.ndarray
    return_times: np.ndarray
    skipped_timeouts: int
    mismatched_returns: int  # partner's own first return differs from x's (F applied with tau(x))


def check_contraction(f: AlmostAnosovMap, rect: Rectangle, pairs: int | StablePairs = 1000,
                      n_max: int = 10**4, seed: int | None = None) -> ContractionReport:
    """Worst d(Fx, Fy)/d(x, y) over stable pairs, F = f^{tau(x)}."""
    sp = pairs if isinstance(pairs, StablePairs) else stable_pairs(f, rect, pairs, seed)
    tr = track_pairs(f, rect, sp, 1, n_max)
    tx = tr.taus[:, 0]
    ty = return_times_xy(f, rect, sp.y[:, 0], sp.y[:, 1], n_max)
    ok = (tx > 0) & (sp.delta >= 1e-9)
    ratios = np.where(ok, tr.d_end[:, 0] / sp.delta, np.nan)
    worst = float(np.nanmax(ratios)) if ok.any() else math.nan
    return ContractionReport(worst, ratios, tx, int((tx <= 0).sum()), int(((tx != ty) & ok).sum()))


@dataclass
class DistortionReport:
    suprema: np.ndarray  # sup over pairs of |log J^uF(F^n x)/J^uF(F^n y)|, n = 0..n_compositions-1
    c: float
    kappa: float
    theta_used: float
    fit_ok: bool
    pairs_used: int
    skipped_timeouts: int
    log_ratios: np.ndarray = field(repr=False, default=None)


def _fit_geometric(ns, vals):
    ok = vals > 0
    if ok.sum() < 2:
        return math.nan, math.nan, False
    slope, icpt = np.polyfit(ns[ok], np.log(vals[ok]), 1)
    kappa = math.exp(slope)
    return math.exp(icpt), kappa, bool(0 < kappa < 1)


def check_distortion(f: AlmostAnosovMap, rect: Rectangle, pairs: int | StablePairs = 1000,
                     n_compositions: int = 8, n_max: int = 10**4, seed: int | None = None,
                     m: int = 40) -> DistortionReport:
    """Suprema of the unstable-Jacobian log ratio along composed returns, fitted by c kappa^n.

    J^uF is the product of |Df|_{E^u}| over each return block, obtained by
    carrying E^u (seeded at depth ``m``) along both orbits.  ``theta_used``
    is the empirical Hoelder exponent of the first-block ratio in d(x, y).
    """
    if not 1 <= n_compositions <= 8:
        raise ValueError("n_compositions must be in [1, 8]")
    sp = pairs if isinstance(pairs, StablePairs) else stable_pairs(f, rect, pairs, seed)
    tr = track_pairs(f, rect, sp, n_compositions, n_max, m)
    lr = tr.log_ratio
    full = ~np.isnan(lr).any(axis=1)
    sup = np.abs(lr[full]).max(axis=0) if full.any() else np.full(n_compositions, np.nan)
    c, kappa, ok = _fit_geometric(np.arange(n_compositions, dtype=float), sup)
    d = sp.delta[full]
    v = np.abs(lr[full, 0])
    good = (v > 0) & (d > 0)
    theta = float(np.polyfit(np.log(d[good]), np.log(v[good]), 1)[0]) if good.sum() > 2 else math.nan
    return DistortionReport(sup, c, kappa, theta, ok, int(full.sum()), int((~full).sum()), lr)


@dataclass
class IntermediateReport:
    worst_K: float
    argmax_at_tau_fraction: float  # fraction of pairs whose max separation occurs at j = tau
    pairs_used: int


def check_intermediate_bound(f: AlmostAnosovMap, rect: Rectangle, pairs: int | StablePairs = 200,
                             kind: str = "stable", n_max: int = 10**4, seed: int | None = None,
                             final_sep: float = 1e-3) -> IntermediateReport:
    """max_j d(f^j x, f^j y) / max(d(x, y), d(Fx, Fy)) over pairs with a common return time.

    ``kind="stable"`` uses tracked stable-segment pairs.  ``kind="unstable"``
    offsets y along E^u(x) by final_sep * lambda_u^{-tau(x)} so the pair
    stays local up to the return; pairs needing an offset below 1e-12 (long
    returns) are skipped since double precision cannot resolve them.
    """
    seed = f.spec.seed if seed is None else seed
    if kind == "stable":
        sp = pairs if isinstance(pairs, StablePairs) else stable_pairs(f, rect, pairs, seed)
        tr = track_pairs(f, rect, sp, 1, n_max)
        ok = tr.taus[:, 0] > 0
        den = np.maximum(sp.delta[ok], tr.d_end[ok, 0])
        Kv = tr.d_max[ok, 0] / den
        at_tau = np.isclose(tr.d_max[ok, 0], tr.d_end[ok, 0], rtol=1e-12, atol=0)
        return IntermediateReport(float(Kv.max()), float(at_tau.mean()), int(ok.sum()))
    if kind != "unstable":
        raise ValueError("kind must be 'stable' or 'unstable'")
    n = pairs if isinstance(pairs, int) else len(pairs.x)
    rng = np.random.default_rng([seed, 23])
    xs, ys = rect.sample(rng, n)
    tx = return_times_xy(f, rect, xs, ys, n_max)
    offs = final_sep * np.exp(-np.maximum(tx, 0) * f.log_lambda_u)
    e = unstable_directions(f, xs, ys)
    Y = np.mod(np.column_stack([xs, ys]) + offs[:, None] * e, 1.0)
    ty = return_times_xy(f, rect, Y[:, 0], Y[:, 1], n_max)
    worst, at_tau, used = 0.0, 0, 0
    for i in np.flatnonzero((tx > 0) & (tx == ty) & (offs >= 1e-12)):
        ox, oy = K.orbit(xs[i], ys[i], f.params, int(tx[i]) + 1)
        px, py = K.orbit(Y[i, 0], Y[i, 1], f.params, int(tx[i]) + 1)
        dist = torus_distance((ox, oy), (px, py))
        used += 1
        worst = max(worst, float(dist.max() / max(dist[0], dist[-1])))
        at_tau += int(np.argmax(dist) == len(dist) - 1)
    return IntermediateReport(worst, at_tau / used if used else math.nan, used)


def rect_srb_mass(rect: Rectangle, weights: np.ndarray, sub: int = 8) -> float:
    """Measure of ``rect`` under a grid measure, splitting each cell into sub x sub pieces."""
    n = weights.shape[0]
    g = (np.arange(n * sub) + 0.5) / (n * sub)
    X, Y = np.meshgrid(g, g, indexing="ij")
    inside = rect.contains_xy(X.ravel(), Y.ravel()).reshape(n, sub, n, sub)
    frac = inside.mean(axis=(1, 3))
    return float((frac * weights).sum())


__all__ = [
    "Rectangle", "ReturnTimeHistogram", "TailFit", "DistortionReport", "ContractionReport",
    "IntermediateReport", "StablePairs", "first_return_time", "return_times_xy", "return_time_histogram",
    "fit_tail_rate", "check_arithmetic_condition", "stable_pairs", "check_contraction", "check_distortion",
    "check_intermediate_bound", "rect_srb_mass", "TIMEOUT", "track_pairs", "PairTrack",
]
