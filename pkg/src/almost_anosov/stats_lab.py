"""Decay of correlations and the central limit theorem for sampled equilibrium measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from . import _kernels as K
from .maps import AlmostAnosovMap, torus_distance


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """A bounded function on the torus with declared Hoelder data."""

    name: str
    params: tuple = ()
    holder_exponent: float = 1.0
    holder_constant: float = 1.0

    def __call__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        kind = self.name
        if kind == "cos_x":
            (k,) = self.params
            return np.cos(2 * math.pi * k * xs)
        if kind == "cos_y":
            (k,) = self.params
            return np.cos(2 * math.pi * k * ys)
        if kind == "bump":
            cx, cy, w = self.params
            d = torus_distance((xs, ys), (cx, cy)) / w
            out = np.zeros_like(d)
            inside = d < 1
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - d[inside] ** 2))
            return out
        if kind == "dist_pow":
            (p,) = self.params
            return torus_distance((xs, ys)) ** p
        if kind == "const":
            (c,) = self.params
            return np.full(np.broadcast(xs, ys).shape, float(c))
        raise ValueError(f"unknown observable {kind!r}")


def cos_x(k: int = 1) -> Observable:
    return Observable("cos_x", (k,), 1.0, 2 * math.pi * k)


def cos_y(k: int = 1) -> Observable:
    return Observable("cos_y", (k,), 1.0, 2 * math.pi * k)


def bump_at(cx: float, cy: float, width: float = 0.1) -> Observable:
    return Observable("bump", (cx, cy, width), 1.0, 4.0 / width)


def distance_power(p: float = 1.0) -> Observable:
    return Observable("dist_pow", (p,), min(p, 1.0), max(p, 1.0))


def constant(c: float = 1.0) -> Observable:
    return Observable("const", (c,), 1.0, 0.0)


BUILTINS = {"cos_x": cos_x, "cos_y": cos_y, "bump": bump_at, "dist_pow": distance_power, "const": constant}


def parse_observable(text: str) -> Observable:
    """'cos_x', 'cos_x:2', 'bump:0.5,0.5,0.1', 'dist_pow:0.5', 'const:1'."""
    name, _, rest = text.partition(":")
    if name not in BUILTINS:
        raise ValueError(f"unknown observable {name!r}")
    args = [float(v) for v in rest.split(",")] if rest else []
    if name in ("cos_x", "cos_y"):
        args = [int(a) for a in args]
    return BUILTINS[name](*args)


# --------------------------------------------------------------------------
# measure sampling


@dataclass
class MeasureSampler:
    """Which measure to draw from: 'srb', 'dirac' or 'ulam' (with cell weights)."""

    kind: str = "srb"
    weights: np.ndarray | None = None
    burn_in: int = 10**4
    spacing: int = 1

    def __post_init__(self):
        if self.kind not in ("srb", "dirac", "ulam"):
            raise ValueError("sampler must be 'srb', 'ulam' or 'dirac'")
        if self.kind == "ulam" and self.weights is None:
            raise ValueError("ulam sampling needs eigenvector weights")


def sample_measure(f: AlmostAnosovMap, which: MeasureSampler | str, count: int, seed: int | None = None):
    """Points distributed (approximately) by the chosen measure.

    srb: consecutive points (``spacing`` apart) of one generic orbit after
    burn-in; ulam: cell drawn by weight, uniform inside the cell; dirac: the origin.
    """
    s = which if isinstance(which, MeasureSampler) else MeasureSampler(which)
    seed = f.spec.seed if seed is None else seed
    rng = np.random.default_rng([seed, 41])
    if s.kind == "dirac":
        return np.zeros(count), np.zeros(count)
    if s.kind == "srb":
        x0, y0 = rng.random(2)
        x0, y0 = f.iterate_xy([x0], [y0], s.burn_in)
        xs, ys = K.orbit(x0[0], y0[0], f.params, count * s.spacing)
        return xs[:: s.spacing].copy(), ys[:: s.spacing].copy()
    w = np.asarray(s.weights, dtype=float).ravel()
    n = int(round(math.sqrt(w.size)))
    cells = rng.choice(w.size, size=count, p=w / w.sum())
    i, j = np.divmod(cells, n)
    return (i + rng.random(count)) / n, (j + rng.random(count)) / n


# --------------------------------------------------------------------------
# correlations


@dataclass
class CorrelationSeries:
    n: np.ndarray
    C: np.ndarray
    orbit_len: int
    burn_in: int
    seed: int
    noise_floor: float

    def rows(self):
        return zip(self.n.tolist(), self.C.tolist())


def lagged_covariance(a: np.ndarray, b: np.ndarray, n_max: int) -> np.ndarray:
    """C_n = mean(a[k+n] b[k]) - mean(a) mean(b) over the overlapping window, n = 0..n_max."""
    L = a.size
    out = np.empty(n_max + 1)
    for n in range(n_max + 1):
        x = a[n:]
        y = b[: L - n]
        out[n] = np.mean(x * y) - np.mean(x) * np.mean(y)
    return out


def correlation_series(f: AlmostAnosovMap, sampler: MeasureSampler | str, h1: Observable, h2: Observable,
                       n_max: int = 30, orbit_len: int = 10**6, seed: int | None = None) -> CorrelationSeries:
    """C_n = <h1 o f^n, h2> - <h1><h2> estimated along a sampled orbit.

    For 'srb' the orbit itself is the sample; for 'ulam'/'dirac' the time
    average runs over ``orbit_len`` independent starting points instead.
    """
    if orbit_len < 10**5:
        raise ValueError("orbit_len must be >= 1e5")
    s = sampler if isinstance(sampler, MeasureSampler) else MeasureSampler(sampler)
    seed = f.spec.seed if seed is None else seed
    if s.kind == "srb":
        xs, ys = sample_measure(f, s, orbit_len + n_max, seed)
        C = lagged_covariance(h1(xs, ys), h2(xs, ys), n_max)
    else:
        xs, ys = sample_measure(f, s, orbit_len, seed)
        a0 = h2(xs, ys)
        C = np.empty(n_max + 1)
        px, py = xs, ys
        for n in range(n_max + 1):
            a = h1(px, py)
            C[n] = np.mean(a * a0) - np.mean(a) * np.mean(a0)
            px, py = f.apply_xy(px, py)
    return CorrelationSeries(np.arange(n_max + 1), C, orbit_len, s.burn_in, seed, 3.0 / math.sqrt(orbit_len))


@dataclass
class DecayFit:
    C: float
    kappa: float
    r_squared: float
    status: str  # "fit", "decayed-to-noise"
    points_used: int


def fit_exponential_decay(series: CorrelationSeries | np.ndarray, n_range=(1, 30), noise_floor: float | None = None,
                          min_points: int = 5) -> DecayFit:
    """Least squares of log|C_n| on n over the points of n_range above the noise floor."""
    if isinstance(series, CorrelationSeries):
        ns, C = series.n, series.C
        floor = series.noise_floor if noise_floor is None else noise_floor
    else:
        C = np.asarray(series, dtype=float)
        ns = np.arange(C.size)
        floor = 0.0 if noise_floor is None else noise_floor
    lo, hi = n_range
    sel = (ns >= lo) & (ns <= hi) & (np.abs(C) > floor)
    if sel.sum() < min_points:
        return DecayFit(math.nan, math.nan, math.nan, "decayed-to-noise", int(sel.sum()))
    x = ns[sel].astype(float)
    yv = np.log(np.abs(C[sel]))
    slope, icpt = np.polyfit(x, yv, 1)
    pred = slope * x + icpt
    ss_tot = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - float(np.sum((yv - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(math.exp(icpt), math.exp(slope), r2, "fit", int(sel.sum()))


def first_noise_crossing(series: CorrelationSeries) -> int | None:
    """Smallest n >= 1 with |C_n| at or below the noise floor."""
    below = np.flatnonzero((series.n >= 1) & (np.abs(series.C) <= series.noise_floor))
    return int(series.n[below[0]]) if below.size else None


# --------------------------------------------------------------------------
# CLT


@njit(cache=True)
def _block_sums(x, y, P, n, trials, kind, kx):
    """Sums of the observable over consecutive length-n blocks of one orbit."""
    out = np.empty(trials)
    for t in range(trials):
        acc = 0.0
        for _ in range(n):
            if kind == 0:
                acc += math.cos(2 * math.pi * kx * x)
            else:
                acc += math.cos(2 * math.pi * kx * y)
            x, y = K.fmap(x, y, P)
        out[t] = acc
    return out


@njit(cache=True)
def _start_sums(xs, ys, P, n, kind, kx):
    out = np.empty(xs.shape[0])
    for t in range(xs.shape[0]):
        x, y = xs[t], ys[t]
        acc = 0.0
        for _ in range(n):
            if kind == 0:
                acc += math.cos(2 * math.pi * kx * x)
            else:
                acc += math.cos(2 * math.pi * kx * y)
            x, y = K.fmap(x, y, P)
        out[t] = acc
    return out


def birkhoff_sums(f: AlmostAnosovMap, sampler: MeasureSampler, h: Observable, n: int, trials: int,
                  seed: int) -> np.ndarray:
    """S_n h for ``trials`` starting points drawn from the sampler.

    SRB starts are the consecutive block starts of one orbit after burn-in
    (each block begins where the previous one ended).
    """
    if h.name in ("cos_x", "cos_y"):
        kind = 0 if h.name == "cos_x" else 1
        if sampler.kind == "srb":
            rng = np.random.default_rng([seed, 41])
            x0, y0 = rng.random(2)
            bx, by = f.iterate_xy([x0], [y0], sampler.burn_in)
            return _block_sums(bx[0], by[0], f.params, int(n), int(trials), kind, float(h.params[0]))
        xs, ys = sample_measure(f, sampler, trials, seed)
        return _start_sums(np.ascontiguousarray(xs), np.ascontiguousarray(ys), f.params, int(n), kind,
                           float(h.params[0]))
    # generic observable: vectorised over trials
    if sampler.kind == "srb":
        xs, ys = sample_measure(f, MeasureSampler("srb", burn_in=sampler.burn_in), n * trials, seed)
        return h(xs, ys).reshape(trials, n).sum(axis=1)
    xs, ys = sample_measure(f, sampler, trials, seed)
    acc = np.zeros(trials)
    for _ in range(n):
        acc += h(xs, ys)
        xs, ys = f.apply_xy(xs, ys)
    return acc


@dataclass
class CltReport:
    sigma: float
    ks_distance: float
    n: int
    trials: int
    mean: float
    coboundary_candidate: bool
    hist_centers: np.ndarray = field(repr=False, default=None)
    hist_density: np.ndarray = field(repr=False, default=None)


def clt_experiment(f: AlmostAnosovMap, sampler: MeasureSampler | str, h: Observable, n: int = 1000,
                   trials: int = 10**4, seed: int | None = None, bins: int = 60,
                   sigma_floor: float = 1e-9) -> CltReport:
    """Normalised Birkhoff sums (S_n h - n mean)/sqrt(n); KS distance to Normal(0, sigma^2).

    The mean is the empirical mean of h over all sampled points; sigma is the
    sample standard deviation of the normalised sums (a composite test).
    """
    if n < 1000 or trials < 10**4:
        raise ValueError("need n >= 1e3 and trials >= 1e4")
    s = sampler if isinstance(sampler, MeasureSampler) else MeasureSampler(sampler)
    seed = f.spec.seed if seed is None else seed
    S = birkhoff_sums(f, s, h, n, trials, seed)
    mean = float(S.sum() / (n * trials))
    z = (S - n * mean) / math.sqrt(n)
    sigma = float(z.std(ddof=1))
    if sigma <= sigma_floor:
        return CltReport(sigma, 0.0, n, trials, mean, True, np.zeros(0), np.zeros(0))
    ks = float(stats.kstest(z, "norm", args=(0.0, sigma)).statistic)
    dens, edges = np.histogram(z, bins=bins, density=True)
    return CltReport(sigma, ks, n, trials, mean, False, 0.5 * (edges[1:] + edges[:-1]), dens)


__all__ = [
    "Observable", "cos_x", "cos_y", "bump_at", "distance_power", "constant", "parse_observable",
    "MeasureSampler", "sample_measure", "CorrelationSeries", "correlation_series", "lagged_covariance",
    "DecayFit", "fit_exponential_decay", "first_noise_crossing", "CltReport", "clt_experiment",
    "birkhoff_sums",
]
