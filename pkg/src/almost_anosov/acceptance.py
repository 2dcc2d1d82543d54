"""The thirteen acceptance criteria as callable checks.

Each ``ac*`` function runs its experiment at the stated scale and returns an
:class:`ACResult`.  The test suite and the ``all`` CLI command both go
through :func:`run_acceptance`.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import homotopy as H
from . import stats_lab as S
from . import thermo as T
from . import tower as TW
from ._kernels import orbit
from .cone_dynamics import lyapunov_exponent
from .maps import ORIGIN, AlmostAnosovMap, TorusPoint, sweep_hyperbolicity, torus_distance

LOG_LAMBDA = math.log((3 + math.sqrt(5)) / 2)
DIRAC_TS = (1.0, 1.2, 1.5, 2.0)
MONOTONE_SLACK = 1e-6


@dataclass
class ACResult:
    id: str
    title: str
    passed: bool
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"{self.id} {'PASS' if self.passed else 'FAIL'} {self.title}: {vals}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        for r in res if isinstance(res, tuple) else (res,):
            r.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def ac1(f: AlmostAnosovMap) -> ACResult:
    err = float(np.abs(f.differential(ORIGIN) - np.eye(2)).max())
    return ACResult("AC-1", "Df(0) = I", err <= 1e-12, {"max_abs_error": err})


@_timed
def ac2(f: AlmostAnosovMap, n: int = 10**4) -> ACResult:
    rng = f.rng(101)
    xs, ys = rng.random(4 * n), rng.random(4 * n)
    keep = torus_distance((xs, ys)) >= f.spec.r1
    xs, ys = xs[keep][:n], ys[keep][:n]
    fx, fy = f.apply_xy(xs, ys)
    A = f.A
    lx, ly = np.mod(A[0, 0] * xs + A[0, 1] * ys, 1.0), np.mod(A[1, 0] * xs + A[1, 1] * ys, 1.0)
    err = float(torus_distance((fx, fy), (lx, ly)).max())
    return ACResult("AC-2", "linear outside B_r1", err <= 1e-12, {"points": int(xs.size), "max_error": err})


@_timed
def ac3(f: AlmostAnosovMap) -> ACResult:
    rep = sweep_hyperbolicity(f, 512, 1e-3)
    return ACResult("AC-3", "hyperbolicity sweep 512^2", rep.passed,
                    {"checked": rep.checked, "failures": rep.failures, "min_det": rep.min_det})


@_timed
def ac4(f: AlmostAnosovMap, n: int = 10**6) -> ACResult:
    rng = f.rng(104)
    lam = lyapunov_exponent(f, TorusPoint(*rng.random(2)), n)
    rel = abs(lam - LOG_LAMBDA) / LOG_LAMBDA
    return ACResult("AC-4", "Lyapunov exponent", rel <= 0.10, {"lambda_u": lam, "relative_error": rel})


@_timed
def ac5(f: AlmostAnosovMap, grid_n: int = 256, samples_per_cell: int = 64) -> ACResult:
    b = T.UlamBuilder(f, T.UlamGrid(grid_n), samples_per_cell)
    curve = T.pressure_curve(f, [0.0, *DIRAC_TS], builder=b)
    p0 = curve.at(0.0).pressure
    srb = T.srb_density(f, builder=b)
    p1 = math.log(srb.punctured_lambda)
    masses = [T.mass_near_singularity(curve.at(t).left, f.spec.r0) for t in DIRAC_TS]
    trend = all(m2 >= m1 - MONOTONE_SLACK for m1, m2 in zip(masses, masses[1:]))
    ok_a = abs(p0 - LOG_LAMBDA) / LOG_LAMBDA <= 0.05
    ok_b = abs(p1) <= 0.02
    ok_c = trend and masses[DIRAC_TS.index(1.5)] >= 0.5
    return ACResult("AC-5", "pressure regimes", ok_a and ok_b and ok_c,
                    {"P0": p0, "P1_srb": p1, "P1_full": curve.at(1.0).pressure, "dirac_mass": masses,
                     "a": ok_a, "b": ok_b, "c": ok_c})


@_timed
def ac6_7(f: AlmostAnosovMap, samples: int = 10**5, n_max: int = 200):
    rect = TW.Rectangle.default(f)
    hist = TW.return_time_histogram(f, rect, samples, n_max)
    fit = TW.fit_tail_rate(hist, f.log_lambda_u)
    g = TW.check_arithmetic_condition(hist)
    r6 = ACResult("AC-6", "tail rate", fit.r_squared >= 0.8 and fit.h_fit < LOG_LAMBDA,
                  {"h_fit": fit.h_fit, "r_squared": fit.r_squared, "n_range": fit.n_range,
                   "timeout_fraction": hist.timeout_fraction})
    r7 = ACResult("AC-7", "arithmetic condition", g == 1, {"gcd": g, "distinct_times": len(hist.counts)})
    return r6, r7


@_timed
def ac8(f: AlmostAnosovMap, pairs: int = 1000, n_compositions: int = 8) -> ACResult:
    rect = TW.Rectangle.default(f)
    sp = TW.stable_pairs(f, rect, pairs)
    con = TW.check_contraction(f, rect, sp)
    dis = TW.check_distortion(f, rect, sp, n_compositions)
    ok = con.worst_a < 1 and dis.fit_ok and dis.kappa < 1
    return ACResult("AC-8", "(Y3) contraction / (Y4) distortion", bool(ok),
                    {"worst_a": con.worst_a, "kappa": dis.kappa, "c": dis.c, "suprema": dis.suprema.tolist()})


@_timed
def ac9(f: AlmostAnosovMap, n: int = 1000, trials: int = 10**4) -> ACResult:
    r = S.clt_experiment(f, "srb", S.cos_x(), n, trials)
    return ACResult("AC-9", "CLT", r.ks_distance < 0.05 and r.sigma > 0,
                    {"sigma": r.sigma, "ks_distance": r.ks_distance})


@_timed
def ac10(f: AlmostAnosovMap, orbit_len: int = 10**6) -> ACResult:
    c = S.correlation_series(f, "srb", S.cos_x(), S.cos_x(), 30, orbit_len)
    fit = S.fit_exponential_decay(c, (1, 30))
    fitted = fit.status == "fit" and fit.kappa < 1 and fit.r_squared >= 0.9
    tail = np.abs(c.C[10:31])
    to_noise = bool(tail.max() <= c.noise_floor)
    return ACResult("AC-10", "correlation decay", fitted or to_noise,
                    {"status": fit.status, "kappa": fit.kappa, "r_squared": fit.r_squared,
                     "max_tail_abs_C": float(tail.max()), "noise_floor": c.noise_floor,
                     "first_noise_crossing": S.first_noise_crossing(c)})


@_timed
def ac11(f: AlmostAnosovMap, n: int = 10**4) -> ACResult:
    rng = f.rng(111)
    xs, ys = rng.random(n), rng.random(n)
    fx, fy = f.apply_xy(xs, ys)
    ix, iy = f.inverse_xy(fx, fy, strict=False)
    err = float(torus_distance((ix, iy), (xs, ys)).max())
    return ACResult("AC-11", "inverse round trip", err <= 1e-10, {"max_error": err})


@_timed
def ac12(f: AlmostAnosovMap, fractions=(0.2, 0.5, 1.0), grid_n: int = 256) -> ACResult:
    checks = H.homotopy_sweep(f, fractions, grid_n)
    dists = [c.c0_distance for c in checks]
    mono = all(d1 <= d2 for d1, d2 in zip(dists, dists[1:]))
    ok = all(c.all_hyperbolic for c in checks) and mono
    return ACResult("AC-12", "Anosov homotopy", ok,
                    {"epsilon": [c.epsilon for c in checks], "c0_distance": dists,
                     "all_hyperbolic": [c.all_hyperbolic for c in checks]})


@_timed
def ac13(f: AlmostAnosovMap, trials: int = 2000, grid_n: int = 128) -> ACResult:
    srb = T.srb_density(f, grid_n)
    b = T.UlamBuilder(f, T.UlamGrid(grid_n), 16)
    lam_srb = T.lyapunov_of_measure(srb.density, b.log_j)
    rng = f.rng(113)
    x0, y0 = f.iterate_xy([rng.random()], [rng.random()], 10**4)
    xs, ys = orbit(x0[0], y0[0], f.params, trials * 50)
    h_srb = T.entropy_estimate(f, (xs[::50], ys[::50])).h
    h_dirac = T.entropy_estimate(f, (np.zeros(trials), np.zeros(trials))).h
    mr_srb = T.margulis_ruelle_check(h_srb, lam_srb, "srb", pesin=True)
    mr_dirac = T.margulis_ruelle_check(h_dirac, 0.0, "dirac", pesin=False)
    return ACResult("AC-13", "Margulis-Ruelle / Pesin", mr_srb.passed and mr_dirac.passed,
                    {"h_srb": h_srb, "lambda_srb": lam_srb, "pesin_gap": mr_srb.pesin_gap, "h_dirac": h_dirac})


def run_acceptance(f: AlmostAnosovMap | None = None, only=None, log=None) -> list[ACResult]:
    """Run the criteria in pipeline order; ``only`` restricts to a set of ids."""
    f = f or AlmostAnosovMap()
    plan = [("AC-1", ac1), ("AC-2", ac2), ("AC-3", ac3), ("AC-11", ac11), ("AC-12", ac12), ("AC-4", ac4),
            ("AC-6", ac6_7), ("AC-8", ac8), ("AC-5", ac5), ("AC-13", ac13), ("AC-10", ac10), ("AC-9", ac9)]
    out = []
    for key, fn in plan:
        if only and key not in only and not (key == "AC-6" and "AC-7" in only):
            continue
        res = fn(f)
        for r in res if isinstance(res, tuple) else (res,):
            if only and r.id not in only:
                continue
            out.append(r)
            if log:
                log(r.line())
    return sorted(out, key=lambda r: int(r.id.split("-")[1]))


def as_dict(r: ACResult) -> dict:
    d = asdict(r)
    d["values"] = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in d["values"].items()}
    return d
