"""Ulam-discretised weighted transfer operators and the thermodynamic checks.

Cells of an n x n grid are sampled with stratified jitter; the weight of a
sample is |Df|_{E^u}|^{1-t} evaluated at the cell midpoint.  The factor
|Df|_{E^u}| turns the Markov (Lebesgue-transport) matrix into one whose
spectral radius counts unstable expansion, so that

* t = 1 gives a row-stochastic matrix: P(1) = 0 and the left eigenvector is
  the SRB approximation;
* t = 0 gives log lambda = h_top (exactly log lambda_u for the linear map);
* t > 1 favours the low-expansion cells around the indifferent point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit, prange
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from . import _kernels as K
from .cone_dynamics import log_unstable_jacobian
from .maps import AlmostAnosovMap


class NonConvergence(RuntimeError):
    def __init__(self, msg, residual=math.nan):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class UlamGrid:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs n >= 2")

    @property
    def size(self) -> int:
        return self.n * self.n

    def index(self, i, j):
        return np.asarray(i) * self.n + np.asarray(j)

    def ij(self, k):
        return np.divmod(np.asarray(k), self.n)

    def cell_of(self, xs, ys):
        n = self.n
        i = np.minimum((np.asarray(xs) * n).astype(np.int64), n - 1)
        j = np.minimum((np.asarray(ys) * n).astype(np.int64), n - 1)
        return i * n + j

    def midpoints(self):
        g = (np.arange(self.n) + 0.5) / self.n
        X, Y = np.meshgrid(g, g, indexing="ij")
        return X.ravel(), Y.ravel()

    def cells_meeting_ball(self, r: float) -> np.ndarray:
        """Indices of cells whose closed square meets the torus ball B_r(0)."""
        n = self.n
        lo = np.arange(n) / n
        hi = lo + 1.0 / n
        # distance from 0 to [lo, hi] on the circle, per axis
        dist1 = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(1.0 - hi)))
        dist1 = np.minimum(dist1, np.minimum(np.abs(lo - 1.0), np.abs(hi)))
        D = np.hypot(dist1[:, None], dist1[None, :])
        return np.flatnonzero(D.ravel() < r)


@dataclass
class TransferOperator:
    matrix: sp.csr_matrix
    t: float
    samples_per_cell: int
    grid: UlamGrid
    log_weights: np.ndarray  # per-cell log|Df|_{E^u}| at the midpoint


@njit(cache=True, parallel=True)
def _ulam_targets(n, k_side, P, seed):
    """Target cell of each stratified sample; samples of cell c occupy rows c*k^2 ..."""
    N = n * n
    kk = k_side * k_side
    out = np.empty(N * kk, dtype=np.int64)
    h = 1.0 / n
    for c in prange(N):
        ci = c // n
        cj = c % n
        # per-cell stream: deterministic in (seed, c)
        np.random.seed((seed * 1000003 + c) % 2147483647)
        for a in range(k_side):
            for b in range(k_side):
                x = (ci + (a + np.random.random()) / k_side) * h
                y = (cj + (b + np.random.random()) / k_side) * h
                fx, fy = K.fmap(x, y, P)
                ti = min(int(fx * n), n - 1)
                tj = min(int(fy * n), n - 1)
                out[c * kk + a * k_side + b] = ti * n + tj
    return out


def _targets(f: AlmostAnosovMap, grid: UlamGrid, samples_per_cell: int, seed: int) -> np.ndarray:
    k_side = int(round(math.sqrt(samples_per_cell)))
    if samples_per_cell < 16 or k_side * k_side != samples_per_cell:
        raise ValueError("samples_per_cell must be a perfect square >= 16")
    return _ulam_targets(grid.n, k_side, f.params, int(seed) % 2147483647)


def _assemble(grid: UlamGrid, targets: np.ndarray, spc: int, row_weight: np.ndarray) -> sp.csr_matrix:
    N = grid.size
    rows = np.repeat(np.arange(N), spc)
    M = sp.csr_matrix((np.repeat(row_weight / spc, spc), (rows, targets)), shape=(N, N))
    M.sum_duplicates()
    return M


class UlamBuilder:
    """Caches sample targets and midpoint weights so several t share one sampling."""

    def __init__(self, f: AlmostAnosovMap, grid: UlamGrid, samples_per_cell: int = 64,
                 seed: int | None = None, m: int = 40):
        self.f, self.grid, self.spc = f, grid, samples_per_cell
        self.seed = f.spec.seed if seed is None else seed
        self.targets = _targets(f, grid, samples_per_cell, self.seed)
        xs, ys = grid.midpoints()
        self.log_j = log_unstable_jacobian(f, xs, ys, m)

    def operator(self, t: float) -> TransferOperator:
        w = np.exp((1.0 - t) * self.log_j)
        return TransferOperator(_assemble(self.grid, self.targets, self.spc, w), float(t), self.spc,
                                self.grid, self.log_j)


def build_ulam_operator(f: AlmostAnosovMap, grid: UlamGrid, t: float, samples_per_cell: int = 64,
                        seed: int | None = None, m: int = 40) -> TransferOperator:
    """Weighted Ulam matrix: entry i->j = (1/K) sum over samples of cell i landing in j of J^u(mid_i)^{1-t}."""
    return UlamBuilder(f, grid, samples_per_cell, seed, m).operator(t)


@dataclass
class Eigen:
    value: float
    right: np.ndarray  # normalised to sum 1
    left: np.ndarray  # normalised to sum 1 (a measure for stochastic operators)
    residual: float
    iterations: int
    method: str


def _normalise(v):
    v = np.real(v)
    if v.sum() < 0:
        v = -v
    v = np.where(np.abs(v) < 1e-300, 0.0, v)
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def _residual(M, v, lam):
    return float(np.abs(M @ v - lam * v).sum() / (abs(lam) * np.abs(v).sum()))


def _power(M, tol, max_iter, v0=None):
    v = np.full(M.shape[0], 1.0 / M.shape[0]) if v0 is None else v0.copy()
    lam = 1.0
    for it in range(1, max_iter + 1):
        w = M @ v
        lam = w.sum() / v.sum()
        v = w / w.sum()
        if it % 10 == 0 and _residual(M, v, lam) <= tol:
            return lam, v, it
    return lam, v, max_iter


def leading_eigen(op, tol: float = 1e-8, max_iter: int = 20000, method: str = "arpack") -> Eigen:
    """Perron eigenvalue with right and left eigenvectors.

    ``method="arpack"`` uses implicitly restarted Arnoldi; ``"power"`` runs
    plain power / adjoint iteration.  Raises :class:`NonConvergence` when the
    residual ||L v - lambda v||_1 / lambda stays above ``tol``.
    """
    M = op.matrix if isinstance(op, TransferOperator) else sp.csr_matrix(op)
    MT = M.T.tocsr()
    if method == "arpack":
        its = 0
        # a fixed positive start vector keeps ARPACK (random start by default) reproducible
        v0 = np.full(M.shape[0], 1.0 / M.shape[0])
        try:
            vals, vecs = eigs(M, k=1, which="LM", tol=tol * 1e-2, maxiter=max_iter, v0=v0)
            lvals, lvecs = eigs(MT, k=1, which="LM", tol=tol * 1e-2, maxiter=max_iter, v0=v0)
        except ArpackNoConvergence as exc:
            raise NonConvergence(f"ARPACK did not converge: {exc}") from exc
        lam = float(np.real(vals[0]))
        right, left = _normalise(vecs[:, 0]), _normalise(lvecs[:, 0])
        # one polishing sweep keeps the reported residual honest for the clipped vectors
        right = _normalise(M @ right)
        left = _normalise(MT @ left)
    elif method == "power":
        lam, right, its = _power(M, tol, max_iter)
        _, left, its2 = _power(MT, tol, max_iter)
        its = max(its, its2)
    else:
        raise ValueError("method must be 'arpack' or 'power'")
    res = max(_residual(M, right, lam), _residual(MT, left, lam))
    if not res <= tol:
        raise NonConvergence(f"residual {res:.3g} above tolerance {tol:.3g}", res)
    return Eigen(lam, right, left, res, its, method)


def equilibrium_measure(eig: Eigen) -> np.ndarray:
    """Cell weights left * right, normalised (the Parry-type measure of the weighted chain).

    When the Perron value is degenerate (several closed classes, as happens
    around the indifferent point for t > 1) the two vectors may live on
    different classes; the left vector is returned in that case.
    """
    w = eig.left * eig.right
    if w.sum() <= 1e-12 * eig.left.max() * eig.right.max():
        return eig.left.copy()
    return _normalise(w)


@dataclass
class PressurePoint:
    t: float
    pressure: float
    lam: float
    residual: float
    iterations: int
    measure: np.ndarray = field(repr=False, default=None)  # left * right (equilibrium measure)
    left: np.ndarray = field(repr=False, default=None)  # left Perron vector


@dataclass
class PressureCurve:
    points: list
    grid_n: int
    samples_per_cell: int

    @property
    def ts(self):
        return np.array([p.t for p in self.points])

    @property
    def pressures(self):
        return np.array([p.pressure for p in self.points])

    def at(self, t: float) -> PressurePoint:
        for p in self.points:
            if abs(p.t - t) < 1e-12:
                return p
        raise KeyError(t)

    def rows(self):
        for p in self.points:
            yield p.t, p.pressure, p.lam, p.residual, p.iterations, self.grid_n


def pressure_curve(f: AlmostAnosovMap, t_list, grid_n: int = 256, samples_per_cell: int = 64,
                   seed: int | None = None, tol: float = 1e-8, method: str = "arpack",
                   builder: UlamBuilder | None = None) -> PressureCurve:
    """P(t) = log lambda(L_t) for each t; the equilibrium measures are kept on the points."""
    t_list = [float(t) for t in t_list]
    if t_list != sorted(t_list):
        raise ValueError("t_list must be sorted")
    b = builder or UlamBuilder(f, UlamGrid(grid_n), samples_per_cell, seed)
    pts = []
    for t in t_list:
        e = leading_eigen(b.operator(t), tol=tol, method=method)
        pts.append(PressurePoint(t, math.log(e.value), e.value, e.residual, e.iterations, equilibrium_measure(e),
                                 e.left))
    return PressureCurve(pts, b.grid.n, b.spc)


def punctured_operator(op: TransferOperator, r: float) -> TransferOperator:
    """Copy of ``op`` with the self-loops of the cells meeting B_r(0) removed."""
    M = op.matrix.tolil(copy=True)
    for c in op.grid.cells_meeting_ball(r):
        M[c, c] = 0.0
    return TransferOperator(M.tocsr(), op.t, op.samples_per_cell, op.grid, op.log_weights)


def mass_near_singularity(mu: np.ndarray, r: float) -> float:
    """Total weight of the cells meeting B_r(0); ``mu`` is flat or (n, n)."""
    mu = np.asarray(mu)
    n = mu.shape[0] if mu.ndim == 2 else int(round(math.sqrt(mu.size)))
    return float(mu.ravel()[UlamGrid(n).cells_meeting_ball(r)].sum())


# --------------------------------------------------------------------------
# SRB density


@njit(cache=True, parallel=True)
def _occupation(xs, ys, P, n, steps, burn):
    k = xs.shape[0]
    out = np.zeros((k, n * n))
    for i in prange(k):
        x, y = xs[i], ys[i]
        for _ in range(burn):
            x, y = K.fmap(x, y, P)
        for _ in range(steps):
            a = min(int(x * n), n - 1)
            b = min(int(y * n), n - 1)
            out[i, a * n + b] += 1.0
            x, y = K.fmap(x, y, P)
    return out


def birkhoff_histogram(f: AlmostAnosovMap, grid_n: int, orbit_len: int = 10**7, orbits: int = 16,
                       burn_in: int = 10**4, seed: int | None = None) -> np.ndarray:
    """Cell-occupation frequencies of ``orbits`` generic orbits (total length ``orbit_len``)."""
    seed = f.spec.seed if seed is None else seed
    rng = np.random.default_rng([seed, 31])
    xs, ys = rng.random(orbits), rng.random(orbits)
    occ = _occupation(xs, ys, f.params, int(grid_n), int(orbit_len // orbits), int(burn_in))
    h = occ.sum(axis=0)
    return h / h.sum()


@dataclass
class SrbResult:
    """Both t = 1 branches of the discretised operator.

    ``full_left`` is the left Perron vector of the unmodified L_1.  The
    indifferent point can make it collapse onto the cells at the origin (the
    delta_0 branch); ``punctured`` is the left vector of L_1 with the
    self-loops of the cells meeting B_r0 removed, which cannot be trapped
    there.  ``density`` is the full vector when it is on the SRB branch and
    the punctured one otherwise (``source`` records which).
    """

    density: np.ndarray  # (n, n) cell weights, SRB branch
    eigen: Eigen  # punctured operator
    full_left: np.ndarray
    full_lambda: float
    source: str
    birkhoff_tv: float | None = None

    @property
    def punctured_lambda(self) -> float:
        return self.eigen.value

    @property
    def full_branch(self) -> str:
        return _branch(self.full_left)


def _branch(mu) -> str:
    return "delta0" if mass_near_singularity(mu, 0.01) > 0.5 else "srb"


def srb_density(f: AlmostAnosovMap, grid_n: int = 128, samples_per_cell: int = 64, seed: int | None = None,
                cross_check_len: int | None = None, tol: float = 1e-8,
                builder: UlamBuilder | None = None) -> SrbResult:
    """SRB approximation at t = 1, optionally cross-checked against a Birkhoff histogram (total variation)."""
    b = builder or UlamBuilder(f, UlamGrid(grid_n), samples_per_cell, seed)
    op = b.operator(1.0)
    full = leading_eigen(op, tol=tol)
    pe = leading_eigen(punctured_operator(op, f.spec.r0), tol=tol)
    source = "full" if _branch(full.left) == "srb" else "punctured"
    mu = full.left if source == "full" else pe.left
    tv = None
    if cross_check_len:
        bh = birkhoff_histogram(f, b.grid.n, cross_check_len, seed=seed)
        tv = 0.5 * float(np.abs(bh - mu).sum())
    n = b.grid.n
    return SrbResult(mu.reshape(n, n), pe, full.left.reshape(n, n), full.value, source, tv)


def lyapunov_of_measure(mu: np.ndarray, log_j: np.ndarray) -> float:
    """sum over cells of weight * log|Df|_{E^u}| at the cell midpoint."""
    return float(np.dot(np.asarray(mu).ravel(), log_j))


# --------------------------------------------------------------------------
# entropy


@njit(cache=True)
def _recurrences(x, y, P, ns, cap, q):
    """First recurrence times R_n of the length-n itinerary of (x, y), for ascending ns.

    Symbols are generated lazily until every R_n is found or ``cap``
    symbols have been produced; unresolved entries are -1.
    """
    nmax = ns[-1]
    sym = np.empty(cap + nmax, dtype=np.int64)
    for k in range(nmax):
        sym[k] = min(int(x * q), q - 1) * q + min(int(y * q), q - 1)
        x, y = K.fmap(x, y, P)
    out = np.full(ns.shape[0], -1, dtype=np.int64)
    j = 0  # first unresolved n
    filled = nmax
    for k in range(1, cap):
        # make sym[k : k + nmax] available
        while filled < k + nmax:
            sym[filled] = min(int(x * q), q - 1) * q + min(int(y * q), q - 1)
            x, y = K.fmap(x, y, P)
            filled += 1
        while j < ns.shape[0]:
            n = ns[j]
            ok = True
            for i in range(n):
                if sym[k + i] != sym[i]:
                    ok = False
                    break
            if not ok:
                break
            out[j] = k
            j += 1
        if j == ns.shape[0]:
            break
    return out


@njit(cache=True, parallel=True)
def _recurrence_many(xs, ys, P, ns, cap, q):
    t = xs.shape[0]
    out = np.empty((t, ns.shape[0]), dtype=np.int64)
    for i in prange(t):
        out[i] = _recurrences(xs[i], ys[i], P, ns, cap, q)
    return out


@dataclass
class EntropyEstimate:
    h: float
    per_n: dict  # n -> mean log R_n
    lost: int  # trials whose recurrence fell outside the buffer
    partition: int


def entropy_from_recurrences(ns, R) -> tuple[float, dict]:
    ns = np.asarray(ns)
    logs = np.where(R > 0, np.log(np.maximum(R, 1)), np.nan)
    means = np.nanmean(logs, axis=0)
    per_n = {int(n): float(m) for n, m in zip(ns, means)}
    if len(ns) == 1:
        return float(means[0] / ns[0]), per_n
    slope = np.polyfit(ns.astype(float), means, 1)[0]
    return float(max(slope, 0.0)), per_n


def entropy_estimate(f: AlmostAnosovMap, starts, ns=tuple(range(4, 11)), partition: int = 2,
                     buffer: int = 10**6) -> EntropyEstimate:
    """Return-time (Ornstein-Weiss) entropy of a partition coding.

    For each start x, R_n is the first recurrence time of the length-n
    itinerary through a ``partition`` x ``partition`` cell coding.  The
    estimate is the slope of mean log R_n against n, which removes the
    O(1) offset that a single (log R_n)/n carries at desk-scale n.
    """
    xs, ys = (np.asarray(s, float) for s in starts)
    if xs.size < 10:
        raise ValueError("need at least 10 trials")
    ns = np.sort(np.asarray(ns, dtype=np.int64))
    R = _recurrence_many(np.ascontiguousarray(xs), np.ascontiguousarray(ys), f.params, ns, int(buffer),
                         int(partition))
    h, per_n = entropy_from_recurrences(ns, R)
    return EntropyEstimate(h, per_n, int((R < 0).sum()), partition)


@dataclass
class MargulisRuelleReport:
    label: str
    entropy: float
    lyapunov: float
    inequality_ok: bool
    pesin_gap: float | None  # |h - lambda| / lambda when the Pesin equality is tested
    pesin_ok: bool | None

    @property
    def passed(self) -> bool:
        return self.inequality_ok and (self.pesin_ok is not False)


def margulis_ruelle_check(entropy: float, lyapunov: float, label: str = "srb", pesin: bool = True,
                          slack: float = 0.05, pesin_tol: float = 0.15) -> MargulisRuelleReport:
    ok = entropy <= lyapunov + slack
    gap = ok_p = None
    if pesin:
        gap = abs(entropy - lyapunov) / lyapunov if lyapunov > 0 else math.inf
        ok_p = gap <= pesin_tol
    return MargulisRuelleReport(label, entropy, lyapunov, ok, gap, ok_p)


def richardson_table(f: AlmostAnosovMap, t: float = 0.0, grids=(64, 128, 256), samples_per_cell: int = 64,
                     seed: int | None = None) -> dict:
    """P(t) at several resolutions (discretisation bias)."""
    return {n: math.log(leading_eigen(build_ulam_operator(f, UlamGrid(n), t, samples_per_cell, seed)).value)
            for n in grids}


__all__ = [
    "UlamGrid", "TransferOperator", "UlamBuilder", "build_ulam_operator", "leading_eigen", "Eigen",
    "equilibrium_measure", "PressureCurve", "PressurePoint", "pressure_curve", "punctured_operator",
    "mass_near_singularity", "srb_density", "SrbResult", "birkhoff_histogram", "entropy_estimate",
    "EntropyEstimate", "margulis_ruelle_check", "MargulisRuelleReport", "lyapunov_of_measure",
    "NonConvergence", "richardson_table", "entropy_from_recurrences",
]
