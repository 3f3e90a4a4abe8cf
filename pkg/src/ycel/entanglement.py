"""Quadrature covariances and tripartite variance witnesses.

Conventions.  Quadratures are x_j = a_j + a_j^dag and p_j = -i(a_j -
a_j^dag), so [x, p] = 2i and the vacuum variance of each quadrature is 1.
The covariance matrix is ordered (x1, p1, x2, p2, x3, p3).

Witnesses.  For a bipartition m|(k, l) the test combinations are
u = sum_j h_j x_j and v = sum_j g_j p_j; any state separable across that
bipartition satisfies V(u) + V(v) >= 2(|h_m g_m| + |h_k g_k + h_l g_l|),
so pushing the variance sum below the bound certifies inseparability of
that cut.  The default gain choices pair the modes whose correlations the
model actually produces: an x-difference / p-sum pair for the squeezing
type correlations of modes (1,2) and (1,3), an x-difference /
p-difference pair for the beam-splitter type correlation of modes (2,3).
A state is reported fully inseparable only when all three bipartitions
are violated at once; callers wanting a stricter notion can apply their
own rule to the per-bipartition records.

First moments vanish from vacuum in this model, so variances equal raw
second moments; means are still subtracted defensively when supplied.
The subtraction assumes the pair moments outside the tracked set vanish,
which holds here but would not for a coherently displaced state.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    SecondMoments,
    drift_matrix,
    evolve_second_moments,
    is_stable,
    steady_state_moments,
)
from .errors import DegenerateWitnessError, YcelError
from .model import Prefactors, prefactors_from_inversions, validate_physical

__all__ = [
    "SubVacuumWarning",
    "CovarianceMatrix",
    "Bipartition",
    "BIPARTITIONS",
    "WitnessRecord",
    "VlfReport",
    "covariance_from_moments",
    "vlf_evaluate",
    "optimize_gains",
    "SweepPoint",
    "sweep",
]

_VIOLATION_MARGIN = 1e-12
_X_SLOTS = (0, 2, 4)
_P_SLOTS = (1, 3, 5)


class SubVacuumWarning(UserWarning):
    """A quadrature variance fell below the vacuum floor.

    The amplification in this model never squeezes a single mode, so a
    sub-vacuum diagonal entry means the moments came from somewhere
    suspect (for instance the literal-coefficient backend, whose loss
    mode goes negative).
    """


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """6x6 symmetric quadrature covariance over (x1, p1, x2, p2, x3, p3)."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float, copy=True)
        if sigma.shape != (6, 6):
            raise ValueError("covariance must be 6x6")
        if not np.isfinite(sigma).all():
            raise ValueError("covariance entries must be finite")
        asym = float(np.max(np.abs(sigma - sigma.T)))
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(sigma)))):
            raise ValueError(f"covariance asymmetry {asym:.3e} too large")
        sigma = 0.5 * (sigma + sigma.T)
        low = float(np.min(np.diag(sigma)))
        if low < 1.0 - 1e-9:
            warnings.warn(
                f"quadrature variance {low:.6g} below the vacuum floor",
                SubVacuumWarning,
                stacklevel=3,
            )
        object.__setattr__(self, "sigma", sigma)

    @property
    def x_block(self) -> np.ndarray:
        return self.sigma[np.ix_(_X_SLOTS, _X_SLOTS)]

    @property
    def p_block(self) -> np.ndarray:
        return self.sigma[np.ix_(_P_SLOTS, _P_SLOTS)]


def covariance_from_moments(
    m: SecondMoments, first_moments=None
) -> CovarianceMatrix:
    """Covariance matrix of the Gaussian state with the given moments.

    first_moments, when given, is the complex 3-vector of <a_j>; the
    quadrature means it implies are subtracted.  For the vacuum-start
    dynamics of this model they are identically zero.
    """
    if not isinstance(m, SecondMoments):
        raise TypeError("m must be a SecondMoments value")
    sigma = np.eye(6)
    for slot, n in zip((0, 1, 2), (m.n1, m.n2, m.n3)):
        sigma[2 * slot, 2 * slot] += 2.0 * n
        sigma[2 * slot + 1, 2 * slot + 1] += 2.0 * n
    # beam-splitter type correlation: same sign on x and p
    sigma[4, 2] = sigma[2, 4] = 2.0 * m.c32
    sigma[5, 3] = sigma[3, 5] = 2.0 * m.c32
    # squeezing type correlations: opposite signs on x and p
    sigma[4, 0] = sigma[0, 4] = 2.0 * m.c31
    sigma[5, 1] = sigma[1, 5] = -2.0 * m.c31
    sigma[2, 0] = sigma[0, 2] = 2.0 * m.c21
    sigma[3, 1] = sigma[1, 3] = -2.0 * m.c21
    if first_moments is not None:
        alpha = np.asarray(first_moments, dtype=complex)
        if alpha.shape != (3,):
            raise ValueError("first_moments must be a 3-vector")
        mean = np.empty(6)
        mean[0::2] = 2.0 * alpha.real
        mean[1::2] = 2.0 * alpha.imag
        sigma -= np.outer(mean, mean)
    return CovarianceMatrix(sigma)


@dataclass(frozen=True)
class Bipartition:
    """One way of splitting a single mode off from the other two."""

    name: str
    lone: int
    partners: tuple
    default_h: tuple
    default_g: tuple


BIPARTITIONS = (
    Bipartition("1|23", 0, (1, 2), (0.0, 1.0, -1.0), (0.0, 1.0, -1.0)),
    Bipartition("2|13", 1, (0, 2), (1.0, -1.0, 0.0), (1.0, 1.0, 0.0)),
    Bipartition("3|12", 2, (0, 1), (1.0, 0.0, -1.0), (1.0, 0.0, 1.0)),
)


@dataclass(frozen=True)
class WitnessRecord:
    name: str
    h: tuple
    g: tuple
    lhs: float
    bound: float
    ratio: float
    violated: bool


@dataclass(frozen=True)
class VlfReport:
    """Per-bipartition witness outcomes plus the all-three classification."""

    records: tuple

    @property
    def fully_inseparable(self) -> bool:
        return all(r.violated for r in self.records)

    def record(self, name: str) -> WitnessRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)


def _bound(bip: Bipartition, h, g) -> float:
    k, l = bip.partners
    return 2.0 * (abs(h[bip.lone] * g[bip.lone]) + abs(h[k] * g[k] + h[l] * g[l]))


def _witness(xb, pb, bip, h, g) -> WitnessRecord:
    h = tuple(float(v) for v in h)
    g = tuple(float(v) for v in g)
    if not any(h) or not any(g):
        raise DegenerateWitnessError(
            f"bipartition {bip.name}: gain vector is identically zero"
        )
    hv = np.asarray(h)
    gv = np.asarray(g)
    lhs = float(hv @ xb @ hv + gv @ pb @ gv)
    bound = _bound(bip, h, g)
    if bound <= 0.0:
        raise DegenerateWitnessError(
            f"bipartition {bip.name}: gains {h}, {g} give a zero bound"
        )
    ratio = lhs / bound
    return WitnessRecord(
        name=bip.name,
        h=h,
        g=g,
        lhs=lhs,
        bound=bound,
        ratio=ratio,
        violated=lhs < bound - _VIOLATION_MARGIN,
    )


def vlf_evaluate(cov: CovarianceMatrix, gains=None) -> VlfReport:
    """Evaluate all three bipartition witnesses at fixed gains.

    gains maps a bipartition name to an (h, g) pair of 3-vectors; missing
    entries use the defaults described in the module docstring.
    """
    if not isinstance(cov, CovarianceMatrix):
        raise TypeError("cov must be a CovarianceMatrix")
    gains = dict(gains or {})
    unknown = set(gains) - {b.name for b in BIPARTITIONS}
    if unknown:
        raise DegenerateWitnessError(f"unknown bipartition names: {sorted(unknown)}")
    xb, pb = cov.x_block, cov.p_block
    records = []
    for bip in BIPARTITIONS:
        h, g = gains.get(bip.name, (bip.default_h, bip.default_g))
        records.append(_witness(xb, pb, bip, h, g))
    return VlfReport(records=tuple(records))


def _quad(block, v) -> float:
    """v . block . v for a 3x3 tuple-of-tuples block (hot path)."""
    b0, b1, b2 = block
    return (
        v[0] * (b0[0] * v[0] + b0[1] * v[1] + b0[2] * v[2])
        + v[1] * (b1[0] * v[0] + b1[1] * v[1] + b1[2] * v[2])
        + v[2] * (b2[0] * v[0] + b2[1] * v[1] + b2[2] * v[2])
    )


def _golden_refine(func, lo, hi, iters=60):
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = func(d)
    mid = 0.5 * (a + b)
    return mid, func(mid)


def _line_minimum(func, center):
    """Deterministic 1-d search: coarse scan, then golden-section refine."""
    span = 2.0 * max(1.0, abs(center))
    lo_edge = center - span
    step = 2.0 * span / 80.0
    grid = [lo_edge + i * step for i in range(81)]
    values = [func(t) for t in grid]
    best = min(range(81), key=values.__getitem__)
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, 80)]
    t, val = _golden_refine(func, lo, hi)
    if values[best] < val:
        return grid[best], values[best]
    return t, val


def _optimize_bipartition(xb, pb, bip) -> WitnessRecord:
    xq = tuple(tuple(float(v) for v in row) for row in xb)
    pq = tuple(tuple(float(v) for v in row) for row in pb)
    m, (k, l) = bip.lone, bip.partners

    def ratio(h, g):
        bound = 2.0 * (abs(h[m] * g[m]) + abs(h[k] * g[k] + h[l] * g[l]))
        if bound <= 1e-12:
            return math.inf
        return (_quad(xq, h) + _quad(pq, g)) / bound

    h = list(bip.default_h)
    g = list(bip.default_g)
    best = ratio(h, g)
    best_h, best_g = tuple(h), tuple(g)

    def consider(value):
        # keep-best bookkeeping shared by every candidate probe
        nonlocal best, best_h, best_g
        if value < best - 1e-15:
            best = value
            best_h, best_g = tuple(h), tuple(g)

    for _ in range(40):
        before = best
        for vec, block, partner in ((h, xq, g), (g, pq, h)):
            for j in range(3):
                def func(t, vec=vec, j=j):
                    old = vec[j]
                    vec[j] = t
                    out = ratio(h, g)
                    vec[j] = old
                    return out

                t, val = _line_minimum(func, vec[j])
                vec[j] = t
                consider(val)
                if partner[j] == 0.0 and block[j][j] > 0.0:
                    # coordinate absent from the bound: the ratio is a pure
                    # quadratic in it with a closed-form stationary point
                    others = sum(block[j][i] * vec[i] for i in range(3) if i != j)
                    vec[j] = -others / block[j][j]
                    consider(ratio(h, g))
                vec[j] = best_h[j] if vec is h else best_g[j]
        h, g = list(best_h), list(best_g)
        if before - best < 1e-13:
            break
    return _witness(xb, pb, bip, best_h, best_g)


def optimize_gains(cov: CovarianceMatrix) -> VlfReport:
    """Minimise each bipartition's variance ratio over its six gains.

    Coordinate descent from the default gains with deterministic line
    searches; the best visited point is kept, so the returned ratio never
    exceeds the default-gain ratio.
    """
    if not isinstance(cov, CovarianceMatrix):
        raise TypeError("cov must be a CovarianceMatrix")
    xb, pb = cov.x_block, cov.p_block
    return VlfReport(
        records=tuple(_optimize_bipartition(xb, pb, bip) for bip in BIPARTITIONS)
    )


@dataclass(frozen=True)
class SweepPoint:
    """One grid point of an inversion sweep.

    moments and report are None when the point failed (failure holds the
    reason); an unstable point in steady mode is recorded, not raised.
    """

    eta1: float
    eta2: float
    prefactors: Prefactors | None
    stable: bool
    margin: float
    moments: SecondMoments | None
    report: VlfReport | None
    failure: str | None = None


def _worker_count(workers) -> int:
    if workers is not None:
        count = int(workers)
    else:
        env = os.environ.get("YCEL_THREADS", "")
        count = int(env) if env.strip() else min(8, os.cpu_count() or 1)
    if count < 1:
        raise ValueError("worker count must be at least 1")
    return count


def _sweep_point(eta1, eta2, gain_scale, kappa, backend, at_time, optimize):
    pref = prefactors_from_inversions(eta1, eta2, gain_scale=gain_scale)
    report = is_stable(drift_matrix(pref, kappa))
    try:
        if at_time is None:
            moments = steady_state_moments(pref, kappa, backend=backend)
        else:
            moments = evolve_second_moments(
                pref, kappa, at_time, backend=backend
            )
    except YcelError as exc:
        return SweepPoint(
            eta1=eta1,
            eta2=eta2,
            prefactors=pref,
            stable=report.stable,
            margin=report.margin,
            moments=None,
            report=None,
            failure=str(exc),
        )
    cov = covariance_from_moments(moments)
    vlf = optimize_gains(cov) if optimize else vlf_evaluate(cov)
    return SweepPoint(
        eta1=eta1,
        eta2=eta2,
        prefactors=pref,
        stable=report.stable,
        margin=report.margin,
        moments=moments,
        report=vlf,
    )


def sweep(
    eta1_values,
    eta2_values,
    *,
    gain_scale: float,
    kappa: float = 1.0,
    backend: str = "ehrenfest",
    at_time: float | None = None,
    optimize: bool = True,
    workers: int | None = None,
):
    """Witness evaluation over a grid of preparations.

    The grid is the cartesian product of the two coordinate lists,
    restricted to the physical triangle; points outside it are skipped
    entirely.  at_time=None evaluates steady states (unstable points are
    recorded with a failure note), a finite at_time evaluates the
    transient state there.  Points are computed concurrently and returned
    in grid order (eta1 outer, eta2 inner).  workers defaults to the
    YCEL_THREADS environment variable when set.
    """
    grid = [
        (float(e1), float(e2))
        for e1 in eta1_values
        for e2 in eta2_values
        if validate_physical(float(e1), float(e2)).valid
    ]
    if not grid:
        return ()
    count = min(_worker_count(workers), len(grid))
    if count == 1:
        points = [
            _sweep_point(e1, e2, gain_scale, kappa, backend, at_time, optimize)
            for e1, e2 in grid
        ]
    else:
        with ThreadPoolExecutor(max_workers=count) as pool:
            futures = [
                pool.submit(
                    _sweep_point, e1, e2, gain_scale, kappa, backend, at_time, optimize
                )
                for e1, e2 in grid
            ]
            points = [f.result() for f in futures]
    return tuple(points)
