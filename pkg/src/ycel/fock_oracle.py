"""Brute-force reference integrator for the three-mode master equation.

The moment engine in :mod:`ycel.dynamics` evolves six numbers under a
closed linear system.  This module is its referee: it integrates the full
density matrix on a truncated Fock space with no closure assumption and
reads arbitrary first and second moments back out, so every claim the
moment engine makes can be checked against an independent discretisation
of the same generator.

Basis layout.  Each mode keeps photon numbers 0..n_max; a basis ket is
|n1 n2 n3> flattened row-major (mode 3 varies fastest).  Density matrices
are dense complex arrays of dimension (n_max + 1)**3.

Charge restriction.  Every term of the generator shifts the ket and the
bra occupation difference w = n1 - n2 - n3 by the same amount, so the
difference q = w_ket - w_bra between the two sides of each density-matrix
element is conserved exactly, truncation included.  A run started from a
state whose nonzero elements all carry charges in some set Q never leaves
the sectors in Q; vacuum and Fock starts live entirely in q = 0.
``integrate`` therefore marches only the populated sectors by default.
This is an exact reindexing of the dense generator, not an approximation,
and a unit test pins the restricted march to a dense reference, step for
step.  Pass ``restrict=False`` to march every sector regardless.

Positivity.  The gain and cross couplings here satisfy the product rules
cross32**2 = gain3*gain2 (and cyclic), which makes the whole generator a
dissipator in standard form; exact evolution preserves positivity.
Integration and truncation error can still push eigenvalues slightly
negative, so runs report the smallest final eigenvalue when asked
(``track_spectrum=True``) and warn below -1e-8 rather than failing.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .dynamics import SecondMoments
from .errors import (
    ConfigurationError,
    ConsistencyError,
    IntegrationError,
    TruncationError,
)
from .model import Prefactors

__all__ = [
    "FockConfig",
    "DensityState",
    "MomentTable",
    "OracleRun",
    "mode_annihilators",
    "master_equation_terms",
    "liouvillian_apply",
    "moments_from_state",
    "integrate",
]

# Largest dimension for which final states are embedded back to dense form.
_EMBED_LIMIT = 1331  # (n_max + 1)**3 at n_max = 10

# Guard against runs whose dense density matrix would not fit in memory.
_N_MAX_LIMIT = 16

_TRACE_TOL = 1e-6
_CONVERGENCE_TOL = 1e-6
_DIVERGENCE_PEAK = 10.0


@dataclass(frozen=True)
class FockConfig:
    """Discretisation knobs for a brute-force run.

    n_max is the per-mode photon cutoff, dt the fixed integrator step,
    t_final the horizon, and edge_tol the largest population allowed in
    any edge Fock layer (occupation == n_max in some mode) before the
    run refuses to continue.
    """

    n_max: int = 5
    dt: float = 0.01
    t_final: float = 20.0
    edge_tol: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.n_max, int) or isinstance(self.n_max, bool):
            raise ConfigurationError("n_max must be an integer")
        if self.n_max < 1:
            raise ConfigurationError("n_max must be at least 1")
        if self.n_max > _N_MAX_LIMIT:
            raise ConfigurationError(
                f"n_max={self.n_max} exceeds the supported limit {_N_MAX_LIMIT} "
                f"(dense states of dimension (n_max+1)**3 stop being practical)"
            )
        if not (self.dt > 0.0) or not math.isfinite(self.dt):
            raise ConfigurationError("dt must be positive and finite")
        if not (self.t_final >= 0.0) or not math.isfinite(self.t_final):
            raise ConfigurationError("t_final must be nonnegative and finite")
        if not (0.0 < self.edge_tol < 1.0):
            raise ConfigurationError("edge_tol must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** 3


@dataclass(frozen=True, eq=False)
class DensityState:
    """A validated density matrix on the truncated three-mode space."""

    rho: np.ndarray = field(repr=False)
    n_max: int = -1  # inferred from the matrix when left at the default

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex, copy=True)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ConfigurationError("rho must be a square matrix")
        n_max = _infer_n_max(rho.shape[0])
        if self.n_max >= 0 and self.n_max != n_max:
            raise ConfigurationError(
                f"matrix dimension {rho.shape[0]} does not match n_max={self.n_max}"
            )
        scale = max(1.0, float(np.max(np.abs(rho))) if rho.size else 1.0)
        herm = float(np.max(np.abs(rho - rho.conj().T)))
        if herm > 1e-10 * scale:
            raise ConsistencyError(f"hermiticity residue {herm:.3e} too large")
        tr = complex(np.trace(rho))
        if abs(tr - 1.0) > 1e-9:
            raise ConsistencyError(f"trace {tr:.12g} is not 1 within 1e-9")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n_max", n_max)

    @staticmethod
    def vacuum(n_max: int) -> "DensityState":
        dim = (n_max + 1) ** 3
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return DensityState(rho, n_max)

    @staticmethod
    def fock(n_max: int, occupations) -> "DensityState":
        """Pure number state |n1 n2 n3><n1 n2 n3|."""
        occ = tuple(int(n) for n in occupations)
        if len(occ) != 3:
            raise ConfigurationError("occupations must have three entries")
        if any(n < 0 or n > n_max for n in occ):
            raise ConfigurationError(
                f"occupations {occ} outside the 0..{n_max} cutoff"
            )
        side = n_max + 1
        pos = (occ[0] * side + occ[1]) * side + occ[2]
        dim = side**3
        rho = np.zeros((dim, dim), dtype=complex)
        rho[pos, pos] = 1.0
        return DensityState(rho, n_max)


def _infer_n_max(dim: int) -> int:
    side = round(dim ** (1.0 / 3.0))
    if side < 2 or side**3 != dim:
        raise ConfigurationError(
            f"dimension {dim} is not (n_max+1)**3 for any n_max >= 1"
        )
    return side - 1


@lru_cache(maxsize=8)
def mode_annihilators(n_max: int):
    """Sparse annihilators (a1, a2, a3) on the flattened product space."""
    if not isinstance(n_max, int) or n_max < 1:
        raise ConfigurationError("n_max must be an integer >= 1")
    side = n_max + 1
    single = sp.diags(np.sqrt(np.arange(1.0, side)), offsets=1, format="csr")
    eye = sp.identity(side, format="csr")
    a1 = sp.kron(sp.kron(single, eye), eye, format="csr")
    a2 = sp.kron(sp.kron(eye, single), eye, format="csr")
    a3 = sp.kron(sp.kron(eye, eye), single, format="csr")
    return a1, a2, a3


def master_equation_terms(pref: Prefactors, kappa: float, n_max: int):
    """The generator, grouped by coupling, as (coefficient, left, right) triples.

    Each triple encodes coefficient * left @ rho @ right with None standing
    for the identity.  Groups: one gain dissipator per upper coupling
    (gain3, gain2), the mode-1 loss channel (loss1), the three cross
    couplings, and the cavity damping of all modes.  Every group is
    traceless on its own, which a unit test checks term by term.
    """
    if not isinstance(pref, Prefactors):
        raise TypeError("pref must be a Prefactors value")
    if not (kappa > 0.0) or not math.isfinite(kappa):
        raise ConfigurationError("kappa must be positive and finite")
    a1, a2, a3 = mode_annihilators(n_max)
    a1d, a2d, a3d = (op.T.tocsr() for op in (a1, a2, a3))
    s = pref.gain_scale
    ab = s * pref.gain3
    ac = s * pref.gain2
    ad = s * pref.loss1
    ae = s * pref.cross32
    af = s * pref.cross31
    ag = s * pref.cross21
    half_k = 0.5 * kappa

    groups = {
        "gain3": [
            (2.0 * ab, a3d, a3),
            (-ab, (a3 @ a3d).tocsr(), None),
            (-ab, None, (a3 @ a3d).tocsr()),
        ],
        "cross32": [
            (2.0 * ae, a3d, a2),
            (2.0 * ae, a2d, a3),
            (-ae, (a2 @ a3d).tocsr(), None),
            (-ae, None, (a2 @ a3d).tocsr()),
            (-ae, (a3 @ a2d).tocsr(), None),
            (-ae, None, (a3 @ a2d).tocsr()),
        ],
        "gain2": [
            (2.0 * ac, a2d, a2),
            (-ac, (a2 @ a2d).tocsr(), None),
            (-ac, None, (a2 @ a2d).tocsr()),
        ],
        "cross31": [
            (-2.0 * af, a1, a3),
            (-2.0 * af, a3d, a1d),
            (af, (a3 @ a1).tocsr(), None),
            (af, None, (a3 @ a1).tocsr()),
            (af, (a1d @ a3d).tocsr(), None),
            (af, None, (a1d @ a3d).tocsr()),
        ],
        "loss1": [
            (2.0 * ad, a1, a1d),
            (-ad, (a1d @ a1).tocsr(), None),
            (-ad, None, (a1d @ a1).tocsr()),
        ],
        "cross21": [
            (-2.0 * ag, a1, a2),
            (-2.0 * ag, a2d, a1d),
            (ag, (a2 @ a1).tocsr(), None),
            (ag, None, (a2 @ a1).tocsr()),
            (ag, (a1d @ a2d).tocsr(), None),
            (ag, None, (a1d @ a2d).tocsr()),
        ],
        "cavity-loss": [
            entry
            for a, adag in ((a1, a1d), (a2, a2d), (a3, a3d))
            for entry in (
                (2.0 * half_k, a, adag),
                (-half_k, (adag @ a).tocsr(), None),
                (-half_k, None, (adag @ a).tocsr()),
            )
        ],
    }
    return groups


@lru_cache(maxsize=8)
def _flat_terms(pref: Prefactors, kappa: float, n_max: int):
    groups = master_equation_terms(pref, kappa, n_max)
    flat = []
    for name in sorted(groups):
        flat.extend(groups[name])
    # keep only terms that can act; zero coefficients drop out entirely
    return tuple((c, x, y) for c, x, y in flat if c != 0.0)


def liouvillian_apply(rho, pref: Prefactors, kappa: float) -> np.ndarray:
    """Time derivative of a density matrix under the full generator.

    Accepts a DensityState or a bare square array whose dimension is a
    three-mode Fock cube.  The output is traceless to roundoff.
    """
    mat = rho.rho if isinstance(rho, DensityState) else np.asarray(rho, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError("rho must be a square matrix")
    n_max = _infer_n_max(mat.shape[0])
    out = np.zeros_like(mat)
    for coef, left, right in _flat_terms(pref, float(kappa), n_max):
        term = left @ mat if left is not None else mat
        if right is not None:
            term = term @ right
        out += coef * term
    return out


class _PairBasis:
    """Index bookkeeping for a set of charge sectors.

    Enumerates the (ket, bra) pairs whose charge q = w[ket] - w[bra] lies
    in the requested set, sorted by the flat key ket*dim + bra so that
    pair positions resolve by binary search.  Holds the permutation that
    realises hermitian conjugation, the diagonal positions, and the
    diagonal positions sitting in each mode's edge layer.
    """

    __slots__ = (
        "n_max",
        "dim",
        "size",
        "ket",
        "bra",
        "key",
        "herm_perm",
        "diag",
        "edge",
    )

    def __init__(self, n_max: int, charges):
        side = n_max + 1
        dim = side**3
        n1, n2, n3 = np.unravel_index(np.arange(dim), (side, side, side))
        w = n1.astype(np.int64) - n2 - n3
        wanted = sorted({int(q) for q in charges} | {-int(q) for q in charges})
        groups = {int(v): np.flatnonzero(w == v) for v in np.unique(w)}
        kets, bras = [], []
        for q in wanted:
            for v, ki in groups.items():
                bi = groups.get(v - q)
                if bi is None:
                    continue
                kets.append(np.repeat(ki, bi.size))
                bras.append(np.tile(bi, ki.size))
        if not kets:
            raise ConsistencyError("charge set selects no basis pairs")
        ket = np.concatenate(kets)
        bra = np.concatenate(bras)
        key = ket.astype(np.int64) * dim + bra
        order = np.argsort(key)
        self.n_max = n_max
        self.dim = dim
        self.ket = ket[order]
        self.bra = bra[order]
        self.key = key[order]
        self.size = self.key.size
        perm, ok = self.lookup(self.bra.astype(np.int64) * dim + self.ket)
        if not ok.all():
            raise ConsistencyError("charge set is not closed under conjugation")
        self.herm_perm = perm
        self.diag = np.flatnonzero(self.ket == self.bra)
        kd = self.ket[self.diag]
        self.edge = tuple(
            self.diag[occ[kd] == n_max] for occ in (n1, n2, n3)
        )

    def lookup(self, keys):
        pos = np.searchsorted(self.key, keys)
        pos = np.minimum(pos, self.size - 1)
        return pos, self.key[pos] == keys

    def project(self, mat: np.ndarray) -> np.ndarray:
        return mat[self.ket, self.bra]

    def embed(self, re: np.ndarray, im) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[self.ket, self.bra] = re if im is None else re + 1j * im
        return out


def _monomial_colmap(op, dim):
    """Column -> (row, value) arrays for an operator with <=1 entry per column."""
    csc = op.tocsc()
    counts = np.diff(csc.indptr)
    if counts.max(initial=0) > 1:
        raise ConsistencyError("generator term is not a shift monomial")
    rows = np.full(dim, -1, dtype=np.int64)
    vals = np.zeros(dim)
    filled = np.flatnonzero(counts)
    rows[filled] = csc.indices
    vals[filled] = csc.data
    return rows, vals


def _monomial_rowmap(op, dim):
    """Row -> (column, value) arrays for an operator with <=1 entry per row."""
    csr = op.tocsr()
    counts = np.diff(csr.indptr)
    if counts.max(initial=0) > 1:
        raise ConsistencyError("generator term is not a shift monomial")
    cols = np.full(dim, -1, dtype=np.int64)
    vals = np.zeros(dim)
    filled = np.flatnonzero(counts)
    cols[filled] = csr.indices
    vals[filled] = csr.data
    return cols, vals


def _sector_superoperator(pref: Prefactors, kappa: float, basis: _PairBasis):
    """Real sparse matrix acting on the stacked sector elements."""
    dim = basis.dim
    src = np.arange(basis.size, dtype=np.int64)
    rows, cols, vals = [], [], []
    for coef, left, right in _flat_terms(pref, kappa, basis.n_max):
        if left is None:
            tket = basis.ket.astype(np.int64)
            wl = np.ones(basis.size)
        else:
            cmap_rows, cmap_vals = _monomial_colmap(left, dim)
            tket = cmap_rows[basis.ket]
            wl = cmap_vals[basis.ket]
        if right is None:
            tbra = basis.bra.astype(np.int64)
            wr = np.ones(basis.size)
        else:
            rmap_cols, rmap_vals = _monomial_rowmap(right, dim)
            tbra = rmap_cols[basis.bra]
            wr = rmap_vals[basis.bra]
        alive = (tket >= 0) & (tbra >= 0)
        pos, ok = basis.lookup(tket[alive] * dim + tbra[alive])
        if not ok.all():
            raise ConsistencyError("a generator term left the charge sectors")
        rows.append(pos.astype(np.int64))
        cols.append(src[alive])
        vals.append(coef * wl[alive] * wr[alive])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(basis.size, basis.size),
    )
    return mat.tocsr()


def _moment_operators(n_max: int):
    """All ops whose traces feed a MomentTable: a_i, a_i^dag a_j, a_i a_j."""
    a = mode_annihilators(n_max)
    first = [a[i] for i in range(3)]
    cross = [[(a[i].T @ a[j]).tocsr() for j in range(3)] for i in range(3)]
    pair = [[(a[i] @ a[j]).tocsr() for j in range(3)] for i in range(3)]
    return first, cross, pair


def _sector_moment_maps(basis: _PairBasis):
    """Per-operator (positions, weights) so Tr(O rho) = weights @ vec[positions]."""
    dim = basis.dim

    def mapping(op):
        coo = op.tocoo()
        keys = coo.col.astype(np.int64) * dim + coo.row
        pos, ok = basis.lookup(keys)
        return pos[ok], coo.data[ok]

    first, cross, pair = _moment_operators(basis.n_max)
    return (
        [mapping(op) for op in first],
        [[mapping(op) for op in row] for row in cross],
        [[mapping(op) for op in row] for row in pair],
    )


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Every first and second moment of a three-mode state.

    first[i] = <a_i>, cross[i, j] = <a_i^dag a_j>, pair[i, j] = <a_i a_j>,
    zero-based mode indices.  ``closure`` extracts the six moments the
    moment engine evolves; ``closure_leakage`` measures everything the
    closed system says must stay zero from vacuum.
    """

    first: np.ndarray
    cross: np.ndarray
    pair: np.ndarray

    def closure(self, tol: float = 1e-10) -> SecondMoments:
        tracked = (
            self.cross[0, 0],
            self.cross[1, 1],
            self.cross[2, 2],
            self.cross[2, 1],
            self.pair[2, 0],
            self.pair[1, 0],
        )
        residue = max(abs(z.imag) for z in tracked)
        if residue >= tol:
            raise ConsistencyError(
                f"imaginary residue {residue:.3e} on tracked moments (tol {tol:.1e})"
            )
        return SecondMoments(*(float(z.real) for z in tracked))

    def closure_leakage(self) -> float:
        out = 0.0
        for i in range(3):
            out = max(out, abs(self.first[i]), abs(self.pair[i, i]))
            out = max(out, abs(self.cross[i, i].imag))
        out = max(out, abs(self.pair[2, 1]), abs(self.cross[1, 0]), abs(self.cross[2, 0]))
        out = max(out, abs(self.cross[2, 1].imag))
        out = max(out, abs(self.pair[2, 0].imag), abs(self.pair[1, 0].imag))
        return float(out)


def moments_from_state(state) -> MomentTable:
    """Full moment table of a density matrix (DensityState or bare array)."""
    mat = state.rho if isinstance(state, DensityState) else np.asarray(state, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigurationError("state must be a square matrix")
    n_max = _infer_n_max(mat.shape[0])

    def trace_with(op):
        coo = op.tocoo()
        return complex(np.sum(coo.data * mat[coo.col, coo.row]))

    first_ops, cross_ops, pair_ops = _moment_operators(n_max)
    first = np.array([trace_with(op) for op in first_ops])
    cross = np.array([[trace_with(op) for op in row] for row in cross_ops])
    pair = np.array([[trace_with(op) for op in row] for row in pair_ops])
    return MomentTable(first=first, cross=cross, pair=pair)


@dataclass(frozen=True, eq=False)
class OracleRun:
    """Record of one brute-force run.

    times are the sample instants; tables/moments the extracted values at
    each (moments is None when some sampled state sits outside the
    real-closure regime, which only complex-valued starts can reach);
    trace_residues and edge_populations the per-sample audit trail.
    convergence_delta is the largest change any tracked moment suffered
    when the step was halved (None when the check was skipped).
    min_eigenvalue is the smallest eigenvalue of the final state when
    spectrum tracking was requested, final_state the dense final density
    matrix when the dimension permits, states every sampled state when
    requested.
    """

    times: tuple
    tables: tuple
    moments: tuple | None
    trace_residues: tuple
    edge_populations: tuple
    convergence_delta: float | None
    min_eigenvalue: float | None = None
    final_state: DensityState | None = None
    states: tuple | None = None

    def closure_leakage(self) -> float:
        return max(t.closure_leakage() for t in self.tables)


def _rk4(lop, vec, h):
    k1 = lop @ vec
    k2 = lop @ (vec + (0.5 * h) * k1)
    k3 = lop @ (vec + (0.5 * h) * k2)
    k4 = lop @ (vec + h * k3)
    return vec + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _step(lop, basis, re, im, h):
    re = _rk4(lop, re, h)
    if im is not None:
        im = _rk4(lop, im, h)
    re = 0.5 * (re + re[basis.herm_perm])
    if im is not None:
        im = 0.5 * (im - im[basis.herm_perm])
    return re, im


def _audit(basis, re, im, edge_tol, t):
    peak = float(np.max(np.abs(re)))
    if im is not None:
        peak = max(peak, float(np.max(np.abs(im))))
    if not math.isfinite(peak) or peak > _DIVERGENCE_PEAK:
        raise IntegrationError(
            f"integration diverged near t={t:.6g} (peak element {peak:.3e}); reduce dt"
        )
    trace = float(re[basis.diag].sum())
    residue = abs(trace - 1.0)
    if residue > _TRACE_TOL:
        raise IntegrationError(
            f"trace drifted to {trace:.9g} near t={t:.6g}; reduce dt"
        )
    edge = max(float(re[idx].sum()) for idx in basis.edge)
    if edge > edge_tol:
        raise TruncationError(
            f"edge-layer population {edge:.3e} exceeds edge_tol {edge_tol:.1e} "
            f"near t={t:.6g}; increase n_max beyond {basis.n_max}"
        )
    return residue, edge


def _table_at(maps, re, im):
    def value(entry):
        pos, weights = entry
        out = complex(weights @ re[pos])
        if im is not None:
            out += 1j * float(weights @ im[pos])
        return out

    first_maps, cross_maps, pair_maps = maps
    first = np.array([value(m) for m in first_maps])
    cross = np.array([[value(m) for m in row] for row in cross_maps])
    pair = np.array([[value(m) for m in row] for row in pair_maps])
    return MomentTable(first=first, cross=cross, pair=pair)


def _march(lop, basis, maps, re0, im0, samples, dt, edge_tol, keep_vectors):
    re = re0.copy()
    im = None if im0 is None else im0.copy()
    tables, residues, edges, vectors = [], [], [], []
    t_prev = 0.0
    for t in samples:
        span = t - t_prev
        nfull = int(math.floor(span / dt + 1e-9))
        rem = span - nfull * dt
        if rem <= 1e-12 * max(dt, 1.0):
            rem = 0.0
        for _ in range(nfull):
            t_prev += dt
            re, im = _step(lop, basis, re, im, dt)
            _audit(basis, re, im, edge_tol, t_prev)
        if rem:
            re, im = _step(lop, basis, re, im, rem)
        t_prev = t
        residue, edge = _audit(basis, re, im, edge_tol, t)
        tables.append(_table_at(maps, re, im))
        residues.append(residue)
        edges.append(edge)
        if keep_vectors:
            vectors.append((re.copy(), None if im is None else im.copy()))
    return tables, residues, edges, (re, im), vectors


def _sample_grid(cfg: FockConfig, sample_times):
    if sample_times is None:
        return np.linspace(0.0, cfg.t_final, 21) if cfg.t_final > 0 else np.array([0.0])
    samples = np.unique(np.asarray(sample_times, dtype=float))
    if samples.size == 0:
        raise ConfigurationError("sample_times is empty")
    if not np.isfinite(samples).all() or samples[0] < 0.0:
        raise ConfigurationError("sample times must be finite and nonnegative")
    if samples[-1] > cfg.t_final + 1e-9:
        raise ConfigurationError(
            f"sample time {samples[-1]:.6g} lies beyond t_final={cfg.t_final:.6g}"
        )
    return samples


def _detect_charges(rho: np.ndarray, n_max: int, restrict: bool):
    side = n_max + 1
    n1, n2, n3 = np.unravel_index(np.arange(side**3), (side, side, side))
    w = n1.astype(np.int64) - n2 - n3
    if not restrict:
        return np.unique(w[:, None] - w[None, :]).tolist()
    held = np.argwhere(np.abs(rho) != 0.0)
    return np.unique(w[held[:, 0]] - w[held[:, 1]]).tolist()


def integrate(
    rho0: DensityState,
    cfg: FockConfig,
    pref: Prefactors,
    kappa: float,
    *,
    sample_times=None,
    check_convergence: bool = True,
    restrict: bool = True,
    keep_states: bool = False,
    track_spectrum: bool = False,
) -> OracleRun:
    """March the density matrix and sample moments along the way.

    Fixed-step fourth-order integration, re-hermitised every step.  The
    run refuses to continue when any edge layer holds more than
    cfg.edge_tol population (the cutoff is too small for the physics) or
    when the trace drifts or the state diverges (the step is too large).
    With check_convergence the whole march is repeated at dt/2 and the
    tracked moments must agree within 1e-6.

    sample_times defaults to 21 evenly spaced instants over the horizon;
    explicit times must lie inside [0, t_final].  Integration stops at
    the last sample.
    """
    if not isinstance(rho0, DensityState):
        raise ConfigurationError("rho0 must be a DensityState")
    if not isinstance(cfg, FockConfig):
        raise ConfigurationError("cfg must be a FockConfig")
    if rho0.n_max != cfg.n_max:
        raise ConfigurationError(
            f"state truncation n_max={rho0.n_max} does not match config n_max={cfg.n_max}"
        )
    if not isinstance(pref, Prefactors):
        raise TypeError("pref must be a Prefactors value")
    kappa = float(kappa)
    if not (kappa > 0.0) or not math.isfinite(kappa):
        raise ConfigurationError("kappa must be positive and finite")

    samples = _sample_grid(cfg, sample_times)
    basis = _PairBasis(cfg.n_max, _detect_charges(rho0.rho, cfg.n_max, restrict))
    lop = _sector_superoperator(pref, kappa, basis)
    maps = _sector_moment_maps(basis)

    vec = basis.project(rho0.rho)
    re0 = np.ascontiguousarray(vec.real)
    im0 = np.ascontiguousarray(vec.imag) if np.any(vec.imag) else None

    tables, residues, edges, (re, im), vectors = _march(
        lop, basis, maps, re0, im0, samples, cfg.dt, cfg.edge_tol, keep_states
    )
    try:
        moments = tuple(t.closure() for t in tables)
    except ConsistencyError:
        # a genuinely complex-valued start sits outside the real-closure
        # regime; the full tables still carry everything
        moments = None

    delta = None
    if check_convergence:
        halved, _, _, _, _ = _march(
            lop, basis, maps, re0, im0, samples, 0.5 * cfg.dt, cfg.edge_tol, False
        )
        delta = max(
            (
                float(np.max(np.abs(np.concatenate((
                    a.first - b.first,
                    (a.cross - b.cross).ravel(),
                    (a.pair - b.pair).ravel(),
                )))))
                for a, b in zip(tables, halved)
            ),
            default=0.0,
        )
        if delta >= _CONVERGENCE_TOL:
            raise IntegrationError(
                f"halving dt moves tracked moments by {delta:.3e} "
                f"(tolerance {_CONVERGENCE_TOL:.1e}); reduce dt"
            )

    final_state = None
    min_eig = None
    if basis.dim <= _EMBED_LIMIT or keep_states or track_spectrum:
        final = basis.embed(re, im)
        final_state = DensityState(final, cfg.n_max)
        if track_spectrum:
            min_eig = float(np.linalg.eigvalsh(final).min())
            if min_eig < -1e-8:
                warnings.warn(
                    f"final state developed eigenvalue {min_eig:.3e}; "
                    f"truncation or step error is distorting the state",
                    stacklevel=2,
                )
    states = None
    if keep_states:
        states = tuple(
            DensityState(basis.embed(r, i), cfg.n_max) for r, i in vectors
        )

    return OracleRun(
        times=tuple(float(t) for t in samples),
        tables=tuple(tables),
        moments=moments,
        trace_residues=tuple(residues),
        edge_populations=tuple(edges),
        convergence_delta=delta,
        min_eigenvalue=min_eig,
        final_state=final_state,
        states=states,
    )
