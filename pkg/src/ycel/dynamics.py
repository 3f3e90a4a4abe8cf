"""First and second moments of the three cavity modes.

The linearised amplitude equations close over the vector

    R = (a1*, a2, a3)

i.e. the conjugate amplitude of the lower-transition mode together with the
two upper-transition amplitudes.  They read dR/dt = -M R + noise, with the
drift matrix M built from the master-equation coefficients.  Second moments
S = <R R^dagger> (real symmetric: occupations n1, n2, n3 and the cross
moments c32 = <a3^dag a2>, c31 = <a3 a1>, c21 = <a2 a1>) obey

    dS/dt = -M S - S M^T + Q.

Two conventions for the noise matrix Q are implemented.  Backend
"paper-literal" keeps the mode-1 diagonal entry -2*gain_scale*loss1 that the
original derivation of this model carries, which pushes n1 negative from
vacuum.  Backend "ehrenfest" (default) rederives the moment equations
directly from the master equation, giving a zero entry there; the Fock-space
oracle confirms this form (a purely absorbing mode must keep its vacuum).
The two backends differ in nothing else.

Evolution comes in two interchangeable routes: a closed form in the drift
eigenbasis, and direct integration of the six-dimensional linear system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    ConsistencyError,
    DegenerateSteadyStateError,
    EigendecompositionError,
    HorizonError,
    UnstableDriftError,
)
from .model import Prefactors

__all__ = [
    "BACKENDS",
    "EigenSystem",
    "NegativeOccupationWarning",
    "SecondMoments",
    "StabilityReport",
    "diffusion_matrix",
    "drift_matrix",
    "eigendecompose",
    "evolve_first_moments",
    "evolve_second_moments",
    "is_stable",
    "propagator",
    "second_moment_trajectory",
    "steady_state_moments",
]

BACKENDS = ("ehrenfest", "paper-literal")

# exp() arguments past this would overflow float64 anyway; used by the
# horizon guard for unstable drifts.
_MAX_GROWTH_EXPONENT = 600.0


class NegativeOccupationWarning(UserWarning):
    """A mean photon number came out negative (paper-literal artifact)."""


def drift_matrix(pref: Prefactors, kappa: float) -> np.ndarray:
    """3x3 drift matrix M of dR/dt = -M R over R = (a1*, a2, a3)."""
    a = pref.gain_scale
    half = kappa / 2.0
    return np.array(
        [
            [half + a * pref.loss1, -a * pref.cross21, -a * pref.cross31],
            [a * pref.cross21, half - a * pref.gain2, -a * pref.cross32],
            [a * pref.cross31, -a * pref.cross32, half - a * pref.gain3],
        ]
    )


def diffusion_matrix(pref: Prefactors, backend: str = "ehrenfest") -> np.ndarray:
    """Noise matrix Q of the second-moment equation, for either backend."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    a = pref.gain_scale
    q11 = -2.0 * pref.loss1 if backend == "paper-literal" else 0.0
    return a * np.array(
        [
            [q11, pref.cross21, pref.cross31],
            [pref.cross21, 2.0 * pref.gain2, 2.0 * pref.cross32],
            [pref.cross31, 2.0 * pref.cross32, 2.0 * pref.gain3],
        ]
    )


@dataclass(frozen=True)
class EigenSystem:
    """Eigendecomposition M = V diag(eigenvalues) V^-1.

    Eigenvalues are sorted by real part (ties by imaginary part) so results
    are reproducible run to run.
    """

    eigenvalues: np.ndarray
    v: np.ndarray
    v_inv: np.ndarray


def eigendecompose(m: np.ndarray, cond_limit: float = 1e10) -> EigenSystem:
    """Diagonalise a drift matrix, refusing ill-conditioned eigenbases."""
    eigvals, v = np.linalg.eig(m)
    order = np.lexsort((eigvals.imag, eigvals.real))
    eigvals = eigvals[order]
    v = v[:, order]
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > cond_limit:
        raise EigendecompositionError(
            f"eigenvector condition number {cond:.3g} exceeds {cond_limit:.3g}"
        )
    v_inv = np.linalg.inv(v)
    residual = np.linalg.norm(v @ np.diag(eigvals) @ v_inv - m)
    if residual > 1e-10 * max(np.linalg.norm(m), 1e-300):
        raise EigendecompositionError(
            f"eigendecomposition residual {residual:.3g} too large"
        )
    return EigenSystem(eigenvalues=eigvals, v=v, v_inv=v_inv)


def propagator(eig: EigenSystem, t: float) -> np.ndarray:
    """exp(-M t) from a precomputed eigensystem (decaying for stable M)."""
    return (eig.v * np.exp(-eig.eigenvalues * t)) @ eig.v_inv


@dataclass(frozen=True)
class StabilityReport:
    """Stability verdict for a drift matrix: stable iff min Re(eig) > 0."""

    stable: bool
    margin: float
    eigenvalues: tuple[complex, ...]


def is_stable(m: np.ndarray) -> StabilityReport:
    eigvals = np.linalg.eigvals(m)
    order = np.lexsort((eigvals.imag, eigvals.real))
    eigvals = eigvals[order]
    margin = float(eigvals.real.min())
    return StabilityReport(margin > 0.0, margin, tuple(complex(z) for z in eigvals))


def evolve_first_moments(m: np.ndarray, r0: np.ndarray, t: float) -> np.ndarray:
    """Propagate mean amplitudes: R(t) = exp(-M t) R0.

    Falls back to direct integration (with a warning) when the eigenbasis
    is unusable.
    """
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    r0 = np.asarray(r0, dtype=complex)
    if r0.shape != (3,):
        raise ValueError("r0 must be a 3-vector")
    try:
        eig = eigendecompose(m)
    except EigendecompositionError as exc:
        warnings.warn(f"falling back to direct integration: {exc}", stacklevel=2)
        return _integrate_first_moments(m, r0, t)
    return propagator(eig, t) @ r0


def _integrate_first_moments(m, r0, t):
    if t == 0.0:
        return r0.copy()
    y0 = np.concatenate([r0.real, r0.imag])

    def rhs(_, y):
        r = y[:3] + 1j * y[3:]
        dr = -m @ r
        return np.concatenate([dr.real, dr.imag])

    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    y = sol.y[:, -1]
    return y[:3] + 1j * y[3:]


@dataclass(frozen=True)
class SecondMoments:
    """Occupations and cross moments of the three modes.

    n1, n2, n3 are mean photon numbers; c32 = <a3^dag a2>, c31 = <a3 a1>,
    c21 = <a2 a1>.  All six are real in this model (coupling constants and
    initial coherences are real).
    """

    n1: float
    n2: float
    n3: float
    c32: float
    c31: float
    c21: float

    def as_matrix(self) -> np.ndarray:
        """Symmetric <R R^dagger> matrix in the (a1*, a2, a3) ordering."""
        return np.array(
            [
                [self.n1, self.c21, self.c31],
                [self.c21, self.n2, self.c32],
                [self.c31, self.c32, self.n3],
            ]
        )

    @classmethod
    def from_matrix(cls, s: np.ndarray, tol: float = 1e-9) -> "SecondMoments":
        s = np.asarray(s, dtype=float)
        if s.shape != (3, 3):
            raise ValueError("second-moment matrix must be 3x3")
        if np.abs(s - s.T).max() > tol * max(1.0, np.abs(s).max()):
            raise ConsistencyError("second-moment matrix is not symmetric")
        s = (s + s.T) / 2.0
        return cls(
            n1=float(s[0, 0]),
            n2=float(s[1, 1]),
            n3=float(s[2, 2]),
            c32=float(s[2, 1]),
            c31=float(s[2, 0]),
            c21=float(s[1, 0]),
        )

    @classmethod
    def vacuum(cls) -> "SecondMoments":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.n1, self.n2, self.n3, self.c32, self.c31, self.c21)


def _expm1_complex(z: np.ndarray) -> np.ndarray:
    """exp(z) - 1 without cancellation for small |z| (numpy lacks complex expm1)."""
    x, y = z.real, z.imag
    half = np.sin(y / 2.0)
    # cos(y) - 1 = -2 sin^2(y/2)
    return (np.expm1(x) * np.cos(y) - 2.0 * half * half) + 1j * (np.exp(x) * np.sin(y))


def _guard_horizon(report: StabilityReport, t: float) -> None:
    growth = max(0.0, -report.margin)
    if 2.0 * growth * t > _MAX_GROWTH_EXPONENT:
        eigs = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in report.eigenvalues)
        raise HorizonError(
            f"unstable drift (margin {report.margin:.3g}, eigenvalues {eigs}) "
            f"over t={t:.3g} overflows; no steady state exists in this regime, "
            "reduce t"
        )


def _closed_form_factors(eig: EigenSystem, q: np.ndarray):
    k = eig.v_inv @ q @ eig.v_inv.T
    lam_sum = eig.eigenvalues[:, None] + eig.eigenvalues[None, :]
    return k, lam_sum


def _closed_form_at(eig, k, lam_sum, s0_matrix, t: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = -_expm1_complex(-lam_sum * t) / lam_sum
    phi = np.where(np.abs(lam_sum * t) < 1e-30, t, phi)
    s = (eig.v @ (k * phi) @ eig.v.T).astype(complex)
    if s0_matrix is not None:
        p = propagator(eig, t)
        s = s + p @ s0_matrix @ p.T
    residue = np.abs(s.imag).max()
    if residue > 1e-9 * max(1.0, np.abs(s.real).max()):
        raise ConsistencyError(
            f"closed-form moments have imaginary residue {residue:.3g}"
        )
    return s.real


def _check_occupations(m: SecondMoments, backend: str) -> SecondMoments:
    low = min(m.n1, m.n2, m.n3)
    if low < -1e-9:
        warnings.warn(
            f"negative mean photon number {low:.6g} from backend {backend!r}; "
            "the as-printed mode-1 noise term drives this, and the ehrenfest "
            "backend (confirmed by the Fock oracle) does not",
            NegativeOccupationWarning,
            stacklevel=3,
        )
    return m


def second_moment_trajectory(
    pref: Prefactors,
    kappa: float,
    times,
    *,
    backend: str = "ehrenfest",
    route: str = "closed-form",
    initial: SecondMoments | None = None,
) -> list[SecondMoments]:
    """Second moments at each requested time (nondecreasing, starting >= 0).

    The closed-form route reuses one eigendecomposition for every sample and
    falls back to the integration route (with a warning) if the eigenbasis
    is ill-conditioned.  From vacuum, ``initial`` may be omitted.
    """
    times = [float(t) for t in times]
    if not times or any(t < 0.0 for t in times):
        raise ValueError("times must be nonnegative")
    if any(b > a for a, b in zip(times[1:], times)):
        raise ValueError("times must be nondecreasing")
    if route not in ("closed-form", "ode"):
        raise ValueError(f"unknown route {route!r}")
    m = drift_matrix(pref, kappa)
    q = diffusion_matrix(pref, backend)
    _guard_horizon(is_stable(m), times[-1])
    s0 = initial.as_matrix() if initial is not None else None

    if route == "closed-form":
        try:
            eig = eigendecompose(m)
        except EigendecompositionError as exc:
            warnings.warn(f"falling back to the ode route: {exc}", stacklevel=2)
        else:
            k, lam_sum = _closed_form_factors(eig, q)
            return [
                _check_occupations(
                    SecondMoments.from_matrix(
                        _closed_form_at(eig, k, lam_sum, s0, t), tol=1e-8
                    ),
                    backend,
                )
                for t in times
            ]

    return _integrate_second_moments(m, q, s0, times, backend)


def _integrate_second_moments(m, q, s0, times, backend):
    y0 = np.zeros(6) if s0 is None else SecondMoments.from_matrix(s0).as_tuple()

    def rhs(_, y):
        s = SecondMoments(*y).as_matrix()
        ds = -m @ s - s @ m.T + q
        return np.array(
            [ds[0, 0], ds[1, 1], ds[2, 2], ds[2, 1], ds[2, 0], ds[1, 0]]
        )

    # t_eval must be strictly inside the span; handle t=0 and duplicates by lookup
    t_end = times[-1]
    if t_end == 0.0:
        return [
            _check_occupations(SecondMoments(*(float(x) for x in y0)), backend)
        ] * len(times)
    unique = sorted({t for t in times if t > 0.0})
    sol = solve_ivp(
        rhs,
        (0.0, t_end),
        np.asarray(y0, dtype=float),
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        t_eval=unique,
        dense_output=False,
    )
    if not sol.success:
        raise ConsistencyError(f"moment integration failed: {sol.message}")
    table = {t: sol.y[:, i] for i, t in enumerate(unique)}
    table[0.0] = np.asarray(y0, dtype=float)
    return [
        _check_occupations(SecondMoments(*(float(x) for x in table[t])), backend)
        for t in times
    ]


def evolve_second_moments(
    pref: Prefactors,
    kappa: float,
    t: float,
    *,
    backend: str = "ehrenfest",
    route: str = "closed-form",
    initial: SecondMoments | None = None,
) -> SecondMoments:
    """Second moments at a single time (vacuum start by default)."""
    return second_moment_trajectory(
        pref, kappa, [t], backend=backend, route=route, initial=initial
    )[0]


def steady_state_moments(
    pref: Prefactors, kappa: float, *, backend: str = "ehrenfest"
) -> SecondMoments:
    """Solve M S + S M^T = Q for the steady second moments.

    Requires a strictly stable drift; the 9x9 vectorised system is solved
    directly and the result symmetrised.
    """
    m = drift_matrix(pref, kappa)
    report = is_stable(m)
    if not report.stable:
        eigs = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" for z in report.eigenvalues)
        raise UnstableDriftError(
            f"no steady state: drift margin {report.margin:.6g} <= 0 (eigenvalues {eigs})"
        )
    q = diffusion_matrix(pref, backend)
    eye = np.eye(3)
    lhs = np.kron(m, eye) + np.kron(eye, m)
    try:
        vec = np.linalg.solve(lhs, q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise DegenerateSteadyStateError(f"steady-state system singular: {exc}") from exc
    s = vec.reshape(3, 3)
    residual = np.abs(m @ s + s @ m.T - q).max()
    if residual > 1e-9 * max(1.0, np.abs(q).max()):
        raise DegenerateSteadyStateError(
            f"steady-state residual {residual:.3g} too large (near-marginal drift?)"
        )
    if np.abs(s - s.T).max() > 1e-10 * max(1.0, np.abs(s).max()):
        raise DegenerateSteadyStateError("steady-state solution lost symmetry")
    return _check_occupations(SecondMoments.from_matrix(s, tol=1e-10), backend)
