"""Drift/diffusion structure, moment evolution routes, steady states."""

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ycel.dynamics import (
    NegativeOccupationWarning,
    SecondMoments,
    diffusion_matrix,
    drift_matrix,
    eigendecompose,
    evolve_first_moments,
    evolve_second_moments,
    is_stable,
    propagator,
    second_moment_trajectory,
    steady_state_moments,
)
from ycel.errors import EigendecompositionError, HorizonError, UnstableDriftError
from ycel.model import prefactors_from_inversions, validate_physical


def pref(eta1, eta2, a=0.5):
    return prefactors_from_inversions(eta1, eta2, gain_scale=a)


def random_stable_sets(count, seed=20240613):
    """Deterministic stream of stable (pref, kappa) draws."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        e1, e2 = rng.uniform(-1, 1, size=2)
        if not validate_physical(e1, e2).valid:
            continue
        p = prefactors_from_inversions(float(e1), float(e2), float(rng.uniform(0.05, 2.0)))
        if is_stable(drift_matrix(p, 1.0)).stable:
            out.append(p)
    return out


def test_drift_matrix_uniform_coherence():
    # eta1 = eta2 = 0 with gain_scale = kappa: every weight is 1/6
    m = drift_matrix(pref(0.0, 0.0, a=1.0), kappa=1.0)
    s = 1.0 / 6.0
    expected = np.array(
        [[0.5 + s, -s, -s], [s, 0.5 - s, -s], [s, -s, 0.5 - s]]
    )
    assert_allclose(m, expected, atol=1e-15)


def test_drift_matrix_sign_structure():
    m = drift_matrix(pref(0.25, 0.25), kappa=1.0)
    # column-1 couplings appear with opposite signs across the diagonal
    assert m[0, 1] == -m[1, 0]
    assert m[0, 2] == -m[2, 0]
    # upper-pair coupling is symmetric negative
    assert m[1, 2] == m[2, 1] < 0


def test_diffusion_backends_differ_only_in_corner():
    p = pref(0.3, 0.1, a=2.0)
    q_lit = diffusion_matrix(p, "paper-literal")
    q_ehr = diffusion_matrix(p, "ehrenfest")
    assert q_ehr[0, 0] == 0.0
    assert q_lit[0, 0] == pytest.approx(-2.0 * p.gain_scale * p.loss1, rel=1e-15)
    q_lit[0, 0] = 0.0
    assert_allclose(q_lit, q_ehr, atol=0.0)


def test_diffusion_fixture_uniform_coherence():
    p = pref(0.0, 0.0, a=3.0)
    q = diffusion_matrix(p, "paper-literal")
    assert_allclose(
        [q[0, 1], q[0, 2], q[1, 2]], [3.0 / 6, 3.0 / 6, 3.0 * 2 / 6], rtol=1e-15
    )
    assert q[0, 0] == pytest.approx(-1.0, rel=1e-15)
    p = pref(1.0, 1.0, a=3.0)
    assert_allclose(
        diffusion_matrix(p, "paper-literal"), np.diag([-3.0, 0.0, 0.0]), atol=1e-15
    )


def test_eigendecompose_reconstructs_and_sorts():
    for p in random_stable_sets(8):
        m = drift_matrix(p, 1.0)
        eig = eigendecompose(m)
        rebuilt = eig.v @ np.diag(eig.eigenvalues) @ eig.v_inv
        assert np.abs(rebuilt - m).max() < 1e-10 * np.abs(m).max()
        assert np.all(np.diff(eig.eigenvalues.real) >= -1e-14)


def test_eigendecompose_known_spectra():
    # ground-level preparation: diagonal drift
    eig = eigendecompose(drift_matrix(pref(1.0, 1.0, a=2.0), kappa=1.0))
    assert_allclose(eig.eigenvalues.real, [0.5, 0.5, 1.5], atol=1e-12)
    # decoupled mode 1: block eigenvalues kappa/2 - a/2, kappa/2 (twice)
    eig = eigendecompose(drift_matrix(pref(-0.5, -0.5, a=0.5), kappa=1.0))
    assert_allclose(eig.eigenvalues.real, [0.25, 0.5, 0.5], atol=1e-12)


def test_stability_margins():
    assert is_stable(drift_matrix(pref(-0.5, -0.5, a=0.5), 1.0)).margin == pytest.approx(0.25, abs=1e-12)
    marginal = is_stable(drift_matrix(pref(-0.5, -0.5, a=1.0), 1.0))
    assert not marginal.stable
    assert marginal.margin == pytest.approx(0.0, abs=1e-12)
    # uniform coherence destabilises only at gain_scale = 3 kappa
    assert is_stable(drift_matrix(pref(0.0, 0.0, a=2.9), 1.0)).stable
    assert not is_stable(drift_matrix(pref(0.0, 0.0, a=3.1), 1.0)).stable


def test_propagator_identity_and_decay():
    m = drift_matrix(pref(0.1, 0.2), 1.0)
    eig = eigendecompose(m)
    assert_allclose(propagator(eig, 0.0), np.eye(3), atol=1e-12)
    margin = is_stable(m).margin
    r0 = np.array([0.3 - 0.1j, 0.2, -0.4j])
    assert np.abs(evolve_first_moments(m, r0, 50.0 / margin)).max() < 1e-10


def test_first_moments_zero_stays_zero():
    # a defective-drift point on purpose: the fallback path must also keep
    # an exactly zero mean exactly zero
    m = drift_matrix(pref(0.25, 0.25), 1.0)
    with pytest.warns(UserWarning, match="falling back"):
        out = evolve_first_moments(m, np.zeros(3), 7.3)
    assert np.all(out == 0.0)


def test_second_moments_vacuum_fixed_point_when_absorbing():
    # every atom in the ground level: ehrenfest vacuum stays vacuum
    p = pref(1.0, 1.0, a=1.0)
    for t in (0.0, 0.5, 3.0, 20.0):
        m = evolve_second_moments(p, 1.0, t)
        assert np.abs(np.array(m.as_tuple())).max() < 1e-14


def test_paper_literal_negative_occupation_reported():
    p = pref(1.0, 1.0, a=1.0)
    with pytest.warns(NegativeOccupationWarning):
        m = steady_state_moments(p, 1.0, backend="paper-literal")
    # analytic value -2*A*loss1 / (2*A*loss1 + kappa)
    assert m.n1 == pytest.approx(-1.0 / 2.0, rel=1e-12)
    with pytest.warns(NegativeOccupationWarning):
        mt = evolve_second_moments(p, 1.0, 2.0, backend="paper-literal")
    expected = -0.5 * -np.expm1(-2.0 * 2.0)
    assert mt.n1 == pytest.approx(expected, rel=1e-10)


def test_initial_condition_recovered_at_t0():
    p = pref(0.2, 0.1)
    s0 = SecondMoments(0.5, 0.1, 0.2, 0.05, -0.02, 0.01)
    for route in ("closed-form", "ode"):
        out = evolve_second_moments(p, 1.0, 0.0, route=route, initial=s0)
        assert_allclose(out.as_tuple(), s0.as_tuple(), atol=1e-14)


def test_route_equivalence_on_random_stable_sets():
    for p in random_stable_sets(6, seed=7):
        for t in (0.7, 4.0):
            a = evolve_second_moments(p, 1.0, t, route="closed-form")
            b = evolve_second_moments(p, 1.0, t, route="ode")
            scale = max(np.abs(np.array(b.as_tuple())).max(), 1e-12)
            assert np.abs(np.array(a.as_tuple()) - np.array(b.as_tuple())).max() < 1e-8 * scale


def test_einstein_relation_via_finite_differences():
    p = pref(0.25, 0.25)
    m = drift_matrix(p, 1.0)
    q = diffusion_matrix(p, "ehrenfest")
    t, h = 1.5, 1e-5
    with warnings.catch_warnings():
        # defective drift here, so every call takes the warned ode fallback
        warnings.simplefilter("ignore", UserWarning)
        sm = evolve_second_moments(p, 1.0, t).as_matrix()
        sp = evolve_second_moments(p, 1.0, t + h).as_matrix()
        sms = evolve_second_moments(p, 1.0, t - h).as_matrix()
    ds_dt = (sp - sms) / (2 * h)
    expected = -m @ sm - sm @ m.T + q
    assert np.abs(ds_dt - expected).max() < 1e-6


def test_steady_state_matches_long_time_evolution():
    for p in random_stable_sets(4, seed=11):
        margin = is_stable(drift_matrix(p, 1.0)).margin
        ss = np.array(steady_state_moments(p, 1.0).as_tuple())
        lt = np.array(evolve_second_moments(p, 1.0, 100.0 / margin).as_tuple())
        assert np.abs(ss - lt).max() < 1e-8 * max(1.0, np.abs(ss).max())


def test_steady_state_frozen_fixtures():
    # derived by hand from the rank-one structure of the drift at these points
    ss = steady_state_moments(pref(0.0, 0.0, a=0.5), 1.0)
    assert_allclose(
        ss.as_tuple(),
        (2 / 55, 12 / 55, 12 / 55, 12 / 55, 7 / 55, 7 / 55),
        rtol=1e-12,
        atol=1e-14,
    )
    ss = steady_state_moments(pref(0.0, 0.5, a=0.5), 1.0)
    assert_allclose(
        ss.as_tuple(),
        (1 / 32, 0.0, 9 / 32, 0.0, 5 / 32, 0.0),
        rtol=1e-12,
        atol=1e-14,
    )


def test_decoupling_structures():
    # empty ground level: mode 1 stays vacuum and uncorrelated
    ss = steady_state_moments(pref(-0.5, -0.5, a=0.5), 1.0)
    assert abs(ss.n1) < 1e-12 and abs(ss.c31) < 1e-12 and abs(ss.c21) < 1e-12
    assert ss.c32 > 0.1
    assert ss.n2 == pytest.approx(0.5, rel=1e-12)
    # empty level 2: mode 2 silenced, modes 1 and 3 pair up
    ss = steady_state_moments(pref(0.0, 0.5, a=0.5), 1.0)
    assert abs(ss.n2) < 1e-12 and abs(ss.c32) < 1e-12 and abs(ss.c21) < 1e-12
    assert ss.c31 > 0.1


def test_unstable_drift_refuses_steady_state():
    with pytest.raises(UnstableDriftError, match="eigenvalues"):
        steady_state_moments(pref(0.0, 0.0, a=3.5), 1.0)


def test_horizon_guard():
    p = pref(0.0, 0.0, a=3.5)  # margin < 0
    with pytest.raises(HorizonError):
        evolve_second_moments(p, 1.0, 1e5)
    # moderate horizons still evolve (growing but finite)
    out = evolve_second_moments(p, 1.0, 2.0)
    assert np.isfinite(np.array(out.as_tuple())).all()


def test_swap_symmetry_of_trajectories():
    times = [0.5, 2.0, 9.0]
    a = second_moment_trajectory(pref(0.3, 0.1), 1.0, times)
    b = second_moment_trajectory(pref(0.1, 0.3), 1.0, times)
    for ma, mb in zip(a, b):
        assert ma.n1 == pytest.approx(mb.n1, abs=1e-10)
        assert ma.n2 == pytest.approx(mb.n3, abs=1e-10)
        assert ma.n3 == pytest.approx(mb.n2, abs=1e-10)
        assert ma.c32 == pytest.approx(mb.c32, abs=1e-10)
        assert ma.c31 == pytest.approx(mb.c21, abs=1e-10)
        assert ma.c21 == pytest.approx(mb.c31, abs=1e-10)


def test_occupations_stay_nonnegative_from_vacuum():
    for p in random_stable_sets(6, seed=3):
        for m in second_moment_trajectory(p, 1.0, [0.2, 1.0, 5.0, 30.0]):
            assert min(m.n1, m.n2, m.n3) >= -1e-10


def test_moment_matrix_round_trip():
    m = SecondMoments(0.1, 0.2, 0.3, 0.04, 0.05, 0.06)
    assert SecondMoments.from_matrix(m.as_matrix()) == m


def test_defective_drift_falls_back_to_ode_route():
    # At equal inversions 0.25 the gain part of the drift is nilpotent:
    # a triple eigenvalue kappa/2 with a defective eigenbasis. The
    # closed-form route must refuse it and hand over to the integrator.
    p = pref(0.25, 0.25, a=0.5)
    with pytest.raises(EigendecompositionError):
        eigendecompose(drift_matrix(p, 1.0))
    times = [1.0, 5.0, 20.0]
    with pytest.warns(UserWarning, match="falling back to the ode route"):
        via_fallback = second_moment_trajectory(p, 1.0, times)
    via_ode = second_moment_trajectory(p, 1.0, times, route="ode")
    for a, b in zip(via_fallback, via_ode):
        assert np.allclose(a.as_tuple(), b.as_tuple(), rtol=0.0, atol=1e-12)
