import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from ficstack.fic_core import (CONVERGENCE, DIVERGENCE, FicParams, autonomous_mass_sim,
                               convergence_center, convergence_stiffness, fic_init, fic_step,
                               phase_portrait, phase_potential, profile_energy, profile_force)
from ficstack.harness_cli import ring_states

EE = FicParams(0.005, 0.006, 150.0, 5000.0)


def test_params_validation():
    with pytest.raises(ValueError):
        FicParams(0.006, 0.005, 150.0, 5000.0)
    with pytest.raises(ValueError):
        FicParams(0.005, 0.006, 10.0, 5000.0)
    with pytest.raises(ValueError):
        FicParams(0.005, 0.006, 150.0, -1.0)
    with pytest.raises(ValueError):
        FicParams(0.005, 0.006, 150.0, 5000.0, s=0.0)
    assert EE.b == pytest.approx(5e-5)
    assert EE.delta_f == pytest.approx(125.0)


def test_flat_saturation_set_is_accepted():
    # f_max equal to k0*x0: linear ramp straight into saturation
    p = FicParams(0.01, 0.011, 50.0, 5000.0)
    assert p.delta_f == 0.0
    assert profile_force(p, 0.0105) == pytest.approx(50.0)
    assert profile_energy(p, 0.02) == pytest.approx(0.25 + 50.0 * 0.01)


def test_force_examples():
    assert profile_force(EE, 0.0) == 0.0
    assert profile_force(EE, 0.005) == pytest.approx(25.0, abs=1e-12)
    assert profile_force(EE, 0.0055) == pytest.approx(125.0 * (1 - math.exp(-10)) + 25.0, rel=1e-12)
    assert profile_force(EE, 0.0055) == pytest.approx(149.994, abs=1e-3)
    assert profile_force(EE, -0.02) == -150.0


def test_energy_examples():
    assert profile_energy(EE, 0.0) == 0.0
    assert profile_energy(EE, 0.005) == pytest.approx(0.0625, rel=1e-12)


@pytest.mark.parametrize("x", np.linspace(0.0, 0.02, 41)[1:])
def test_energy_is_integral_of_force(x):
    ref, _ = quad(lambda u: profile_force(EE, u), 0.0, x, points=[EE.x0, EE.xb],
                  epsabs=0.0, epsrel=1e-13, limit=200)
    assert profile_energy(EE, x) == pytest.approx(ref, rel=1e-8)


def test_branch_seams():
    p = EE
    below = p.k0 * p.x0
    assert profile_force(p, p.x0) == below
    seam = abs(profile_force(p, p.xb) - profile_force(p, np.nextafter(p.xb, 0.0)))
    assert seam <= p.delta_f * math.exp(-p.s) * (1 + 1e-6)
    assert profile_energy(p, np.nextafter(p.x0, 0.0)) == pytest.approx(profile_energy(p, p.x0), abs=1e-15)
    assert profile_energy(p, np.nextafter(p.xb, 0.0)) == pytest.approx(profile_energy(p, p.xb), abs=1e-15)


def test_energy_grows_linearly_past_saturation():
    p = EE
    far = profile_energy(p, 10 * p.xb)
    extrapolated = profile_energy(p, p.xb) + p.f_max * 9 * p.xb
    assert abs(far - extrapolated) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.1, 0.1))
def test_force_odd_energy_even(x):
    assert profile_force(EE, -x) == -profile_force(EE, x)
    assert profile_energy(EE, -x) == profile_energy(EE, x)
    assert profile_energy(EE, x) >= 0.0
    assert abs(profile_force(EE, x)) <= EE.f_max


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_energy_monotone_and_lipschitz(a, b):
    lo, hi = min(a, b), max(a, b)
    assert profile_energy(EE, lo) <= profile_energy(EE, hi)
    assert profile_energy(EE, hi) - profile_energy(EE, lo) <= EE.f_max * (hi - lo) * (1 + 1e-12) + 1e-15


def test_zero_error_is_a_fixed_point():
    s = fic_init()
    for _ in range(100):
        h, s = fic_step(EE, s, 0.0)
        assert h == 0.0
        assert s.phase == DIVERGENCE


def test_ramp_then_return():
    s = fic_init()
    ramp = np.linspace(0.0, 0.004, 41)
    for e in ramp[1:]:
        h, s = fic_step(EE, s, float(e))
        assert s.phase == DIVERGENCE
        assert h == pytest.approx(EE.k0 * e, rel=1e-12)
    # first sample past the hysteresis band
    a = 0.004 - 1.5e-6
    h, s = fic_step(EE, s, a)
    assert s.phase == CONVERGENCE
    assert s.x_max == 0.004
    assert profile_energy(EE, 0.004) == pytest.approx(0.04)
    assert s.kc == pytest.approx(10000.0, rel=1e-12)
    # spring of 10 kN/m resting about half way: ~20 N toward the target
    # (positive error, so a positive force closes it)
    assert h == pytest.approx(20.0, rel=2e-3)
    # the rest point sits at the midpoint up to the energy released past the peak
    shift = (profile_energy(EE, 0.004) - profile_energy(EE, a)) / (s.kc * a)
    assert s.center == pytest.approx(a / 2 + shift, rel=1e-12)
    h_mid, s = fic_step(EE, s, 0.002)
    assert abs(h_mid) <= s.kc * (shift + 0.75e-6) + 1e-12
    assert abs(h_mid) < 0.02


def test_initial_episode_without_ramp_latches_at_release():
    s = fic_init(0.003)
    h, s = fic_step(EE, s, 0.003)
    assert s.phase == DIVERGENCE and h == pytest.approx(15.0)
    h, s = fic_step(EE, s, 0.0029)
    assert s.phase == CONVERGENCE
    assert 0.0 < h < 15.0


def test_zero_crossing_starts_fresh_episode():
    s = fic_init()
    for e in (0.001, 0.002, 0.0015):
        _, s = fic_step(EE, s, e)
    assert s.phase == CONVERGENCE
    h, s = fic_step(EE, s, -0.0001)
    assert s.phase == DIVERGENCE
    assert s.x_max == pytest.approx(0.0001)
    assert h == pytest.approx(profile_force(EE, -0.0001))


def test_repush_past_peak_reenters_divergence():
    s = fic_init()
    for e in (0.001, 0.002, 0.0015):
        _, s = fic_step(EE, s, e)
    h, s = fic_step(EE, s, 0.0025)
    assert s.phase == DIVERGENCE
    assert s.x_max == 0.0025
    assert h == pytest.approx(profile_force(EE, 0.0025))


def test_degenerate_peak_does_not_latch():
    s = fic_init()
    _, s = fic_step(EE, s, 5e-10)
    h, s = fic_step(EE, s, 1e-10)
    assert s.phase == DIVERGENCE
    assert h == pytest.approx(EE.k0 * 1e-10)


def test_non_finite_error_raises():
    with pytest.raises(ValueError):
        fic_step(EE, fic_init(), float("nan"))
    with pytest.raises(ValueError):
        fic_step(EE, fic_init(), float("inf"))


def test_step_leaves_input_state_untouched():
    s = fic_init()
    before = s.copy()
    fic_step(EE, s, 0.003)
    assert s == before


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.05, 0.05), min_size=1, max_size=60))
def test_force_bounded_by_twice_saturation(errs):
    s = fic_init()
    for e in errs:
        h, s = fic_step(EE, s, e)
        assert abs(h) <= 2.0 * EE.f_max
        assert s.x_max >= 0.0
        if s.phase == CONVERGENCE:
            assert s.x_max > 0.0
            assert s.kc == pytest.approx(convergence_stiffness(EE, s.x_max))


def test_convergence_center_limits():
    for P in (0.003, 0.006, 0.018):
        assert convergence_center(EE, P, P) == pytest.approx(P / 2)
        c = convergence_center(EE, P, 0.9 * P)
        assert 0.45 * P <= c <= 0.9 * P


def test_phase_potential_continuous_at_latch():
    s = fic_init()
    for e in (0.002, 0.004, 0.0055):
        _, s = fic_step(EE, s, e)
    before = profile_energy(EE, 0.005498)
    _, s = fic_step(EE, s, 0.005498)
    assert s.phase == CONVERGENCE
    assert phase_potential(EE, s, 0.005498) == pytest.approx(before, rel=1e-12)


def test_unforced_at_rest_stays_zero():
    tr = autonomous_mass_sim(EE, 1.0, err0=0.0, duration=0.01)
    assert np.all(tr.x_err == 0.0) and np.all(tr.x_dot == 0.0) and np.all(tr.force == 0.0)


def test_testbed_rejects_coarse_steps():
    with pytest.raises(ValueError):
        autonomous_mass_sim(EE, 1.0, err0=0.001, dt=1e-3)
    with pytest.raises(ValueError):
        autonomous_mass_sim(EE, 0.0, err0=0.001)


@pytest.mark.parametrize("release", [0.003, 0.006, 0.018])
def test_monotone_convergence_without_external_force(release):
    tr = autonomous_mass_sim(EE, 1.0, err0=release, duration=0.05, dt=1e-5)
    a = np.abs(tr.x_err)
    conv = tr.phase == CONVERGENCE
    # consecutive convergence samples never move away from the target
    both = conv[1:] & conv[:-1]
    assert np.all(a[1:][both] <= a[:-1][both] + 1e-15)


def test_phase_portrait_single_point_at_origin():
    (tr,) = phase_portrait(EE, 1.0, [(0.0, 0.0)], duration=0.01)
    assert np.all(tr.x_err == 0.0) and np.all(tr.x_dot == 0.0)


def test_phase_portrait_ring_converges():
    states = ring_states(EE, 8, radius=2.0)
    assert max(abs(e) for e, _ in states) > EE.xb
    trajs = phase_portrait(EE, 1.0, states, duration=0.3, dt=1e-5)
    for tr in trajs:
        assert abs(tr.x_err[-1]) <= 1e-4 and abs(tr.x_dot[-1]) <= 1e-4
    saturated = [tr for tr, (e, _) in zip(trajs, states) if abs(e) > EE.xb]
    assert saturated and all(np.any(np.abs(tr.force) == EE.f_max) for tr in saturated)


def test_push_release_episode_is_passive():
    push = lambda t: 80.0 if t < 0.01 else 0.0
    tr = autonomous_mass_sim(EE, 2.0, push=push, duration=0.08, dt=1e-5)
    injected = tr.injected_energy()
    assert injected <= 1e-6
    # kinetic energy bookkeeping: controller + push work equal the final kinetic energy
    ke_end = 0.5 * tr.mass * tr.x_dot[-1] ** 2
    assert injected + tr.push_work() == pytest.approx(ke_end, abs=1e-9)
