import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtransistor.errors import DomainError, ModelValidityError
from bhtransistor.fock import BasisRegistry, CompositeState, LatticeSpec
from bhtransistor.schedule import (
    ExpRamp,
    Hold,
    InstantRotation,
    LinearRamp,
    ReadoutMarker,
    Schedule,
    SiteModulation,
    VirtualPhase,
    apply_rotation,
    apply_virtual_phase,
    compile_schedule,
    dump_schedule,
    exp_ramp_eval,
    flat_top_envelope,
    load_schedule,
    site_population,
)

MHZ = 2 * np.pi * 1e6
NS = 1e-9


@settings(max_examples=50, deadline=None)
@given(T=st.floats(1e-9, 2e-6), frac=st.floats(0.4, 0.6), x=st.floats(0, 1))
def test_exp_ramp_is_monotone_between_endpoints(T, frac, x):
    tau = frac * T
    assert exp_ramp_eval(0.0, T, tau, 1.0, 5.0) == pytest.approx(1.0)
    assert exp_ramp_eval(T, T, tau, 1.0, 5.0) == pytest.approx(5.0)
    v = exp_ramp_eval(x * T, T, tau, 1.0, 5.0)
    assert 1.0 - 1e-12 <= v <= 5.0 + 1e-12
    # fast first: past the linear interpolation
    assert v >= 1.0 + 4.0 * x - 1e-9


def test_exp_ramp_guards():
    with pytest.raises(DomainError):
        ExpRamp(100 * NS, (0, 0), (1, 1), tau=10 * NS)
    ExpRamp(100 * NS, (0, 0), (1, 1), tau=10 * NS, allow_any_tau=True)
    with pytest.raises(DomainError):
        ExpRamp(100 * NS, (0, 0), (1, 1), tau=50 * NS, shape="sideways")
    with pytest.raises(DomainError):
        exp_ramp_eval(2.0, 1.0, 0.5, 0.0, 1.0)


def test_mirror_is_time_reversed_rise():
    s, e = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    rise = ExpRamp(10.0, s, e, 5.0)
    mirror = ExpRamp(10.0, e, s, 5.0, shape="mirror")
    for t in np.linspace(0, 10, 7):
        np.testing.assert_allclose(mirror.at(t), rise.at(10.0 - t))


def test_compile_uses_midpoints_and_exact_durations():
    sched = Schedule(2, (
        InstantRotation(0, np.pi),
        LinearRamp(1.0 * NS, (0.0, 0.0), (4.0, 0.0)),
        VirtualPhase(1, 0.3),
        Hold(0.3 * NS, (1.0, 2.0)),
        ReadoutMarker(),
    ))
    ctl = compile_schedule(sched, 0.25 * NS)
    assert ctl.n_samples == 4 + 2
    assert ctl.duration == pytest.approx(1.3 * NS)
    np.testing.assert_allclose(ctl.detunings[:4, 0], [0.5, 1.5, 2.5, 3.5])
    np.testing.assert_allclose(ctl.steps[4:], [0.15 * NS] * 2)
    assert [i for i, _ in ctl.events] == [0, 4, 6]
    np.testing.assert_allclose(ctl.sample_times()[:2], [0, 0.25 * NS])


def test_schedule_validation_and_reversal():
    with pytest.raises(DomainError):
        Schedule(2, (Hold(1.0, (0.0, 0.0, 0.0)),))
    with pytest.raises(DomainError):
        Schedule(2, (InstantRotation(5, np.pi),))
    with pytest.raises(DomainError):
        Schedule(2, ()) + Schedule(3, ())
    s = Schedule(2, (InstantRotation(0, np.pi / 2, 0.3), LinearRamp(2.0, (0.0, 0.0), (1.0, 2.0))))
    r = s.reversed()
    assert r.segments[0].start == (1.0, 2.0) and r.segments[0].end == (0.0, 0.0)
    assert r.segments[1].angle == pytest.approx(-np.pi / 2)
    assert s.duration == r.duration == 2.0


def test_text_round_trip():
    sched = Schedule(3, (
        InstantRotation(1, np.pi / 2, 0.1),
        ExpRamp(240 * NS, np.array([50, 234, -50]) * MHZ, np.array([0, 234, 0]) * MHZ, 120 * NS),
        SiteModulation(0, 20 * MHZ, 29 * MHZ, 100 * NS, np.array([0, 234, 0]) * MHZ, 5 * NS),
        Hold(10 * NS, np.array([1, 2, 3]) * MHZ),
        VirtualPhase(1, 0.7),
    ))
    text = dump_schedule(sched)
    assert "ns" in text
    again = load_schedule(text)
    assert len(again.segments) == len(sched.segments)
    for a, b in zip(again.segments, sched.segments):
        assert type(a) is type(b)
    c1, c2 = compile_schedule(sched, NS), compile_schedule(again, NS)
    np.testing.assert_allclose(c1.detunings, c2.detunings, rtol=1e-12, atol=1e-3)


def test_flat_top_envelope_starts_and_ends_at_zero():
    t = np.linspace(0, 100, 1001)
    env = flat_top_envelope(t, 100.0, 5.0)
    assert env[0] == pytest.approx(0.0, abs=1e-12) and env[-1] == pytest.approx(0.0, abs=1e-12)
    assert env[500] == 1.0
    assert np.all((env >= 0) & (env <= 1))


def _reg(n=3):
    return BasisRegistry(LatticeSpec.uniform(n, 1.0, -10.0))


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(0, 2 * np.pi), phi=st.floats(0, 2 * np.pi))
def test_rotation_populations_and_norm(theta, phi):
    psi = CompositeState.basis_state(_reg(), (0, 1, 0))
    out = apply_rotation(psi, 0, theta, phi)
    assert site_population(out, 0, 1) == pytest.approx(np.sin(theta / 2) ** 2, abs=1e-12)
    assert out.norm() == pytest.approx(1.0)


def test_rotation_phase_convention():
    psi = CompositeState.basis_state(_reg(), (0, 0, 0))
    out = apply_rotation(psi, 2, np.pi / 2, np.pi / 3)
    assert out.amplitude((0, 0, 1)) == pytest.approx(-1j * np.exp(1j * np.pi / 3) / np.sqrt(2))
    back = apply_rotation(out, 2, -np.pi / 2, np.pi / 3)
    assert back.amplitude((0, 0, 0)) == pytest.approx(1.0)


def test_pi_pulse_leaves_no_empty_sector():
    out = apply_rotation(CompositeState.basis_state(_reg(), (0, 0, 0)), 0, np.pi)
    assert set(out.sectors) == {1}


def test_rotation_refuses_doublon_population():
    psi = CompositeState.from_amplitudes(_reg(), {(2, 0, 0): 0.1, (1, 0, 0): np.sqrt(0.99)})
    with pytest.raises(ModelValidityError):
        apply_rotation(psi, 0, np.pi)
    out = apply_rotation(psi, 0, np.pi, threshold=np.inf)
    assert site_population(out, 0, 2) == pytest.approx(0.01)


def test_virtual_phase_weights_by_occupation():
    psi = CompositeState.from_amplitudes(_reg(), {(0, 0, 0): 1.0, (0, 1, 0): 1.0, (0, 2, 0): 1.0})
    out = apply_virtual_phase(psi, 1, 0.4)
    assert out.amplitude((0, 2, 0)) == pytest.approx(np.exp(0.8j))
    assert out.amplitude((0, 0, 0)) == pytest.approx(1.0)
