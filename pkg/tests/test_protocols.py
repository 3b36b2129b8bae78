import numpy as np
import pytest

from bhtransistor.config import load_config
from bhtransistor.errors import DomainError
from bhtransistor.protocols import (
    CATALOG,
    CompiledRamsey,
    phonon_resonance,
    predict_noon,
    run_conditional_transport,
    run_noon_ramsey,
    run_protocol,
    run_reversibility,
    run_sensing,
    shot_fringes,
)
from bhtransistor.sequences import Device, Drive, entangler, preparation, ramsey_program
from bhtransistor.units import MHZ, NS, TWO_PI


def test_catalog_matches_dispatch():
    cfg = load_config("noon5")
    for tag in CATALOG:
        assert tag in ("conditional-transport", "echo", "noon-ramsey", "phonon-swap", "ramp-sweep",
                       "reversibility", "sensing")
    with pytest.raises(DomainError):
        run_protocol(cfg, "teleport")


def test_device_checks():
    cfg = load_config("noon5")
    dev = Device.from_config(cfg)
    assert dev.occupations("left", 1) == (1, 1, 1, 0, 0)
    assert dev.occupations("right", 0) == (0, 0, 0, 1, 1)
    np.testing.assert_allclose(dev.sensing_offsets(1.0), [-1, -1, 0, 1, 1])
    with pytest.raises(DomainError):
        dev.config("nowhere")
    with pytest.raises(DomainError):
        Device(dev.lattice, 2, (0, 1), (1, 3), dev.configurations)
    with pytest.raises(DomainError):
        preparation(dev, "sideways")


def test_entangler_structure():
    dev = Device.from_config(load_config("noon5"))
    U = entangler(dev, 240 * NS, "inverted")
    assert len(U.segments) == 2 and U.duration == pytest.approx(480 * NS)
    np.testing.assert_allclose(U.segments[0].at(0.0), dev.config("small_disorder"))
    np.testing.assert_allclose(U.segments[-1].at(240 * NS), dev.config("inverted"))
    driven = entangler(dev, 240 * NS, "inverted", drive=Drive(1, 20 * MHZ, 29 * MHZ, 100 * NS, 5 * NS))
    assert driven.duration == pytest.approx(580 * NS)
    with pytest.raises(DomainError):
        ramsey_program(dev, U, dev.config("inverted"), echo=True)


def test_echo_reverses_the_bare_phase_before_the_pi_pulse():
    dev = Device.from_config(load_config("noon5"))
    U = entangler(dev, 40 * NS, "inverted")
    hold = dev.config("inverted")
    plain = CompiledRamsey.build(dev, ramsey_program(dev, U, hold, echo_pairs=1), 0.25 * NS)
    echo = CompiledRamsey.build(dev, ramsey_program(dev, U, hold, echo_pairs=1, echo=True), 0.25 * NS)
    pi_at = [i for i, ev in echo.pre.events if getattr(ev, "angle", 0) == np.pi and ev.site == dev.ancilla]
    assert len(pi_at) == 1
    k = pi_at[0]
    before = np.sum(echo.pre.detunings[:k, dev.ancilla] * echo.pre.steps[:k])
    assert echo.echo and not plain.echo
    assert plain.bare_phase - echo.bare_phase == pytest.approx(2 * before, rel=1e-9)


def test_noon_prediction_folds_near_250_mhz_for_seven_sites():
    dev = Device.from_config(load_config("noon7"))
    pred = predict_noon(dev, dev.config("inverted"), 50 * MHZ)
    assert pred.folded_hz(1 * NS) == pytest.approx(250e6, abs=5e6)


def test_five_site_fringe_matches_eigenvalue_prediction():
    r = run_noon_ramsey(load_config("noon5"))
    assert abs(r.dominant.frequency - r.predicted_folded_hz) < r.spectrum.resolution
    assert abs(r.unfolded_hz - r.prediction.fringe / TWO_PI) < r.spectrum.resolution
    assert r.record.p1.min() >= 0 and r.record.p1.max() <= 1


def test_uncoupled_reference_fringe_sits_at_omega_ref():
    r = run_noon_ramsey(load_config("noon5"), photons=False)
    # only the ancilla's dispersive shift from its detuned neighbours remains
    assert r.dominant.frequency == pytest.approx(r.predicted_folded_hz, abs=0.05 * r.spectrum.resolution)
    assert r.dominant.frequency == pytest.approx(50e6, abs=1.5e6)


def test_ramsey_requires_superposed_ancilla():
    with pytest.raises(DomainError):
        run_noon_ramsey(load_config("noon5", ["ancilla=ground"]))


def test_sensing_slope_five_sites():
    r = run_sensing(load_config("noon5"))
    assert r.expected_slope == 4
    assert r.relative_error < 0.05
    assert r.table().columns[0] == "delta_mhz"


def test_conditional_transport_five_sites():
    r = run_conditional_transport(load_config("noon5"))
    np.testing.assert_allclose(r.profiles["ground"], [1, 1, 0, 0, 0], atol=0.05)
    assert r.totals["ground"] == pytest.approx(2.0)
    assert r.totals["excited"] == pytest.approx(3.0)
    assert r.fidelity["excited"] >= 0.95
    # the fluid spreads over both clusters
    assert r.profiles["excited"][[3, 4]].sum() > 0.5


def test_phonon_resonance_references():
    res = phonon_resonance(load_config("phonon5"))
    assert res.hardcore_drive / res.J == pytest.approx(1 + np.sqrt(3), rel=1e-9)
    assert res.drive == pytest.approx(res.gap / 2)
    assert 3.0 < res.drive_in_J < 3.5


def test_noiseless_reversibility_starts_at_one():
    r = run_reversibility(load_config("noon5"), pairs=[0, 1])
    assert r.fidelity[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert 0.8 < r.fidelity[0, 1] <= 1.0
    assert r.fits == [None]


def test_quasistatic_shots_are_reproducible_and_worker_independent():
    cfg = load_config("noon5", ["noise=true", "noise.markovian=false", "noise.sigma_mhz=0.5",
                                "protocol.hold_ns={start: 0, stop: 20, step: 1}"])
    dev = Device.from_config(cfg)
    U = entangler(dev, 240 * NS, "inverted")
    prog = ramsey_program(dev, U, dev.config("inverted"))
    holds = cfg.protocol.hold_grid()
    model, readout = cfg.noise_model(), cfg.readout_model()
    a = shot_fringes(cfg, dev, prog, holds, model, readout, tag=1, shots=3)
    b = shot_fringes(cfg, dev, prog, holds, model, readout, tag=1, shots=3)
    cfg.simulation.jobs = 2
    c = shot_fringes(cfg, dev, prog, holds, model, readout, tag=1, shots=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, c, atol=1e-13)
    assert not np.allclose(a[0], a[1])
