import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtransistor.calibration import (
    CrosstalkMatrix,
    DispersionModel,
    build_crosstalk,
    flux_for_frequency,
    invert_crosstalk,
    load_crosstalk,
    save_crosstalk,
    single_pole_prefilter,
    single_pole_response,
)
from bhtransistor.errors import DomainError, NumericError

GHZ = 2 * np.pi * 1e9


def _crosstalk(n, seed, leak=0.1):
    rng = np.random.default_rng(seed)
    M = np.eye(n) + leak * rng.uniform(-1, 1, size=(n, n))
    np.fill_diagonal(M, rng.uniform(0.5, 2.0, size=n))
    return CrosstalkMatrix(M)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 8), seed=st.integers(0, 2**16))
def test_inverse_reproduces_target_fluxes(n, seed):
    M = _crosstalk(n, seed)
    phi = np.random.default_rng(seed + 1).uniform(-0.3, 0.3, size=n)
    I = invert_crosstalk(M, phi)
    np.testing.assert_allclose(M.fluxes(I), phi, atol=1e-12)


def test_build_crosstalk_divides_by_flux_sensitivity():
    slopes = np.array([[2.0, 0.2], [0.1, -4.0]])
    M = build_crosstalk(slopes, [2.0, -4.0])
    np.testing.assert_allclose(M.M, [[1.0, 0.1], [-0.025, 1.0]])
    with pytest.raises(DomainError):
        build_crosstalk(slopes, [2.0, 0.0])
    with pytest.raises(DomainError):
        build_crosstalk(slopes, [1.0])


def test_ill_conditioned_matrix_is_refused():
    M = CrosstalkMatrix(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-9]]))
    with pytest.raises(NumericError) as err:
        invert_crosstalk(M, [0.1, 0.1])
    assert err.value.diagnostics["condition_number"] > 1e6


def test_zero_diagonal_rejected():
    with pytest.raises(DomainError):
        CrosstalkMatrix(np.array([[0.0, 1.0], [1.0, 1.0]]))


@pytest.mark.parametrize("normalized", [False, True])
def test_file_round_trip(tmp_path, normalized):
    M = _crosstalk(5, 7)
    path = tmp_path / "xtalk.txt"
    save_crosstalk(M, path, normalized=normalized)
    np.testing.assert_allclose(load_crosstalk(path).M, M.M, rtol=1e-15)
    if normalized:
        rows = np.loadtxt(path, comments="#")
        np.testing.assert_allclose(np.diag(rows), 1.0)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0))
def test_flux_for_frequency_inverts_dispersion(x):
    model = DispersionModel.from_range(4.0 * GHZ, 6.5 * GHZ, flux_at_min=0.35)
    target = 4.0 * GHZ + x * 2.5 * GHZ
    flux = flux_for_frequency(model, target)
    assert 0.0 <= flux < 0.5
    assert float(model.frequency(flux)) == pytest.approx(target, abs=2 * np.pi * 1e3)


def test_dispersion_range_and_sensitivity():
    model = DispersionModel.from_range(4.0 * GHZ, 6.5 * GHZ, flux_at_min=0.35)
    assert float(model.frequency(0.0)) == pytest.approx(6.5 * GHZ)
    assert float(model.frequency(0.35)) == pytest.approx(4.0 * GHZ)
    assert float(model.sensitivity(0.0)) == pytest.approx(0.0, abs=1e3)
    assert float(model.sensitivity(0.2)) < 0
    with pytest.raises(DomainError):
        flux_for_frequency(model, 7.0 * GHZ)
    with pytest.raises(DomainError):
        DispersionModel.from_range(4.0 * GHZ, 6.5 * GHZ, flux_at_min=0.45)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.0, 0.95), seed=st.integers(0, 1000))
def test_prefilter_undoes_line_response(alpha, seed):
    x = np.random.default_rng(seed).normal(size=64)
    np.testing.assert_allclose(single_pole_response(single_pole_prefilter(x, alpha), alpha), x, atol=1e-9)


def test_step_through_line_settles_with_time_constant():
    y = single_pole_response(np.ones(50), 0.9)
    assert y[0] == pytest.approx(0.1)
    assert y[-1] == pytest.approx(1 - 0.9**50)
    with pytest.raises(DomainError):
        single_pole_prefilter(np.ones(3), 1.0)
