import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtransistor.errors import AmbiguityError, CapabilityError, DomainError
from bhtransistor.fock import BasisRegistry, CompositeState, LatticeSpec, build_hamiltonian
from bhtransistor.propagate import (
    SectorStepper,
    StepPolicy,
    adiabatic_fidelity,
    constant_runs,
    eigensolve_sector,
    evolve_block,
    evolve_sampled,
    lanczos_expm,
    matexp_apply,
    track_eigenstate,
)
from bhtransistor.schedule import ExpRamp, Hold, Schedule, compile_schedule

MHZ = 2 * np.pi * 1e6
NS = 1e-9


def _lattice(n=4):
    return LatticeSpec(n, (-9 * MHZ,) * (n - 1), (-240 * MHZ,) * n)


def _random_hermitian(dim, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (A + A.conj().T) / 2


@settings(max_examples=20, deadline=None)
@given(dim=st.integers(2, 30), seed=st.integers(0, 2**16), t=st.floats(0.01, 3.0))
def test_dense_exponential_matches_scipy(dim, seed, t):
    H = _random_hermitian(dim, seed)
    psi = np.random.default_rng(seed + 1).normal(size=dim).astype(complex)
    out = matexp_apply(H, t, psi, StepPolicy(method="exact"))
    np.testing.assert_allclose(out, sla.expm(-1j * H * t) @ psi, atol=1e-10)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(psi))


def test_krylov_exponential_meets_tolerance():
    H = _random_hermitian(200, 3)
    psi = np.random.default_rng(4).normal(size=200).astype(complex)
    psi /= np.linalg.norm(psi)
    ref = sla.expm(-1j * H * 0.7) @ psi
    out = matexp_apply(H, 0.7, psi, StepPolicy(method="krylov", tolerance=1e-10))
    assert np.linalg.norm(out - ref) < 1e-8


def test_lanczos_on_invariant_subspace_terminates_early():
    H = np.diag([1.0, 2.0, 3.0])
    v = np.array([1.0, 0, 0], dtype=complex)
    out = lanczos_expm(lambda x: H @ x, v, 0.5, 1e-12, 10)
    np.testing.assert_allclose(out, [np.exp(-0.5j), 0, 0], atol=1e-14)


def test_zero_time_is_identity_and_infinite_time_rejected():
    H = _random_hermitian(5, 0)
    psi = np.ones(5, complex)
    np.testing.assert_array_equal(matexp_apply(H, 0.0, psi), psi)
    with pytest.raises(DomainError):
        matexp_apply(H, np.inf, psi)
    with pytest.raises(DomainError):
        matexp_apply(H, 1.0, np.ones(4))


def test_policy_validation():
    with pytest.raises(DomainError):
        StepPolicy(max_step=0)
    with pytest.raises(DomainError):
        StepPolicy(method="rk4")
    assert StepPolicy().use_dense(64) and not StepPolicy().use_dense(65)


def test_constant_hold_equals_exact_exponential():
    lat = _lattice()
    reg = BasisRegistry(lat)
    det = np.array([30, -20, 240, 10]) * MHZ
    psi0 = CompositeState.basis_state(reg, (1, 1, 0, 0))
    out = evolve_sampled(psi0, compile_schedule(Schedule(4, (Hold(37 * NS, det),)), 0.25 * NS))
    H = build_hamiltonian(lat, det, reg[2]).toarray()
    np.testing.assert_allclose(out.sectors[2], sla.expm(-1j * H * 37 * NS) @ psi0.sectors[2], atol=1e-10)


def test_batched_propagation_matches_step_by_step():
    lat = _lattice()
    basis = BasisRegistry(lat)[2]
    ramp = ExpRamp(40 * NS, np.array([50, 100, 234, -100]) * MHZ, np.array([0, 0, 234, 0]) * MHZ, 20 * NS)
    ctl = compile_schedule(Schedule(4, (ramp,)), 0.25 * NS)
    vec = np.zeros(basis.dim, complex)
    vec[basis.position((1, 1, 0, 0))] = 1
    batched = SectorStepper(basis, StepPolicy(), dense=True).propagate(vec, ctl.detunings, ctl.steps, 0, ctl.n_samples)
    st = SectorStepper(basis, StepPolicy())
    ref = vec
    for k in range(ctl.n_samples):
        ref = st.step(ref, ctl.detunings[k], ctl.steps[k])
    np.testing.assert_allclose(batched, ref, atol=1e-10)
    block = evolve_block(basis, np.eye(basis.dim, dtype=complex), ctl)
    np.testing.assert_allclose(block @ vec, ref, atol=1e-10)
    np.testing.assert_allclose(block.conj().T @ block, np.eye(basis.dim), atol=1e-10)


def test_constant_runs_split_on_changes():
    det = np.array([[0, 0], [0, 0], [1, 0], [1, 0], [1, 0], [0, 0]], float)
    steps = np.array([1, 1, 1, 1, 2, 2], float)
    assert list(constant_runs(det, steps, 0, 6)) == [(0, 2), (2, 4), (4, 5), (5, 6)]
    assert list(constant_runs(det, steps, 3, 3)) == []


def test_eigensolver_cap():
    with pytest.raises(CapabilityError):
        eigensolve_sector(np.eye(10), cap=5)


def test_adiabatic_fidelity_flags_degeneracy():
    lat = LatticeSpec.uniform(3, 0.0, -1.0)
    reg = BasisRegistry(lat)
    H = {1: build_hamiltonian(lat, np.zeros(3), reg[1])}
    psi = CompositeState.basis_state(reg, (1, 0, 0))
    with pytest.raises(AmbiguityError):
        adiabatic_fidelity(psi, H, {1: 0}, energy_scale=1.0)


def test_tracking_follows_level_through_a_crossing_group():
    lat = LatticeSpec(2, (-0.01,), (-100.0, -100.0))
    basis = BasisRegistry(lat)[1]
    path = [np.array([x, -x]) for x in np.linspace(1.0, -1.0, 201)]
    seed = np.zeros(basis.dim, complex)
    seed[basis.position((1, 0))] = 1
    # resolved: the state stays on the lower branch and ends on site 1
    adiabatic = track_eigenstate(basis, path, seed)
    assert abs(adiabatic.vector[basis.position((0, 1))]) ** 2 > 0.99
    # splitting 0.02 below atol: treated as one group, the state stays put
    diabatic = track_eigenstate(basis, path, seed, atol=0.1)
    assert abs(diabatic.vector[basis.position((1, 0))]) ** 2 > 0.99
    assert adiabatic.min_gap == pytest.approx(0.02, rel=1e-3)
