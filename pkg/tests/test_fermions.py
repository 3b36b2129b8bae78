import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtransistor.errors import DomainError
from bhtransistor.fermions import (
    FreeFermionChain,
    band_energy,
    fluid_density,
    quasi_momentum_energy,
    single_particle_modes,
    two_phonon_target,
)
from bhtransistor.fock import BasisRegistry, CompositeState, LatticeSpec, build_hamiltonian, density_expectation


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), J=st.floats(-20, 20).filter(lambda x: abs(x) > 1e-3))
def test_closed_form_matches_matrix_diagonalization(n, J):
    chain = FreeFermionChain(n, J)
    eps, phi = single_particle_modes(chain)
    np.testing.assert_allclose(eps, np.linalg.eigvalsh(chain.matrix()), atol=1e-12 * abs(J) * n)
    np.testing.assert_allclose(phi @ phi.T, np.eye(n), atol=1e-12)


def test_disordered_chain_uses_tridiagonal_solver():
    chain = FreeFermionChain(4, -1.0, (0.3, -0.2, 0.0, 1.1))
    assert not chain.uniform
    eps, phi = single_particle_modes(chain)
    H = chain.matrix()
    np.testing.assert_allclose(eps, np.linalg.eigvalsh(H), atol=1e-12)
    np.testing.assert_allclose(H @ phi.T, phi.T * eps, atol=1e-12)


def test_two_particle_density_on_five_sites():
    # analytic: (2/6)(sin^2(pi i/6) + sin^2(2 pi i/6))
    dens = fluid_density(FreeFermionChain(5, -1.0), [1, 2])
    np.testing.assert_allclose(dens, [1 / 3, 1 / 2, 1 / 3, 1 / 2, 1 / 3], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 9), data=st.data())
def test_density_sums_to_particle_number(n, data):
    modes = data.draw(st.sets(st.integers(1, n), max_size=n))
    dens = fluid_density(FreeFermionChain(n, 1.0), modes)
    assert dens.sum() == pytest.approx(len(modes))
    assert np.all(dens <= 1 + 1e-12)


def test_pauli_exclusion_and_range():
    chain = FreeFermionChain(5, 1.0)
    with pytest.raises(DomainError):
        fluid_density(chain, [2, 2])
    with pytest.raises(DomainError):
        band_energy(chain, [6])
    with pytest.raises(DomainError):
        quasi_momentum_energy(chain, 0)


def test_two_phonon_target_on_five_sites():
    # eps_k = 2J cos(pi k / 6): both 1->4 and 2->5 cost -(1 + sqrt 3) J
    J = -9.0
    gap = two_phonon_target(FreeFermionChain(5, J), [1, 2], [4, 5])
    assert gap == pytest.approx(-2.7320508075688772 * J)


def test_two_phonon_target_rejects_mismatched_pairs():
    with pytest.raises(DomainError):
        two_phonon_target(FreeFermionChain(5, 1.0), [1, 2], [3, 5])
    with pytest.raises(DomainError):
        two_phonon_target(FreeFermionChain(5, 1.0), [1], [4])


def test_hard_core_bosons_match_fermions_on_small_chain():
    J = -1.0
    lat = LatticeSpec.uniform(4, J, 1e4)
    reg = BasisRegistry(lat)
    w, V = np.linalg.eigh(build_hamiltonian(lat, np.zeros(4), reg[2]).toarray())
    dens = density_expectation(CompositeState(reg, {2: V[:, 0]}))
    chain = FreeFermionChain(4, J)
    np.testing.assert_allclose(dens, fluid_density(chain, [1, 2]), atol=1e-3)
    assert w[0] == pytest.approx(band_energy(chain, [1, 2]), abs=1e-2)
