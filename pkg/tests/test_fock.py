import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bhtransistor.errors import DomainError
from bhtransistor.fock import (
    BasisRegistry,
    CompositeState,
    LatticeSpec,
    build_hamiltonian,
    density_expectation,
    energy_expectation,
    enumerate_sector,
    sector_overlap,
    site_distribution,
)


def _full_space_hamiltonian(lat: LatticeSpec, det):
    """Kronecker-product construction on the whole truncated Hilbert space."""
    d = lat.n_max + 1
    a = np.diag(np.sqrt(np.arange(1, d)), 1)
    eye = np.eye(d)

    def on(site, op):
        mats = [op if i == site else eye for i in range(lat.n_sites)]
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    H = np.zeros((d**lat.n_sites,) * 2)
    for i, J in enumerate(lat.J_bonds):
        hop = on(i, a.T) @ on(i + 1, a)
        H += J * (hop + hop.T)
    for i in range(lat.n_sites):
        n = on(i, a.T @ a)
        H += 0.5 * lat.U_sites[i] * n @ (n - np.eye(len(n))) + det[i] * n
    return H


def _full_index(occ, d):
    idx = 0
    for n in occ:
        idx = idx * d + n
    return idx


@settings(max_examples=30, deadline=None)
@given(
    n_sites=st.integers(2, 5),
    n_max=st.integers(1, 3),
    data=st.data(),
)
def test_sector_dimension_counts_bounded_compositions(n_sites, n_max, data):
    n_total = data.draw(st.integers(0, n_sites * n_max))
    lat = LatticeSpec.uniform(n_sites, 1.0, 0.0, n_max)
    expected = sum(1 for occ in itertools.product(range(n_max + 1), repeat=n_sites) if sum(occ) == n_total)
    basis = enumerate_sector(lat, n_total)
    assert basis.dim == expected
    assert np.all(basis.states.sum(axis=1) == n_total)
    assert len({tuple(s) for s in basis.states}) == expected


@settings(max_examples=15, deadline=None)
@given(
    n_sites=st.integers(2, 4),
    n_total=st.integers(1, 4),
    seed=st.integers(0, 2**16),
)
def test_sector_hamiltonian_matches_full_space_construction(n_sites, n_total, seed):
    rng = np.random.default_rng(seed)
    lat = LatticeSpec(n_sites, tuple(rng.normal(size=n_sites - 1)), tuple(rng.normal(size=n_sites) * 5))
    det = rng.normal(size=n_sites)
    if n_total > n_sites * lat.n_max:
        return
    basis = enumerate_sector(lat, n_total)
    H = build_hamiltonian(lat, det, basis).toarray()
    full = _full_space_hamiltonian(lat, det)
    idx = [_full_index(s, lat.n_max + 1) for s in basis.states]
    np.testing.assert_allclose(H.real, full[np.ix_(idx, idx)], atol=1e-12)
    assert np.allclose(H, H.conj().T)


def test_two_site_single_particle_levels():
    J, d0, d1 = -8.0, 3.0, -1.0
    lat = LatticeSpec(2, (J,), (-200.0, -200.0))
    w = np.linalg.eigvalsh(build_hamiltonian(lat, [d0, d1], enumerate_sector(lat, 1)).toarray())
    mean, half = (d0 + d1) / 2, np.hypot((d0 - d1) / 2, J)
    np.testing.assert_allclose(w, [mean - half, mean + half])


def test_doublon_energy_is_U():
    lat = LatticeSpec(2, (0.0,), (-240.0, -230.0))
    basis = enumerate_sector(lat, 2)
    H = build_hamiltonian(lat, [0.0, 0.0], basis).toarray()
    assert H[basis.position((2, 0)), basis.position((2, 0))] == pytest.approx(-240.0)
    assert H[basis.position((0, 2)), basis.position((0, 2))] == pytest.approx(-230.0)
    assert H[basis.position((1, 1)), basis.position((1, 1))] == 0.0


def test_lattice_validation():
    with pytest.raises(DomainError):
        LatticeSpec(1, (), (0.0,))
    with pytest.raises(DomainError):
        LatticeSpec(3, (1.0,), (0.0, 0.0, 0.0))
    with pytest.raises(DomainError):
        LatticeSpec(2, (np.nan,), (0.0, 0.0))
    with pytest.raises(DomainError):
        enumerate_sector(LatticeSpec.uniform(2, 1.0, 0.0), 5)


def test_composite_state_bookkeeping():
    reg = BasisRegistry(LatticeSpec.uniform(3, 1.0, -10.0))
    psi = CompositeState.from_amplitudes(reg, {(1, 0, 0): 0.6, (1, 1, 0): 0.8j})
    assert set(psi.sectors) == {1, 2}
    assert psi.norm() == pytest.approx(1.0)
    assert psi.amplitude((1, 1, 0)) == pytest.approx(0.8j)
    assert psi.amplitude((0, 0, 2)) == 0
    assert psi.amplitude((2, 2, 2)) == 0
    np.testing.assert_allclose(density_expectation(psi), [1.0, 0.64, 0.0])
    np.testing.assert_allclose(site_distribution(psi, 1), [0.36, 0.64, 0.0])
    assert psi.sector_weights() == pytest.approx({1: 0.36, 2: 0.64})
    assert sector_overlap(psi, psi) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        CompositeState(reg, {1: np.ones(2)})
    with pytest.raises(DomainError):
        CompositeState(reg, {}).normalized()


def test_energy_expectation_of_eigenstate():
    lat = LatticeSpec.uniform(4, -9.0, -240.0)
    reg = BasisRegistry(lat)
    det = np.array([5.0, -3.0, 0.0, 7.0])
    H = build_hamiltonian(lat, det, reg[2]).toarray()
    w, V = np.linalg.eigh(H)
    psi = CompositeState(reg, {2: V[:, 3]})
    assert energy_expectation(psi, det) == pytest.approx(w[3])


def test_density_of_product_state_is_its_occupation():
    reg = BasisRegistry(LatticeSpec.uniform(5, 1.0, -1.0))
    occ = (1, 0, 2, 0, 1)
    np.testing.assert_array_equal(density_expectation(CompositeState.basis_state(reg, occ)), occ)
