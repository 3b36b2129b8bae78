"""Free-fermion oracle for the hard-core limit.

Hard-core bosons on an open chain map onto non-interacting spinless fermions
(Jordan-Wigner), so densities and band energies follow from single-particle
modes.  Only densities and energies are provided; the string operators never
matter for them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DomainError


@dataclass(frozen=True)
class FreeFermionChain:
    n_sites: int
    J: float
    detunings: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise DomainError(f"n_sites must be >= 1, got {self.n_sites}")
        if self.detunings is not None:
            d = tuple(float(x) for x in self.detunings)
            if len(d) != self.n_sites:
                raise DomainError(f"expected {self.n_sites} detunings, got {len(d)}")
            object.__setattr__(self, "detunings", d)

    @property
    def uniform(self) -> bool:
        return self.detunings is None or not any(self.detunings)

    def matrix(self) -> np.ndarray:
        h = np.diag(np.zeros(self.n_sites) if self.detunings is None else np.array(self.detunings))
        off = np.full(self.n_sites - 1, self.J)
        return h + np.diag(off, 1) + np.diag(off, -1)


def single_particle_modes(chain: FreeFermionChain) -> tuple[np.ndarray, np.ndarray]:
    """Energies ascending and mode functions ``phi[k, i]`` (row k is mode k+1 in the sorted order).

    The uniform chain uses the closed form 2J cos(pi k/(N+1)); anything else is
    diagonalized as a tridiagonal matrix.
    """
    N = chain.n_sites
    if chain.uniform:
        k = np.arange(1, N + 1)
        i = np.arange(1, N + 1)
        eps = 2.0 * chain.J * np.cos(np.pi * k / (N + 1))
        phi = np.sqrt(2.0 / (N + 1)) * np.sin(np.pi * np.outer(k, i) / (N + 1))
        order = np.argsort(eps, kind="stable")
        return eps[order], phi[order]
    d = np.array(chain.detunings)
    eps, vecs = eigh_tridiagonal(d, np.full(N - 1, chain.J))
    return eps, vecs.T


def _mode_indices(chain: FreeFermionChain, modes: Iterable[int]) -> list[int]:
    modes = [int(m) for m in modes]
    if len(set(modes)) != len(modes):
        raise DomainError(f"mode set {modes} repeats a mode (Pauli exclusion)")
    for m in modes:
        if not 1 <= m <= chain.n_sites:
            raise DomainError(f"mode {m} outside 1..{chain.n_sites}")
    return [m - 1 for m in modes]


def fluid_density(chain: FreeFermionChain, occupied: Iterable[int]) -> np.ndarray:
    """Site density of a Slater determinant; modes are 1-based in ascending-energy order."""
    idx = _mode_indices(chain, occupied)
    _, phi = single_particle_modes(chain)
    if not idx:
        return np.zeros(chain.n_sites)
    return np.sum(np.abs(phi[idx]) ** 2, axis=0)


def band_energy(chain: FreeFermionChain, occupied: Iterable[int]) -> float:
    idx = _mode_indices(chain, occupied)
    eps, _ = single_particle_modes(chain)
    return float(np.sum(eps[idx]))


def quasi_momentum_energy(chain: FreeFermionChain, k: int) -> float:
    """eps_k = 2J cos(pi k/(N+1)) labelled by quasi-momentum index k (uniform chain)."""
    if not 1 <= k <= chain.n_sites:
        raise DomainError(f"k={k} outside 1..{chain.n_sites}")
    return float(2.0 * chain.J * np.cos(np.pi * k / (chain.n_sites + 1)))


def two_phonon_target(
    chain: FreeFermionChain,
    from_modes: Sequence[int],
    to_modes: Sequence[int],
    rtol: float = 1e-6,
) -> float:
    """Common particle-hole gap for moving ``from_modes[j] -> to_modes[j]``.

    Modes are quasi-momentum labels k (uniform chain).  Both pairs must be
    resonant with the same drive, otherwise the process is not a single tone.
    """
    if len(from_modes) != 2 or len(to_modes) != 2:
        raise DomainError("two_phonon_target needs exactly two source and two target modes")
    gaps = [
        quasi_momentum_energy(chain, b) - quasi_momentum_energy(chain, a)
        for a, b in zip(from_modes, to_modes)
    ]
    if abs(gaps[0] - gaps[1]) > rtol * abs(chain.J):
        raise DomainError(f"pair gaps differ: {gaps[0]!r} vs {gaps[1]!r}")
    return float(0.5 * (gaps[0] + gaps[1]))
