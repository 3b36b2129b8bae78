"""Truncated bosonic Fock bases and the Bose-Hubbard Hamiltonian.

Everything here works in a frame rotating at the bare lattice frequency, so a
site only carries its detuning ``delta_i``.  Frequencies are angular (rad/s).

    H = sum_<ij> J_ij (a_i^dag a_j + h.c.) + sum_i U_i/2 n_i (n_i - 1) + sum_i delta_i n_i

The Hamiltonian conserves total particle number, so states are stored sector
by sector (see :class:`CompositeState`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import DomainError

FockState = tuple[int, ...]


@dataclass(frozen=True)
class LatticeSpec:
    """Open 1D chain: per-bond tunneling ``J_bonds`` and per-site ``U_sites``."""

    n_sites: int
    J_bonds: tuple[float, ...]
    U_sites: tuple[float, ...]
    n_max: int = 2

    def __post_init__(self):
        object.__setattr__(self, "J_bonds", tuple(float(j) for j in self.J_bonds))
        object.__setattr__(self, "U_sites", tuple(float(u) for u in self.U_sites))
        if self.n_sites < 2:
            raise DomainError(f"n_sites must be >= 2, got {self.n_sites}")
        if self.n_max < 1:
            raise DomainError(f"n_max must be >= 1, got {self.n_max}")
        if len(self.J_bonds) != self.n_sites - 1:
            raise DomainError(
                f"expected {self.n_sites - 1} bond couplings, got {len(self.J_bonds)}"
            )
        if len(self.U_sites) != self.n_sites:
            raise DomainError(f"expected {self.n_sites} interactions, got {len(self.U_sites)}")
        if not (np.all(np.isfinite(self.J_bonds)) and np.all(np.isfinite(self.U_sites))):
            raise DomainError("J_bonds and U_sites must be finite")

    @classmethod
    def uniform(cls, n_sites: int, J: float, U: float, n_max: int = 2) -> "LatticeSpec":
        return cls(n_sites, (J,) * (n_sites - 1), (U,) * n_sites, n_max)

    def with_n_max(self, n_max: int) -> "LatticeSpec":
        return LatticeSpec(self.n_sites, self.J_bonds, self.U_sites, n_max)


def _occupations(n_sites: int, n_total: int, n_max: int) -> Iterable[FockState]:
    # Lexicographic (ascending) generation without touching infeasible prefixes.
    if n_sites == 0:
        if n_total == 0:
            yield ()
        return
    rest = n_sites - 1
    for first in range(min(n_max, n_total) + 1):
        if n_total - first > rest * n_max:
            continue
        for tail in _occupations(rest, n_total - first, n_max):
            yield (first,) + tail


class SectorBasis:
    """Fixed-particle-number basis in lexicographic order.

    ``states`` is an integer array of shape ``(dim, n_sites)``; ``index`` maps an
    occupation tuple back to its row.
    """

    def __init__(self, lattice: LatticeSpec, n_total: int):
        self.lattice = lattice
        self.n_total = n_total
        states = list(_occupations(lattice.n_sites, n_total, lattice.n_max))
        self.states = np.array(states, dtype=np.int64).reshape(len(states), lattice.n_sites)
        self.states.setflags(write=False)
        self.index: dict[FockState, int] = {s: i for i, s in enumerate(states)}

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"SectorBasis(n_sites={self.lattice.n_sites}, n_total={self.n_total}, dim={self.dim})"

    def position(self, occupations: Iterable[int]) -> int:
        key = tuple(int(n) for n in occupations)
        try:
            return self.index[key]
        except KeyError:
            raise DomainError(f"{key} is not in sector N={self.n_total}") from None

    @cached_property
    def occupation_matrix(self) -> np.ndarray:
        """Occupations as floats, handy for ``occ @ detunings``."""
        occ = self.states.astype(float)
        occ.setflags(write=False)
        return occ

    @cached_property
    def hopping(self) -> sp.csr_matrix:
        """Sum over bonds of J_b (a_i^dag a_j + h.c.), real symmetric."""
        lat = self.lattice
        rows, cols, vals = [], [], []
        for col, occ in enumerate(self.states):
            for b, J in enumerate(lat.J_bonds):
                if J == 0.0:
                    continue
                for src, dst in ((b + 1, b), (b, b + 1)):
                    n_src, n_dst = occ[src], occ[dst]
                    if n_src == 0 or n_dst >= lat.n_max:
                        continue
                    new = occ.copy()
                    new[src] -= 1
                    new[dst] += 1
                    rows.append(self.index[tuple(new)])
                    cols.append(col)
                    vals.append(J * np.sqrt(n_src * (n_dst + 1.0)))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    @cached_property
    def interaction(self) -> np.ndarray:
        """Diagonal of sum_i U_i/2 n_i (n_i - 1)."""
        occ = self.occupation_matrix
        diag = 0.5 * (occ * (occ - 1.0)) @ np.asarray(self.lattice.U_sites)
        diag.setflags(write=False)
        return diag

    def diagonal(self, detunings: np.ndarray) -> np.ndarray:
        """Interaction plus detuning diagonal for a detuning vector."""
        return self.interaction + self.occupation_matrix @ detunings


@lru_cache(maxsize=256)
def enumerate_sector(lattice: LatticeSpec, n_total: int) -> SectorBasis:
    """All occupation vectors with entries <= n_max summing to ``n_total``."""
    if not 0 <= n_total <= lattice.n_sites * lattice.n_max:
        raise DomainError(
            f"n_total={n_total} outside [0, {lattice.n_sites * lattice.n_max}]"
        )
    return SectorBasis(lattice, n_total)


class BasisRegistry:
    """Lazily built sector bases for one lattice."""

    def __init__(self, lattice: LatticeSpec):
        self.lattice = lattice

    def __getitem__(self, n_total: int) -> SectorBasis:
        return enumerate_sector(self.lattice, n_total)

    def __eq__(self, other) -> bool:
        return isinstance(other, BasisRegistry) and other.lattice == self.lattice

    def __hash__(self) -> int:
        return hash(self.lattice)


def _check_detunings(lattice: LatticeSpec, detunings) -> np.ndarray:
    d = np.asarray(detunings, dtype=float)
    if d.shape != (lattice.n_sites,):
        raise DomainError(f"expected {lattice.n_sites} detunings, got shape {d.shape}")
    return d


def build_hamiltonian(lattice: LatticeSpec, detunings, basis: SectorBasis) -> sp.csr_matrix:
    """Sparse Bose-Hubbard Hamiltonian restricted to one number sector."""
    if basis.lattice != lattice:
        raise DomainError("basis was built for a different lattice")
    d = _check_detunings(lattice, detunings)
    H = basis.hopping + sp.diags(basis.diagonal(d))
    return sp.csr_matrix(H, dtype=complex)


def number_operator(basis: SectorBasis, site: int) -> sp.csr_matrix:
    return sp.diags(basis.occupation_matrix[:, site]).tocsr()


@dataclass
class CompositeState:
    """Amplitudes over a direct sum of number sectors.

    ``sectors`` maps particle number to a complex vector over that sector's basis.
    Missing sectors carry zero amplitude.
    """

    registry: BasisRegistry
    sectors: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for n, vec in self.sectors.items():
            v = np.asarray(vec, dtype=complex)
            if v.shape != (self.registry[n].dim,):
                raise DomainError(
                    f"sector {n}: expected length {self.registry[n].dim}, got {v.shape}"
                )
            clean[int(n)] = v
        self.sectors = dict(sorted(clean.items()))

    @property
    def lattice(self) -> LatticeSpec:
        return self.registry.lattice

    @classmethod
    def from_amplitudes(
        cls, registry: BasisRegistry, amplitudes: Mapping[Iterable[int], complex]
    ) -> "CompositeState":
        sectors: dict[int, np.ndarray] = {}
        for occ, amp in amplitudes.items():
            occ = tuple(int(n) for n in occ)
            n = sum(occ)
            basis = registry[n]
            vec = sectors.setdefault(n, np.zeros(basis.dim, dtype=complex))
            vec[basis.position(occ)] += amp
        return cls(registry, sectors)

    @classmethod
    def basis_state(cls, registry: BasisRegistry, occupations: Iterable[int]) -> "CompositeState":
        return cls.from_amplitudes(registry, {tuple(occupations): 1.0})

    def copy(self) -> "CompositeState":
        return CompositeState(self.registry, {n: v.copy() for n, v in self.sectors.items()})

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(v, v).real for v in self.sectors.values())))

    def normalized(self) -> "CompositeState":
        nrm = self.norm()
        if nrm == 0.0:
            raise DomainError("cannot normalize the zero state")
        return CompositeState(self.registry, {n: v / nrm for n, v in self.sectors.items()})

    def sector_weights(self) -> dict[int, float]:
        return {n: float(np.vdot(v, v).real) for n, v in self.sectors.items()}

    def probabilities(self) -> dict[FockState, float]:
        """Born probabilities of each basis state with nonzero weight."""
        out = {}
        for n, v in self.sectors.items():
            basis = self.registry[n]
            p = np.abs(v) ** 2
            for i in np.flatnonzero(p):
                out[tuple(int(x) for x in basis.states[i])] = float(p[i])
        return out

    def amplitude(self, occupations: Iterable[int]) -> complex:
        occ = tuple(int(n) for n in occupations)
        v = self.sectors.get(sum(occ))
        if v is None:
            return 0j
        return complex(v[self.registry[sum(occ)].position(occ)])


def density_expectation(state: CompositeState) -> np.ndarray:
    """Per-site mean occupation summed over sectors."""
    dens = np.zeros(state.lattice.n_sites)
    for n, v in state.sectors.items():
        dens += (np.abs(v) ** 2) @ state.registry[n].occupation_matrix
    return dens


def site_distribution(state: CompositeState, site: int) -> np.ndarray:
    """Probability of each occupancy 0..n_max on one site."""
    n_max = state.lattice.n_max
    out = np.zeros(n_max + 1)
    for n, v in state.sectors.items():
        occ = state.registry[n].states[:, site]
        np.add.at(out, occ, np.abs(v) ** 2)
    return out


def sector_overlap(a: CompositeState, b: CompositeState) -> complex:
    """<a|b>; sectors present in only one operand contribute nothing."""
    if a.lattice != b.lattice:
        raise DomainError("states live on different lattices")
    return complex(sum(np.vdot(a.sectors[n], b.sectors[n]) for n in a.sectors.keys() & b.sectors.keys()))


def energy_expectation(state: CompositeState, detunings) -> float:
    d = _check_detunings(state.lattice, detunings)
    total = 0.0
    for n, v in state.sectors.items():
        basis = state.registry[n]
        total += np.vdot(v, basis.hopping @ v + basis.diagonal(d) * v).real
    return float(total)
