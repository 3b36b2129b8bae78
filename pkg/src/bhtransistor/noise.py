"""Decoherence and readout: Monte-Carlo wavefunction trajectories, quasi-static
flux noise and projective readout through confusion matrices.

Jump operators per site are ``sqrt(1/T1) a`` (photon loss, moves amplitude to
the sector with one particle fewer) and ``sqrt(2/Tphi) n`` (pure dephasing),
with ``1/Tphi = 1/T2 - 1/(2 T1)``.  Every trajectory draws from its own
Philox stream keyed by ``(seed, shot)``, so results do not depend on the order
in which shots are executed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError
from .fock import CompositeState, LatticeSpec, enumerate_sector
from .propagate import SectorStepper, StepPolicy, evolve_sampled


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _per_site(x, n: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise DomainError(f"{name}: expected {n} values, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class NoiseModel:
    """Per-site T1, T2 (s), quasi-static detuning spread sigma (rad/s) and a seed.

    ``np.inf`` switches a channel off.
    """

    T1: tuple[float, ...]
    T2: tuple[float, ...]
    sigma: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        n = len(np.atleast_1d(self.T1))
        T1 = _per_site(self.T1, n, "T1")
        T2 = _per_site(self.T2, n, "T2")
        sigma = _per_site(self.sigma, n, "sigma")
        problems = []
        if np.any(~(T1 > 0)):
            problems.append("T1 must be > 0")
        if np.any(~(T2 > 0)):
            problems.append("T2 must be > 0")
        finite = np.isfinite(T1)
        if np.any(T2[finite] > 2 * T1[finite] * (1 + 1e-12)):
            problems.append("T2 must not exceed 2*T1")
        if np.any(~(sigma >= 0)):
            problems.append("sigma must be >= 0")
        if problems:
            raise DomainError("; ".join(problems))
        object.__setattr__(self, "T1", tuple(T1))
        object.__setattr__(self, "T2", tuple(T2))
        object.__setattr__(self, "sigma", tuple(sigma))

    @classmethod
    def noiseless(cls, n_sites: int, seed: int = 0) -> "NoiseModel":
        inf = (np.inf,) * n_sites
        return cls(inf, inf, (0.0,) * n_sites, seed)

    @property
    def n_sites(self) -> int:
        return len(self.T1)

    @property
    def decay_rates(self) -> np.ndarray:
        return 1.0 / np.asarray(self.T1)

    @property
    def dephasing_rates(self) -> np.ndarray:
        """1/Tphi per site, clipped at zero for T2 = 2 T1."""
        r = 1.0 / np.asarray(self.T2) - 0.5 / np.asarray(self.T1)
        return np.clip(r, 0.0, None)

    @property
    def markovian(self) -> bool:
        return bool(np.any(self.decay_rates > 0) or np.any(self.dephasing_rates > 0))

    @property
    def quasistatic(self) -> bool:
        return bool(np.any(np.asarray(self.sigma) > 0))

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.T1, self.T2, self.sigma, seed)

    def scaled(self, markovian: bool = True, quasistatic: bool = True) -> "NoiseModel":
        n = self.n_sites
        return NoiseModel(
            self.T1 if markovian else (np.inf,) * n,
            self.T2 if markovian else (np.inf,) * n,
            self.sigma if quasistatic else (0.0,) * n,
            self.seed,
        )


def sample_quasistatic(model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One shot's static detuning offsets (rad/s)."""
    sigma = np.asarray(model.sigma)
    z = rng.standard_normal(sigma.shape)
    return sigma * z


@lru_cache(maxsize=512)
def _lowering(lattice: LatticeSpec, n: int, site: int):
    """a_site from sector n to n-1 as (source rows, target rows, sqrt factors)."""
    src = enumerate_sector(lattice, n)
    dst = enumerate_sector(lattice, n - 1)
    occ = src.states[:, site]
    rows = np.flatnonzero(occ > 0)
    targets = src.states[rows].copy()
    targets[:, site] -= 1
    tgt = np.array([dst.index[tuple(t)] for t in targets], dtype=np.int64)
    return rows, tgt, np.sqrt(occ[rows].astype(float))


def apply_lowering(state: CompositeState, site: int) -> CompositeState:
    """a_site |state> (unnormalized)."""
    out: dict[int, np.ndarray] = {}
    for n, v in state.sectors.items():
        if n == 0:
            continue
        rows, tgt, fac = _lowering(state.lattice, n, site)
        w = out.setdefault(n - 1, np.zeros(state.registry[n - 1].dim, dtype=complex))
        np.add.at(w, tgt, fac * v[rows])
    return CompositeState(state.registry, out)


def _damping(state: CompositeState, rates1: np.ndarray, ratesphi: np.ndarray) -> dict[int, np.ndarray]:
    # diagonal of sum_i L_i^dag L_i in each sector
    out = {}
    for n in state.sectors:
        occ = state.registry[n].occupation_matrix
        out[n] = occ @ rates1 + (occ**2) @ (2.0 * ratesphi)
    return out


def _norm2(sectors: dict[int, np.ndarray]) -> float:
    return float(sum(np.vdot(v, v).real for v in sectors.values()))


def _jump(state: CompositeState, rates1, ratesphi, rng) -> CompositeState:
    weights, actions = [], []
    for i in range(state.lattice.n_sites):
        if rates1[i] > 0:
            mean_n = sum((np.abs(v) ** 2) @ state.registry[n].occupation_matrix[:, i] for n, v in state.sectors.items())
            weights.append(rates1[i] * mean_n)
            actions.append(("decay", i))
        if ratesphi[i] > 0:
            mean_n2 = sum((np.abs(v) ** 2) @ state.registry[n].occupation_matrix[:, i] ** 2 for n, v in state.sectors.items())
            weights.append(2.0 * ratesphi[i] * mean_n2)
            actions.append(("dephase", i))
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        return state, "none", -1
    kind, i = actions[int(rng.choice(len(w), p=w / w.sum()))]
    if kind == "decay":
        new = apply_lowering(state, i)
    else:
        new = CompositeState(
            state.registry,
            {n: v * state.registry[n].occupation_matrix[:, i] for n, v in state.sectors.items()},
        )
    return new.normalized(), kind, i


@dataclass
class TrajectoryLog:
    jumps: list[tuple[float, str, int]] = field(default_factory=list)
    offsets: np.ndarray | None = None


def evolve_trajectory(
    state: CompositeState,
    controls,
    model: NoiseModel,
    rng: np.random.Generator,
    policy: StepPolicy = StepPolicy(),
    offsets: np.ndarray | None = None,
    log: TrajectoryLog | None = None,
    chunk: int = 10,
    rotation_threshold: float = 1e-6,
) -> CompositeState:
    """One Monte-Carlo wavefunction trajectory through compiled controls.

    Quasi-static offsets are drawn from ``rng`` first (unless given) and held
    for the whole shot.  Between jumps the state follows the non-Hermitian
    Hamiltonian H - i/2 sum L^dag L with a symmetric (Strang) split of the
    diagonal damping; a jump fires when the squared norm falls below a uniform
    draw.  Runs of identical samples are advanced ``chunk`` samples at a time,
    which bounds the jump-time resolution.
    """
    from .schedule import apply_event

    if model.n_sites != state.lattice.n_sites:
        raise DomainError("noise model and state have different numbers of sites")
    if offsets is None:
        offsets = sample_quasistatic(model, rng) if model.quasistatic else np.zeros(model.n_sites)
    if log is not None:
        log.offsets = np.asarray(offsets)
    if np.any(offsets != 0):
        controls = controls.with_offsets(offsets)
    if not model.markovian:
        return evolve_sampled(state, controls, policy, rotation_threshold)
    if controls.n_samples == 0 and not controls.events:
        raise DomainError("controls are empty")

    rates1 = model.decay_rates
    ratesphi = model.dephasing_rates
    cur = state.copy()
    threshold = rng.random()
    steppers: dict[int, SectorStepper] = {}
    events_at = controls.events_by_index()
    t = 0.0

    def advance(cur, det, h):
        damp = _damping(cur, rates1, ratesphi)
        sectors = {}
        for n, v in cur.sectors.items():
            st = steppers.get(n)
            if st is None:
                st = steppers[n] = SectorStepper(cur.registry[n], policy)
            half = np.exp(-0.25 * damp[n] * h)
            sectors[n] = half * st.step(half * v, det, h)
        return CompositeState(cur.registry, sectors)

    i = 0
    n_samples = controls.n_samples
    while i <= n_samples:
        for ev in events_at.get(i, ()):
            cur = apply_event(cur, ev, threshold=rotation_threshold)
        if i == n_samples:
            break
        j = i + 1
        while (
            j < n_samples
            and j - i < chunk
            and j not in events_at
            and controls.steps[j] == controls.steps[i]
            and np.array_equal(controls.detunings[j], controls.detunings[i])
        ):
            j += 1
        h = float(controls.steps[i]) * (j - i)
        cur = advance(cur, controls.detunings[i], h)
        t += h
        if _norm2(cur.sectors) <= threshold:
            cur, kind, site = _jump(cur, rates1, ratesphi, rng)
            if log is not None:
                log.jumps.append((t, kind, site))
            threshold = rng.random()
        i = j
    nrm = cur.norm()
    if nrm == 0 or not np.isfinite(nrm):
        raise NumericError("trajectory lost its norm", norm=nrm)
    return cur.normalized()


# ---------------------------------------------------------------- readout


def symmetric_confusion(fidelity: float, levels: int = 3) -> np.ndarray:
    """Diagonal ``fidelity``, the remainder split evenly over the other outcomes."""
    if not 0.0 <= fidelity <= 1.0:
        raise DomainError(f"fidelity must lie in [0, 1], got {fidelity}")
    C = np.full((levels, levels), (1.0 - fidelity) / (levels - 1))
    np.fill_diagonal(C, fidelity)
    return C


@dataclass(frozen=True)
class ReadoutModel:
    """Per-site confusion matrices: rows true state, columns reported state."""

    confusion: np.ndarray

    def __post_init__(self):
        C = np.array(self.confusion, dtype=float)
        if C.ndim != 3 or C.shape[1] != C.shape[2]:
            raise DomainError(f"confusion must have shape (n_sites, d, d), got {C.shape}")
        if np.any(C < 0) or np.any(C > 1):
            raise DomainError("confusion entries must lie in [0, 1]")
        bad = np.flatnonzero(np.any(np.abs(C.sum(axis=2) - 1.0) > 1e-12, axis=1))
        if bad.size:
            raise DomainError(f"confusion rows must sum to 1 (sites {bad.tolist()})")
        C.setflags(write=False)
        object.__setattr__(self, "confusion", C)

    @classmethod
    def ideal(cls, n_sites: int, levels: int = 3) -> "ReadoutModel":
        return cls(np.repeat(np.eye(levels)[None], n_sites, axis=0))

    @classmethod
    def from_fidelities(cls, fidelities: Sequence[float], levels: int = 3) -> "ReadoutModel":
        return cls(np.stack([symmetric_confusion(f, levels) for f in fidelities]))

    @property
    def n_sites(self) -> int:
        return self.confusion.shape[0]

    @property
    def levels(self) -> int:
        return self.confusion.shape[1]


def _flat_distribution(state: CompositeState):
    probs, occs = [], []
    for n, v in state.sectors.items():
        p = np.abs(v) ** 2
        probs.append(p)
        occs.append(state.registry[n].states)
    return np.concatenate(probs), np.concatenate(occs)


def measure_occupations(
    state: CompositeState, readout: ReadoutModel, rng: np.random.Generator, shots: int = 1
) -> np.ndarray:
    """Sampled reported occupations, shape (shots, n_sites)."""
    if readout.n_sites != state.lattice.n_sites:
        raise DomainError("readout model and state have different numbers of sites")
    p, occ = _flat_distribution(state)
    total = p.sum()
    if abs(total - 1.0) > 1e-8:
        raise DomainError(f"state is not normalized (norm^2 = {total:.12g})")
    idx = rng.choice(len(p), size=shots, p=p / total)
    true = occ[idx]
    if np.any(true >= readout.levels):
        raise DomainError("occupation exceeds the readout model's number of levels")
    out = np.empty_like(true)
    u = rng.random(true.shape)
    for i in range(true.shape[1]):
        cdf = np.cumsum(readout.confusion[i], axis=1)
        rows = cdf[true[:, i]]
        out[:, i] = np.minimum((u[:, [i]] >= rows).sum(axis=1), readout.levels - 1)
    return out


def reported_probability(
    state: CompositeState, readout: ReadoutModel, sites: Sequence[int], outcomes: Sequence[int]
) -> float:
    """Exact probability that every listed site reports its listed outcome."""
    p, occ = _flat_distribution(state)
    weight = p.copy()
    for s, o in zip(sites, outcomes):
        weight *= readout.confusion[s][occ[:, s], o]
    return float(weight.sum() / p.sum())


def reported_marginals(state: CompositeState, readout: ReadoutModel) -> np.ndarray:
    """Expected reported distribution per site, shape (n_sites, levels)."""
    p, occ = _flat_distribution(state)
    p = p / p.sum()
    out = np.zeros((state.lattice.n_sites, readout.levels))
    for i in range(state.lattice.n_sites):
        true = np.bincount(occ[:, i], weights=p, minlength=readout.levels)
        out[i] = true @ readout.confusion[i]
    return out


@dataclass(frozen=True)
class CorrectedPopulations:
    populations: np.ndarray
    out_of_range: bool


def correct_populations(raw, readout: ReadoutModel) -> CorrectedPopulations:
    """Undo readout errors: ``raw[i] = true[i] @ C_i``, so ``true[i] = raw[i] @ inv(C_i)``.

    ``raw`` has shape (n_sites, levels); estimates leaving [0, 1] are kept and
    flagged.
    """
    R = np.asarray(raw, dtype=float)
    if R.shape != (readout.n_sites, readout.levels):
        raise DomainError(f"expected raw shape {(readout.n_sites, readout.levels)}, got {R.shape}")
    out = np.empty_like(R)
    for i in range(readout.n_sites):
        C = readout.confusion[i]
        cond = np.linalg.cond(C)
        if not np.isfinite(cond) or cond > 1e12:
            raise NumericError(f"confusion matrix of site {i} is singular", condition_number=cond, site=i)
        out[i] = np.linalg.solve(C.T, R[i])
    flag = bool(np.any(out < -1e-12) or np.any(out > 1 + 1e-12))
    return CorrectedPopulations(out, flag)


def histogram(outcomes: np.ndarray, levels: int = 3) -> np.ndarray:
    """Per-site outcome frequencies from sampled shots, shape (n_sites, levels)."""
    outcomes = np.asarray(outcomes)
    shots, n = outcomes.shape
    return np.stack([np.bincount(outcomes[:, i], minlength=levels)[:levels] / shots for i in range(n)])
