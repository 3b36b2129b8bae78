"""Time evolution of sector states and eigen-analysis along control paths."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import AmbiguityError, CapabilityError, DomainError, NumericError
from .fock import CompositeState, SectorBasis

METHODS = ("auto", "exact", "krylov")
_CACHE_BYTES = 64 * 2**20


@dataclass(frozen=True)
class StepPolicy:
    """How continuous evolution is discretised.

    ``max_step`` caps a single propagation step (s); ``tolerance`` is the
    local 2-norm error target of the Krylov exponential.  ``auto`` uses a dense
    exponential for sectors of dimension <= ``dense_cutoff``.
    """

    max_step: float = 0.1e-9
    tolerance: float = 1e-8
    method: str = "auto"
    dense_cutoff: int = 64
    krylov_dim: int = 40
    eig_cap: int = 4096

    def __post_init__(self):
        if not self.max_step > 0:
            raise DomainError("max_step must be positive")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}, got {self.method!r}")

    def use_dense(self, dim: int) -> bool:
        if self.method == "exact":
            return True
        if self.method == "krylov":
            return False
        return dim <= self.dense_cutoff


def _as_dense(H) -> np.ndarray:
    return H.toarray() if sp.issparse(H) else np.asarray(H)


def _dense_expm_apply(H: np.ndarray, dt: float, psi: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    phase = np.exp(-1j * w * dt)
    coeff = V.conj().T @ psi
    coeff *= phase[:, None] if psi.ndim == 2 else phase
    return V @ coeff


def _tridiag_expm_col(alpha: np.ndarray, beta: np.ndarray, dt: float) -> np.ndarray:
    """First column of exp(-i T dt) for the symmetric tridiagonal T(alpha, beta)."""
    ev, U = sla.eigh_tridiagonal(alpha, beta)
    return U @ (np.exp(-1j * ev * dt) * U[0].conj())


def lanczos_expm(
    matvec: Callable[[np.ndarray], np.ndarray],
    psi: np.ndarray,
    dt: float,
    tol: float = 1e-8,
    m_max: int = 40,
) -> np.ndarray:
    """exp(-i H dt) psi for Hermitian H given as a matvec.

    Builds an orthonormal Krylov basis with full reorthogonalisation and
    stops once the a-posteriori error estimate drops below ``tol`` (relative
    to the input norm).
    """
    beta0 = np.linalg.norm(psi)
    if beta0 == 0.0:
        return psi.copy()
    n = psi.shape[0]
    m_max = min(m_max, n)
    V = np.empty((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = psi / beta0
    err = np.inf
    for j in range(m_max):
        w = matvec(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0.0)
        # full reorthogonalisation keeps the basis unitary at this size
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            return beta0 * (_tridiag_expm_col(alpha[:m], beta[: m - 1], dt) @ V[:m])
        # coefficient the next Krylov vector would receive estimates the error
        c_aug = _tridiag_expm_col(np.append(alpha[:m], 0.0), beta[:m], dt)
        err = abs(c_aug[-1])
        if err < tol:
            return beta0 * (_tridiag_expm_col(alpha[:m], beta[: m - 1], dt) @ V[:m])
        V[j + 1] = w / beta[j]
    raise NumericError(
        f"Krylov exponential did not converge within {m_max} vectors",
        subspace=m_max,
        error_estimate=float(err),
        dt=dt,
    )


def _norm_bound(H) -> float:
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max()) if H.shape[0] else 0.0
    return float(np.abs(H).sum(axis=1).max()) if H.shape[0] else 0.0


def matexp_apply(H, dt: float, psi: np.ndarray, policy: StepPolicy = StepPolicy()) -> np.ndarray:
    """Return exp(-i H dt) psi; ``psi`` may be a vector or a matrix of columns."""
    if not np.isfinite(dt):
        raise DomainError("dt must be finite")
    psi = np.asarray(psi, dtype=complex)
    dim = H.shape[0]
    if psi.shape[0] != dim:
        raise DomainError(f"state length {psi.shape[0]} does not match operator {dim}")
    if dt == 0.0:
        return psi.copy()
    if policy.use_dense(dim):
        return _dense_expm_apply(_as_dense(H), dt, psi)
    Hs = H if sp.issparse(H) or dim > 512 else _as_dense(H)
    if not sp.issparse(Hs):
        Hs = np.asarray(Hs)
    matvec = lambda x: Hs @ x  # noqa: E731
    # keep |H| h below ~4 so a modest subspace converges
    n_sub = max(1, int(np.ceil(_norm_bound(H) * abs(dt) / 4.0)))
    h = dt / n_sub
    tol = policy.tolerance / n_sub
    cols = psi.reshape(dim, -1).T.copy()
    for k in range(cols.shape[0]):
        v = cols[k]
        for _ in range(n_sub):
            v = lanczos_expm(matvec, v, h, tol, policy.krylov_dim)
        cols[k] = v
    return cols.T.reshape(psi.shape)


class SectorStepper:
    """Propagates vectors of one sector under hopping + detuning-dependent diagonal.

    Dense exponentials are cached by (detunings, step) so repeated holds,
    periodic controls and repeated ramp pairs cost one diagonalisation.
    """

    def __init__(self, basis: SectorBasis, policy: StepPolicy, cache_size: int | None = None, dense: bool | None = None):
        self.basis = basis
        self.policy = policy
        self.dense = policy.use_dense(basis.dim) if dense is None else bool(dense)
        hop = basis.hopping
        self._hop = hop.toarray().astype(complex) if basis.dim <= 512 else hop.astype(complex)
        self._cache: OrderedDict = OrderedDict()
        if cache_size is None:
            # enough for a repeated ramp in small sectors, bounded in memory
            cache_size = max(64, _CACHE_BYTES // (16 * max(basis.dim, 1) ** 2))
        self._cache_size = cache_size

    def hamiltonian(self, detunings: np.ndarray) -> np.ndarray:
        H = _as_dense(self._hop).copy()
        H[np.diag_indices_from(H)] += self.basis.diagonal(detunings)
        return H

    def _propagator(self, detunings: np.ndarray, h: float) -> np.ndarray:
        key = (detunings.tobytes(), float(h))
        U = self._cache.get(key)
        if U is None:
            w, V = np.linalg.eigh(self.hamiltonian(detunings))
            U = (V * np.exp(-1j * w * h)) @ V.conj().T
            self._cache[key] = U
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return U

    def step(self, vec: np.ndarray, detunings: np.ndarray, h: float) -> np.ndarray:
        if h == 0.0 or self.basis.dim == 0:
            return vec
        if self.dense:
            return self._propagator(detunings, h) @ vec
        diag = self.basis.diagonal(detunings)
        hop = self._hop
        matvec = lambda x: hop @ x + diag * x  # noqa: E731
        bound = _norm_bound(hop) + float(np.max(np.abs(diag), initial=0.0))
        n_sub = max(1, int(np.ceil(bound * h / 4.0)))
        hs = h / n_sub
        tol = self.policy.tolerance / n_sub
        cols = [vec] if vec.ndim == 1 else [vec[:, k] for k in range(vec.shape[1])]
        out = []
        for v in cols:
            for _ in range(n_sub):
                v = lanczos_expm(matvec, v, hs, tol, self.policy.krylov_dim)
            out.append(v)
        return out[0] if vec.ndim == 1 else np.stack(out, axis=1)

    def propagate(self, vec: np.ndarray, detunings: np.ndarray, steps: np.ndarray, start: int, stop: int) -> np.ndarray:
        """Evolve through samples [start, stop).

        Dense steppers diagonalise many distinct samples in one batched call,
        which matters for long ramps through small sectors.
        """
        runs = list(constant_runs(detunings, steps, start, stop))
        if not self.dense or len(runs) < 8 or self.basis.dim == 0:
            for i0, i1 in runs:
                vec = self.step(vec, detunings[i0], steps[i0] * (i1 - i0))
            return vec
        d = self.basis.dim
        first = np.array([r[0] for r in runs])
        h = np.array([steps[i0] * (i1 - i0) for i0, i1 in runs])
        hop = _as_dense(self._hop).real  # hopping and detunings are real
        diag_idx = np.arange(d)
        chunk = max(1, (1 << 20) // (d * d))
        for c in range(0, len(runs), chunk):
            rows = first[c : c + chunk]
            H = np.repeat(hop[None], rows.size, axis=0)
            H[:, diag_idx, diag_idx] += detunings[rows] @ self.basis.occupation_matrix.T + self.basis.interaction
            w, V = np.linalg.eigh(H)
            U = (V * np.exp(-1j * w * h[c : c + chunk, None])[:, None, :]) @ V.transpose(0, 2, 1)
            for Uk in U:
                vec = Uk @ vec
        return vec


def constant_runs(detunings: np.ndarray, steps: np.ndarray, start: int, stop: int):
    """Yield (i0, i1) ranges of identical samples within [start, stop)."""
    if stop <= start:
        return
    d, s = detunings[start:stop], steps[start:stop]
    change = np.flatnonzero(np.any(d[1:] != d[:-1], axis=1) | (s[1:] != s[:-1])) + 1
    edges = np.concatenate(([0], change, [stop - start])) + start
    yield from zip(edges[:-1].tolist(), edges[1:].tolist())


def evolve_sampled(
    state: CompositeState,
    controls,
    policy: StepPolicy = StepPolicy(),
    rotation_threshold: float = 1e-6,
) -> CompositeState:
    """Piecewise-constant evolution through compiled controls.

    Each sample interval uses its midpoint detunings; zero-duration events
    (rotations, virtual phases) are applied before the sample they are
    attached to, and events at index ``n_samples`` after the last sample.
    """
    from .schedule import apply_event  # local import: schedule depends on this module

    if controls.n_samples == 0 and not controls.events:
        raise DomainError("controls are empty")
    if controls.n_samples and controls.detunings.shape[1] != state.lattice.n_sites:
        raise DomainError("controls were compiled for a different lattice size")
    cur = state.copy()
    steppers: dict[int, SectorStepper] = {}
    events_at = controls.events_by_index()
    boundaries = sorted(set(events_at) | {0, controls.n_samples})
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        for ev in events_at.get(a, ()):
            cur = apply_event(cur, ev, rotation_threshold)
        cur = _propagate_range(cur, controls, a, b, policy, steppers)
    for ev in events_at.get(controls.n_samples, ()):
        cur = apply_event(cur, ev, rotation_threshold)
    return cur


def evolve_block(
    basis: SectorBasis,
    block: np.ndarray,
    controls,
    policy: StepPolicy = StepPolicy(),
    stepper: SectorStepper | None = None,
) -> np.ndarray:
    """Propagate the columns of ``block`` (one sector) through event-free controls.

    Many columns amortise a dense exponential, so blocks wider than a few
    columns use one unless the policy forbids it.
    """
    if controls.events:
        raise DomainError("evolve_block takes continuous controls only; apply events separately")
    out = np.asarray(block, dtype=complex)
    if stepper is None:
        wide = out.ndim == 2 and out.shape[1] >= 4 and policy.method != "krylov" and basis.dim <= policy.eig_cap
        stepper = SectorStepper(basis, policy, dense=True if wide else None)
    return stepper.propagate(out, controls.detunings, controls.steps, 0, controls.n_samples)


def _propagate_range(state, controls, a, b, policy, steppers):
    sectors = {}
    for n, vec in state.sectors.items():
        st = steppers.get(n)
        if st is None:
            st = steppers[n] = SectorStepper(state.registry[n], policy)
        sectors[n] = st.propagate(vec, controls.detunings, controls.steps, a, b)
    return CompositeState(state.registry, sectors)


def eigensolve_sector(H, cap: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Full spectrum (ascending) and orthonormal eigenvectors of a Hermitian matrix."""
    dim = H.shape[0]
    if dim > cap:
        raise CapabilityError(
            f"dimension {dim} exceeds the dense eigensolver cap {cap}; restrict to a smaller sector"
        )
    return sla.eigh(_as_dense(H))


def adiabatic_fidelity(
    state: CompositeState,
    hamiltonians: Mapping[int, object],
    targets: Mapping[int, int],
    energy_scale: float,
    degeneracy: float = 1e-6,
) -> dict[int, float]:
    """Squared overlap of each sector component with a chosen eigenstate.

    ``targets[n]`` is the rank (ascending energy) of the eigenstate in sector
    ``n``.  The sector component is normalised first.
    """
    out = {}
    for n, rank in targets.items():
        w, V = eigensolve_sector(hamiltonians[n])
        if not 0 <= rank < len(w):
            raise DomainError(f"sector {n}: rank {rank} outside [0, {len(w)})")
        gaps = np.abs(np.delete(w, rank) - w[rank])
        if gaps.size and gaps.min() < degeneracy * abs(energy_scale):
            close = [int(k) for k in np.flatnonzero(np.abs(w - w[rank]) < degeneracy * abs(energy_scale))]
            raise AmbiguityError(
                f"sector {n}: eigenvalue {w[rank]:.6g} is degenerate with ranks {close}", close
            )
        vec = state.sectors.get(n)
        if vec is None or np.linalg.norm(vec) == 0:
            out[n] = 0.0
            continue
        vec = vec / np.linalg.norm(vec)
        out[n] = float(abs(np.vdot(V[:, rank], vec)) ** 2)
    return out


@dataclass
class TrackedEigenstate:
    energy: float
    vector: np.ndarray
    rank: int
    min_gap: float


def track_eigenstate(
    basis: SectorBasis,
    path: Sequence[np.ndarray],
    seed_vector: np.ndarray,
    degeneracy: float = 1e-9,
    atol: float = 0.0,
) -> TrackedEigenstate:
    """Follow an eigenstate by continuity along a sequence of detuning snapshots.

    At each snapshot the previous vector is projected onto the eigenspace it
    overlaps most; levels closer than ``degeneracy`` (relative) or ``atol``
    (absolute, rad/s) are treated as one eigenspace.  A ramp of length T cannot
    resolve splittings well below 2 pi / T, so callers pass such a scale as
    ``atol``.  ``min_gap`` is the smallest gap to a level outside the group.
    """
    prev = np.asarray(seed_vector, dtype=complex)
    prev = prev / np.linalg.norm(prev)
    hop = basis.hopping.toarray()
    min_gap = np.inf
    energy, rank = np.nan, -1
    for det in path:
        H = hop + np.diag(basis.diagonal(np.asarray(det, dtype=float)))
        w, V = np.linalg.eigh(H)
        ov = np.abs(V.conj().T @ prev) ** 2
        k = int(np.argmax(ov))
        scale = max(1.0, np.max(np.abs(w)))
        group = np.flatnonzero(np.abs(w - w[k]) <= max(degeneracy * scale, atol))
        P = V[:, group]
        vec = P @ (P.conj().T @ prev)
        vec /= np.linalg.norm(vec)
        others = np.delete(w, group)
        if others.size:
            min_gap = min(min_gap, float(np.min(np.abs(others - w[k]))))
        energy, rank, prev = float(w[k]), k, vec
    return TrackedEigenstate(energy, prev, rank, min_gap)
