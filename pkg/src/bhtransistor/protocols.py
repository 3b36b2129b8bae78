"""Executable experiments: each runner builds its control program from an
:class:`~bhtransistor.config.ExperimentConfig`, evolves it (noiseless or with
trajectories) and returns a result object that knows how to tabulate itself.

Ramsey-type records use one evolution per shot regardless of the number of
hold times: the state after the entangling step is expanded in eigenstates
of the hold Hamiltonian, only eigenvectors carrying weight are pushed through
the disentangling step, and every hold time is then a matrix product.  This
is exact for pure-state evolution (noiseless or quasi-static noise).
Markovian noise falls back to one trajectory per (shot, hold time).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .config import ExperimentConfig
from .errors import DomainError
from .fermions import FreeFermionChain, two_phonon_target
from .fock import CompositeState, density_expectation, site_distribution
from .noise import (
    NoiseModel,
    ReadoutModel,
    evolve_trajectory,
    reported_probability,
    sample_quasistatic,
    substream,
)
from .propagate import SectorStepper, StepPolicy, evolve_block, evolve_sampled, track_eigenstate
from .schedule import (
    Hold,
    InstantRotation,
    SampledControls,
    Schedule,
    SiteModulation,
    apply_rotation,
    apply_virtual_phase,
    compile_schedule,
)
from .sequences import (
    HALF_PI,
    Device,
    Drive,
    RamseyProgram,
    entangler,
    jump,
    preparation,
    ramsey_program,
    rise,
)
from .units import MHZ, NS, TWO_PI


# stream tags keep the random draws of different protocols apart
_TAG_RAMSEY, _TAG_ECHO, _TAG_PLAIN, _TAG_REV, _TAG_READOUT = 1, 2, 3, 4, 5

CATALOG = {
    "conditional-transport": (
        "Ramp the staggered lattice into the transistor configuration with the ancilla in 0 or 1 "
        "and report site densities plus the adiabatic fidelity of the excited branch.",
        ["protocol.t_ramp_ns", "protocol.ancilla", "protocol.adiabatic_floor"],
    ),
    "echo": (
        "Many-body echo: pairs of entangling/disentangling steps with an ancilla pi pulse, "
        "compared with the same sequence without it, versus the number of pairs.",
        ["protocol.echo_pairs", "protocol.hold_ns", "noise.sigma_mhz", "simulation.shots"],
    ),
    "noon-ramsey": (
        "Many-body Ramsey fringe of the N00N state with virtual-phase down-conversion; "
        "reports the folded spectrum and the eigenvalue prediction.",
        ["protocol.variant", "protocol.hold_ns", "protocol.omega_ref_mhz", "protocol.t_ramp_ns"],
    ),
    "phonon-swap": (
        "Drive one site in the transistor configuration; scan the drive frequency across the "
        "two-phonon resonance and record occupations for both ancilla states.",
        ["protocol.phonon.drive_site", "protocol.phonon.epsilon_d_mhz", "protocol.phonon.duration_ns"],
    ),
    "ramp-sweep": (
        "Ramsey spectra versus ramp time, from the diabatic to the adiabatic limit.",
        ["protocol.ramp_sweep_ns", "protocol.hold_ns"],
    ),
    "reversibility": (
        "Population of the initially filled sites after N entangling/disentangling pairs, "
        "fitted to A(1-eps)^(2N).",
        ["protocol.reversibility_pairs", "noise.enabled", "simulation.shots"],
    ),
    "sensing": (
        "Fringe-frequency shift under opposite offsets on the two clusters; slope versus N-1.",
        ["protocol.sensing_delta_mhz", "protocol.hold_ns"],
    ),
}


class RunWarning(UserWarning):
    """A protocol ran but something deserves attention (recorded in the result)."""


@dataclass
class Table:
    columns: list[str]
    rows: list[list]


# ----------------------------------------------------------------- plumbing


def _policy(cfg: ExperimentConfig) -> StepPolicy:
    return StepPolicy()


def _dt(cfg: ExperimentConfig, stochastic: bool = False) -> float:
    sim = cfg.simulation
    return (sim.trajectory_dt_ns if stochastic else sim.dt_ns) * NS


def _map(func, items, jobs: int):
    """Ordered map, in worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * jobs))))


def _warn(store: list, message: str):
    store.append(message)
    warnings.warn(message, RunWarning, stacklevel=3)


def _ancilla_p1(state: CompositeState, anc: int, readout: ReadoutModel) -> float:
    dist = site_distribution(state, anc)
    dist = dist / dist.sum()
    C = readout.confusion[anc]
    return float(dist @ C[: dist.size, 1])


# ------------------------------------------------------------ ramsey engine


@dataclass
class CompiledRamsey:
    pre: SampledControls
    post: SampledControls
    hold: np.ndarray
    final_phase: float
    bare_phase: float  # ancilla phase to undo, excluding the hold
    hold_rate: float  # ancilla detuning during the hold
    echo: bool = False

    @classmethod
    def build(cls, device: Device, prog: RamseyProgram, dt: float) -> "CompiledRamsey":
        pre = compile_schedule(prog.pre, dt)
        post = compile_schedule(prog.post, dt)
        anc = device.ancilla
        sign = np.ones(pre.n_samples)
        if prog.echo:
            idx = [i for i, ev in pre.events if isinstance(ev, InstantRotation) and ev.site == anc and abs(ev.angle) == np.pi]
            if len(idx) != 1:
                raise DomainError("echo program must contain exactly one ancilla pi pulse")
            sign[: idx[0]] = -1.0
        bare = float(np.sum(sign * pre.detunings[:, anc] * pre.steps)) if pre.n_samples else 0.0
        if post.n_samples:
            bare += float(np.sum(post.detunings[:, anc] * post.steps))
        return cls(pre, post, prog.hold, prog.final_phase, bare, float(prog.hold[anc]), prog.echo)

    def virtual_phase(self, holds: np.ndarray, omega_ref: float) -> np.ndarray:
        return self.bare_phase + (self.hold_rate + omega_ref) * holds


def _readout_events(state, anc, phase, final_phase, threshold):
    state = apply_virtual_phase(state, anc, phase)
    return apply_rotation(state, anc, HALF_PI, final_phase, threshold=np.inf)


def _doublon_weight(state: CompositeState, anc: int) -> float:
    return float(site_distribution(state, anc)[2:].sum())


def pure_fringe(
    device: Device,
    comp: CompiledRamsey,
    holds: np.ndarray,
    omega_ref: float,
    readout: ReadoutModel,
    offsets: np.ndarray | None = None,
    policy: StepPolicy = StepPolicy(),
    keep_tolerance: float = 1e-10,
    rotation_threshold: float = 0.05,
) -> tuple[np.ndarray, float]:
    """Reported ancilla P(1) for every hold time, and the largest ancilla doublon weight.

    ``offsets`` are static detuning errors added to every control sample;
    the virtual phase still uses the nominal program.
    """
    pre, post, hold = comp.pre, comp.post, comp.hold
    if offsets is not None and np.any(offsets):
        pre, post, hold = pre.with_offsets(offsets), post.with_offsets(offsets), hold + offsets
    # the echo pi pulse, like the analysis pulse, acts on the ancilla's 0-1 pair
    psi = evolve_sampled(device.vacuum(), pre, policy, np.inf if comp.echo else rotation_threshold)
    holds = np.asarray(holds, dtype=float)
    amps = {}
    for n, vec in psi.sectors.items():
        basis = device.registry[n]
        st = SectorStepper(basis, policy)
        w, V = np.linalg.eigh(st.hamiltonian(hold))
        c = V.conj().T @ vec
        p = np.abs(c) ** 2
        order = np.argsort(p)
        dropped = np.cumsum(p[order]) <= keep_tolerance * max(p.sum(), 1e-300)
        keep = np.sort(order[~dropped])
        if keep.size == 0:
            continue
        B = evolve_block(basis, V[:, keep], post, policy) if post.n_samples else V[:, keep]
        amps[n] = B @ (c[keep, None] * np.exp(-1j * np.outer(w[keep], holds)))
    phases = comp.virtual_phase(holds, omega_ref)
    out = np.empty(holds.size)
    worst = 0.0
    for k in range(holds.size):
        st = CompositeState(device.registry, {n: a[:, k] for n, a in amps.items()})
        worst = max(worst, _doublon_weight(st, device.ancilla))
        st = _readout_events(st, device.ancilla, phases[k], comp.final_phase, rotation_threshold)
        out[k] = _ancilla_p1(st, device.ancilla, readout)
    return out, worst


def _trajectory_fringe(
    device: Device,
    comp: CompiledRamsey,
    prog: RamseyProgram,
    holds: np.ndarray,
    omega_ref: float,
    readout: ReadoutModel,
    model: NoiseModel,
    key: tuple,
    dt: float,
    policy: StepPolicy,
) -> np.ndarray:
    """One shot with Markovian noise: an independent trajectory per hold time."""
    offsets = sample_quasistatic(model, substream(model.seed, *key)) if model.quasistatic else np.zeros(device.n_sites)
    phases = comp.virtual_phase(holds, omega_ref)
    out = np.empty(holds.size)
    for k, (h, ph) in enumerate(zip(holds, phases)):
        sched = prog.pre + Schedule(device.n_sites, (Hold(h, prog.hold),)) + prog.post
        st = evolve_trajectory(
            device.vacuum(), compile_schedule(sched, dt), model,
            substream(model.seed, *key, k + 1), policy, offsets=offsets, rotation_threshold=np.inf,
        )
        st = _readout_events(st, device.ancilla, ph, comp.final_phase, np.inf)
        out[k] = _ancilla_p1(st, device.ancilla, readout)
    return out


def _shot_worker(args):
    kind, payload = args
    if kind == "pure":
        device, comp, holds, omega_ref, readout, offsets, policy, keep = payload
        return pure_fringe(device, comp, holds, omega_ref, readout, offsets, policy, keep)[0]
    return _trajectory_fringe(*payload)


def shot_fringes(
    cfg: ExperimentConfig,
    device: Device,
    prog: RamseyProgram,
    holds: np.ndarray,
    model: NoiseModel | None,
    readout: ReadoutModel,
    tag: int,
    point: int = 0,
    shots: int | None = None,
) -> np.ndarray:
    """Per-shot reported P(1) records, shape (shots, n_holds)."""
    M = cfg.simulation.shots if shots is None else shots
    if model is None:
        model = NoiseModel.noiseless(device.n_sites, cfg.simulation.seed)
    random = model.markovian or model.quasistatic
    dt, policy = _dt(cfg, random), _policy(cfg)
    comp = CompiledRamsey.build(device, prog, dt)
    omega_ref = cfg.protocol.omega_ref_mhz * MHZ
    if not random:
        # every shot is the same pure-state record
        p1 = pure_fringe(device, comp, holds, omega_ref, readout, None, policy, cfg.simulation.keep_tolerance)[0]
        return np.tile(p1, (M, 1))
    tasks = []
    for s in range(M):
        key = (tag, point, s)
        if model.markovian:
            tasks.append(("traj", (device, comp, prog, holds, omega_ref, readout, model, key, dt, policy)))
        else:
            off = sample_quasistatic(model, substream(model.seed, *key)) if model.quasistatic else None
            tasks.append(("pure", (device, comp, holds, omega_ref, readout, off, policy, cfg.simulation.keep_tolerance)))
    return np.array(_map(_shot_worker, tasks, cfg.simulation.jobs))


# ------------------------------------------------------- eigenvalue oracle


@dataclass
class NoonPrediction:
    E_left: float
    E_right: float
    ancilla_detuning: float
    omega_ref: float

    @property
    def omega_rl(self) -> float:
        """Phase rate of |R> relative to |L> with the ancilla's own energy removed (rad/s)."""
        return -(self.E_right - self.E_left - self.ancilla_detuning)

    @property
    def fringe(self) -> float:
        """Signed fringe angular frequency omega_ref + omega_R - omega_L."""
        return self.omega_ref + self.omega_rl

    def folded_hz(self, dt: float) -> float:
        return analysis.fold_frequency(self.fringe / TWO_PI, dt)


def _branch_eigenvalue(device: Device, detunings: np.ndarray, occupations) -> float:
    n = sum(occupations)
    basis = device.registry[n]
    H = SectorStepper(basis, StepPolicy(method="exact")).hamiltonian(detunings)
    w, V = np.linalg.eigh(H)
    k = int(np.argmax(np.abs(V[basis.position(occupations)]) ** 2))
    return float(w[k])


def predict_noon(device: Device, hold: np.ndarray, omega_ref: float, photons: bool = True) -> NoonPrediction:
    """E_L, E_R from the hold-configuration spectrum (states that best match |L>, |R>).

    Without photons the two branches are the vacuum and the lone ancilla
    excitation, which gives the uncoupled reference fringe.
    """
    left, right = ("left", "right") if photons else ("none", "none")
    EL = _branch_eigenvalue(device, hold, device.occupations(left, 0))
    ER = _branch_eigenvalue(device, hold, device.occupations(right, 1))
    return NoonPrediction(EL, ER, float(hold[device.ancilla]), omega_ref)


# ------------------------------------------------- conditional transport


def _unresolved(t_ramp: float) -> float:
    """Splittings a ramp of this length crosses diabatically (below 2 pi / t_ramp)."""
    return TWO_PI / t_ramp if t_ramp > 0 else 0.0


@dataclass
class TransportResult:
    sites: list[str]
    t_ramp: float
    profiles: dict[str, np.ndarray]
    fidelity: dict[str, float]
    totals: dict[str, float]
    min_gap: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def table(self) -> Table:
        rows = []
        for anc, prof in self.profiles.items():
            for i, name in enumerate(self.sites):
                rows.append([anc, i, name, prof[i]])
        return Table(["ancilla", "site", "label", "density"], rows)

    def summary(self) -> dict:
        return {
            "t_ramp_ns": self.t_ramp / NS,
            "adiabatic_fidelity": self.fidelity,
            "total_density": self.totals,
            "min_gap_mhz": {k: v / MHZ for k, v in self.min_gap.items()},
            "warnings": self.warnings,
        }


def run_conditional_transport(cfg: ExperimentConfig, t_ramp: float | None = None, path_points: int = 400) -> TransportResult:
    device = Device.from_config(cfg)
    p = cfg.protocol
    t_ramp = p.t_ramp_ns * NS if t_ramp is None else float(t_ramp)
    branches = [p.ancilla] if p.ancilla in ("ground", "excited") else ["ground", "excited"]
    sched = Schedule(device.n_sites, tuple(rise(device, t_ramp, p.tau_fraction)))
    controls = compile_schedule(sched, _dt(cfg))
    small, trans = device.config("small_disorder"), device.config("transistor")
    if t_ramp > 0:
        ramp = sched.segments[0]
        path = [ramp.at(t) for t in np.linspace(0.0, t_ramp, path_points)]
    else:
        path = [small, trans]
    res = TransportResult(list(cfg.device.sites), t_ramp, {}, {}, {}, {})
    for anc in branches:
        occ = device.occupations("left", 1 if anc == "excited" else 0)
        psi0 = CompositeState.basis_state(device.registry, occ)
        psi = evolve_sampled(psi0, controls, _policy(cfg)) if controls.n_samples else psi0
        prof = density_expectation(psi)
        n = sum(occ)
        tracked = track_eigenstate(device.registry[n], path, psi0.sectors[n], atol=_unresolved(t_ramp))
        fid = float(abs(np.vdot(tracked.vector, psi.sectors[n])) ** 2)
        res.profiles[anc] = prof
        res.fidelity[anc] = fid
        res.totals[anc] = float(prof.sum())
        res.min_gap[anc] = tracked.min_gap
        if fid < p.adiabatic_floor:
            _warn(
                res.warnings,
                f"ancilla {anc}: adiabatic fidelity {fid:.4f} below floor {p.adiabatic_floor} "
                f"(smallest gap on the path {tracked.min_gap / MHZ:.3g} MHz)",
            )
    return res


# ------------------------------------------------------------ N00N Ramsey


@dataclass
class RamseyResult:
    record: analysis.FringeRecord
    spectrum: analysis.FoldedSpectrum
    dominant: analysis.DominantFrequency
    prediction: NoonPrediction
    photons: bool = True
    warnings: list[str] = field(default_factory=list)

    @property
    def predicted_folded_hz(self) -> float:
        return self.prediction.folded_hz(self.spectrum.dt)

    @property
    def unfolded_hz(self) -> float:
        """Alias of the measured peak closest to the eigenvalue prediction (signed)."""
        fs = 1.0 / self.spectrum.dt
        f = self.dominant.frequency
        target = self.prediction.fringe / TWO_PI
        cands = [s * f + k * fs for s in (1, -1) for k in range(-4, 5)]
        return float(min(cands, key=lambda x: abs(x - target)))

    def table(self) -> Table:
        r = self.record
        se = r.stderr if r.stderr is not None else np.zeros_like(r.p1)
        return Table(["dt_ns", "p1_mean", "p1_stderr"], [[t / NS, p, s] for t, p, s in zip(r.hold_times, r.p1, se)])

    def spectrum_table(self) -> Table:
        s = self.spectrum
        return Table(
            ["freq_mhz", "amplitude", "re", "im"],
            [[f / 1e6, abs(a), a.real, a.imag] for f, a in zip(s.frequencies, s.amplitudes)],
        )

    def summary(self) -> dict:
        return {
            "dominant_mhz": self.dominant.frequency / 1e6,
            "dominant_amplitude": self.dominant.amplitude,
            "tie": self.dominant.tie,
            "predicted_folded_mhz": self.predicted_folded_hz / 1e6,
            "predicted_signed_mhz": self.prediction.fringe / TWO_PI / 1e6,
            "omega_rl_mhz": self.prediction.omega_rl / TWO_PI / 1e6,
            "unfolded_mhz": self.unfolded_hz / 1e6,
            "resolution_mhz": self.spectrum.resolution / 1e6,
            "photons": self.photons,
            "analysis_doublon": self.record.meta.get("analysis_doublon"),
            "warnings": self.warnings,
        }


def _target(cfg: ExperimentConfig) -> str:
    return cfg.protocol.target_configuration


def _phonon_drive(cfg: ExperimentConfig, device: Device, duration: float | None = None, omega: float | None = None) -> Drive:
    ph = cfg.protocol.phonon
    if omega is None:
        omega = ph.omega_d_mhz * MHZ if ph.omega_d_mhz is not None else phonon_resonance(cfg, device).drive
    dur = ph.duration_ns[0] * NS if duration is None else duration
    return Drive(ph.drive_site, ph.epsilon_d_mhz * MHZ, omega, dur, ph.sigma_ns * NS)


def build_entangler(cfg: ExperimentConfig, device: Device, t_ramp: float | None = None, drive: Drive | None = None) -> Schedule:
    p = cfg.protocol
    t_ramp = p.t_ramp_ns * NS if t_ramp is None else t_ramp
    if p.variant == "phonon-assisted" and drive is None:
        drive = _phonon_drive(cfg, device)
    return entangler(device, t_ramp, _target(cfg), p.tau_fraction, drive)


def _fringe(cfg, device, prog, holds, tag, point=0) -> tuple[analysis.FringeRecord, list[str]]:
    """Noiseless records are exact; noisy ones average ``simulation.shots`` shots.

    The analysis pulse acts on the ancilla's 0-1 pair; the largest doublon
    weight it meets is kept in ``record.meta``.
    """
    notes: list[str] = []
    model = cfg.noise_model()
    readout = cfg.readout_model()
    if model is None:
        comp = CompiledRamsey.build(device, prog, _dt(cfg))
        p1, worst = pure_fringe(
            device, comp, holds, cfg.protocol.omega_ref_mhz * MHZ, readout, None, _policy(cfg),
            cfg.simulation.keep_tolerance, cfg.simulation.rotation_threshold,
        )
        return analysis.FringeRecord(holds, p1, np.zeros_like(p1), meta={"analysis_doublon": worst}), notes
    shots = shot_fringes(cfg, device, prog, holds, model, readout, tag, point)
    M = shots.shape[0]
    se = shots.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(holds.size)
    return analysis.FringeRecord(holds, shots.mean(axis=0), se, meta={"shots": M}), notes


def run_noon_ramsey(
    cfg: ExperimentConfig,
    photons: bool = True,
    t_ramp: float | None = None,
    offsets: np.ndarray | None = None,
    point: int = 0,
) -> RamseyResult:
    if cfg.protocol.ancilla != "superposition":
        raise DomainError("Ramsey protocols need protocol.ancilla = superposition")
    device = Device.from_config(cfg)
    U = build_entangler(cfg, device, t_ramp)
    hold = device.config(_target(cfg)) + (0.0 if offsets is None else offsets)
    holds = cfg.protocol.hold_grid()
    prog = ramsey_program(device, U, hold, photons, cfg.protocol.jump_ns * NS)
    record, notes = _fringe(cfg, device, prog, holds, _TAG_RAMSEY, point)
    spec = analysis.fringe_spectrum(record, cfg.protocol.spectrum_pad)
    dom = analysis.dominant_frequency(spec)
    pred = predict_noon(device, hold, cfg.protocol.omega_ref_mhz * MHZ, photons)
    return RamseyResult(record, spec, dom, pred, photons, notes)


# ------------------------------------------------------------------ sensing


@dataclass
class SensingResult:
    n_qubits: int
    deltas: np.ndarray  # rad/s
    frequencies: np.ndarray  # folded Hz
    shifts: np.ndarray  # Hz
    predicted_shifts: np.ndarray  # Hz
    slope: float  # shift / (delta / 2 pi)
    folded: list[bool]
    warnings: list[str] = field(default_factory=list)

    @property
    def expected_slope(self) -> int:
        return self.n_qubits - 1

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.expected_slope) / self.expected_slope

    def table(self) -> Table:
        return Table(
            ["delta_mhz", "fringe_mhz", "shift_mhz", "predicted_shift_mhz", "folded"],
            [
                [d / MHZ, f / 1e6, s / 1e6, p / 1e6, int(fl)]
                for d, f, s, p, fl in zip(self.deltas, self.frequencies, self.shifts, self.predicted_shifts, self.folded)
            ],
        )

    def summary(self) -> dict:
        return {"slope": self.slope, "expected_slope": self.expected_slope,
                "relative_error": self.relative_error, "warnings": self.warnings}


def run_sensing(cfg: ExperimentConfig, deltas_mhz=None) -> SensingResult:
    device = Device.from_config(cfg)
    deltas = np.asarray(cfg.protocol.sensing_delta_mhz if deltas_mhz is None else deltas_mhz, float) * MHZ
    if not np.any(deltas == 0):
        deltas = np.concatenate([[0.0], deltas])
    freqs, preds, folded, notes = [], [], [], []
    for i, d in enumerate(deltas):
        r = run_noon_ramsey(cfg, offsets=device.sensing_offsets(d), point=i)
        notes += r.warnings
        freqs.append(r.dominant.frequency)
        preds.append(r.predicted_folded_hz)
        # the shift changes sign when the signed fringe crosses zero or Nyquist
        folded.append(bool(np.sign(r.prediction.fringe) != np.sign(predict_noon(
            device, device.config(_target(cfg)), cfg.protocol.omega_ref_mhz * MHZ).fringe)))
    freqs, preds = np.array(freqs), np.array(preds)
    z = int(np.flatnonzero(deltas == 0)[0])
    shifts = freqs - freqs[z]
    pshift = preds - preds[z]
    x = deltas / TWO_PI
    mask = deltas != 0
    slope = float(np.dot(x[mask], shifts[mask]) / np.dot(x[mask], x[mask])) if mask.any() else float("nan")
    for d, s, fl in zip(deltas, shifts, folded):
        if fl:
            _warn(notes, f"delta {d / MHZ:g} MHz: fringe crossed a folding boundary; the shift sign is reversed")
    return SensingResult(device.n_sites, deltas, freqs, shifts, pshift, slope, folded, notes)


# --------------------------------------------------------------- ramp sweep


@dataclass
class RampSweepResult:
    t_ramps: np.ndarray
    frequencies: np.ndarray  # Hz (unpadded bins)
    amplitudes: np.ndarray  # (n_ramps, n_bins) magnitudes
    dominant: np.ndarray  # Hz (refined)
    peaks: list[list[tuple[float, float]]]  # unpadded-spectrum peaks, strongest first
    omega_ref_hz: float
    noon_hz: float
    warnings: list[str] = field(default_factory=list)

    def n_close_peaks(self, rel: float = 0.2) -> np.ndarray:
        """Number of peaks with magnitude within ``rel`` of the strongest."""
        return np.array([sum(a >= (1 - rel) * pk[0][1] for _, a in pk) if pk else 0 for pk in self.peaks])

    def table(self) -> Table:
        close = self.n_close_peaks()
        return Table(
            ["t_ramp_ns", "dominant_mhz", "n_peaks_within_20pct", "peaks_mhz"],
            [
                [t / NS, f / 1e6, int(c), ";".join(f"{p / 1e6:.2f}" for p, _ in pk[:4])]
                for t, f, c, pk in zip(self.t_ramps, self.dominant, close, self.peaks)
            ],
        )

    def spectrum_table(self) -> Table:
        rows = []
        for t, amp in zip(self.t_ramps, self.amplitudes):
            rows += [[t / NS, f / 1e6, a] for f, a in zip(self.frequencies, amp)]
        return Table(["t_ramp_ns", "freq_mhz", "amplitude"], rows)

    def summary(self) -> dict:
        return {"reference_mhz": self.omega_ref_hz / 1e6, "noon_mhz": self.noon_hz / 1e6,
                "dominant_mhz": (self.dominant / 1e6).tolist(), "warnings": self.warnings}


def run_ramp_sweep(cfg: ExperimentConfig, t_ramps_ns=None, peak_floor: float = 0.1) -> RampSweepResult:
    grid = np.asarray(cfg.protocol.ramp_sweep_ns if t_ramps_ns is None else t_ramps_ns, float) * NS
    mags, dom, peaks, notes = [], [], [], []
    freqs = None
    pred = None
    for i, T in enumerate(grid):
        r = run_noon_ramsey(cfg, t_ramp=T, point=i)
        notes += [f"t_ramp {T / NS:g} ns: {w}" for w in r.warnings]
        plain = analysis.fringe_spectrum(r.record, 1)
        freqs = plain.frequencies
        mags.append(plain.magnitude())
        dom.append(r.dominant.frequency)
        peaks.append(analysis.local_peaks(plain, peak_floor))
        pred = r.predicted_folded_hz
    ref = analysis.fold_frequency(cfg.protocol.omega_ref_mhz * 1e6, _hold_step(cfg))
    return RampSweepResult(grid, freqs, np.array(mags), np.array(dom), peaks, ref, pred, notes)


def _hold_step(cfg):
    return cfg.protocol.hold_ns["step"] * NS


# ------------------------------------------------------------- phonon swap


@dataclass
class PhononResonance:
    gap: float  # rad/s, E_top - E_target in the transistor configuration
    drive: float  # rad/s, the two-phonon drive frequency (gap / 2)
    hardcore_drive: float  # rad/s, free-fermion estimate
    J: float  # mean |J| (rad/s)

    @property
    def drive_in_J(self) -> float:
        return self.drive / self.J


def phonon_resonance(cfg: ExperimentConfig, device: Device | None = None, path_points: int = 200) -> PhononResonance:
    """Exact two-phonon resonance between the adiabatically connected fluid states.

    The top of the fluid band is reached from the left-filled state; the
    target is the state that ramps back to the right-filled one.  Each of the
    two particles climbs by one phonon, so a single drive quantum supplies half
    of the many-body gap.
    """
    device = device or Device.from_config(cfg)
    t_ramp = cfg.protocol.t_ramp_ns * NS
    ramp = rise(device, t_ramp, cfg.protocol.tau_fraction)[0]
    path = [ramp.at(t) for t in np.linspace(0.0, t_ramp, path_points)]
    n = device.n_cluster + 1
    basis = device.registry[n]
    seeds = [device.product_state(c, 1).sectors[n] for c in ("left", "right")]
    top, low = (track_eigenstate(basis, path, s) for s in seeds)
    gap = top.energy - low.energy
    J = float(np.mean(np.abs(device.lattice.J_bonds)))
    m, N = device.n_cluster, device.n_sites
    chain = FreeFermionChain(N, -J)
    # the m lowest modes trade places with the m highest ones
    hc = abs(two_phonon_target(chain, list(range(1, m + 1)), list(range(N - m + 1, N + 1))))
    return PhononResonance(float(gap), float(gap) / 2.0, hc, J)


@dataclass
class PhononResult:
    omegas: np.ndarray  # rad/s
    durations: np.ndarray  # s
    occupations: dict[str, np.ndarray]  # ancilla -> (n_omega, n_duration, n_sites)
    transfer: np.ndarray  # (n_omega, n_duration) right-cluster filling, excited branch
    resonance: PhononResonance
    peak_omega: float
    ground_change: float
    swap_sites: list[int]
    fringe: list[tuple[float, float]] = field(default_factory=list)  # (duration, dominant Hz)
    paper_drive_in_J: float = 3.64
    warnings: list[str] = field(default_factory=list)

    @property
    def peak_error(self) -> float:
        return abs(self.peak_omega - self.resonance.drive) / self.resonance.drive

    def table(self) -> Table:
        rows = []
        for anc, occ in self.occupations.items():
            for i, w in enumerate(self.omegas):
                for j, d in enumerate(self.durations):
                    rows.append([anc, w / MHZ, d / NS] + [occ[i, j, s] for s in self.swap_sites])
        return Table(["ancilla", "omega_d_mhz", "duration_ns"] + [f"n_{s}" for s in self.swap_sites], rows)

    def summary(self) -> dict:
        r = self.resonance
        return {
            "exact_gap_mhz": r.gap / MHZ,
            "exact_drive_mhz": r.drive / MHZ,
            "exact_drive_in_J": r.drive_in_J,
            "hardcore_drive_in_J": r.hardcore_drive / r.J,
            "paper_drive_in_J": self.paper_drive_in_J,
            "peak_drive_mhz": self.peak_omega / MHZ,
            "peak_relative_error": self.peak_error,
            "ground_max_change": self.ground_change,
            "fringe": [{"duration_ns": d / NS, "dominant_mhz": f / 1e6} for d, f in self.fringe],
            "warnings": self.warnings,
        }


def _phonon_occupations(device, psi_T, back_U, base, drive: Drive, dt, policy):
    """Occupations after drive + return ramp, from the state at the transistor point."""
    sched = Schedule(device.n_sites, (
        (_modulation(device, drive, base),) if drive.duration > 0 else ()
    ))
    st = psi_T
    if sched.segments:
        st = evolve_sampled(psi_T, compile_schedule(sched, dt), policy)
    if back_U is not None:
        st = CompositeState(device.registry, {n: back_U[n] @ v for n, v in st.sectors.items()})
    return density_expectation(st)


def _modulation(device, drive: Drive, base):
    return SiteModulation(drive.site, drive.amplitude, drive.frequency, drive.duration, base, drive.sigma)


def run_phonon_swap(
    cfg: ExperimentConfig,
    omegas=None,
    durations_ns=None,
    fringe: bool | None = None,
) -> PhononResult:
    device = Device.from_config(cfg)
    ph = cfg.protocol.phonon
    p = cfg.protocol
    if not 0 <= ph.drive_site < device.n_sites or ph.drive_site == device.ancilla:
        raise DomainError("phonon.drive_site must be a lattice site other than the ancilla")
    res = phonon_resonance(cfg, device)
    center = ph.omega_d_mhz * MHZ if ph.omega_d_mhz is not None else res.drive
    if omegas is None:
        omegas = center * (1 + ph.scan_span * np.linspace(-1, 1, ph.scan_points))
    omegas = np.asarray(omegas, float)
    durations = np.asarray(ph.duration_ns if durations_ns is None else durations_ns, float) * NS
    dt, policy = _dt(cfg), _policy(cfg)
    t_ramp = p.t_ramp_ns * NS
    up = compile_schedule(Schedule(device.n_sites, tuple(rise(device, t_ramp, p.tau_fraction))), dt)
    down = compile_schedule(Schedule(device.n_sites, tuple(rise(device, t_ramp, p.tau_fraction))).reversed(), dt)
    trans = device.config("transistor")
    occupations = {}
    for anc in ("ground", "excited"):
        psi0 = device.product_state("left", int(anc == "excited"))
        psi_T = evolve_sampled(psi0, up, policy) if up.n_samples else psi0
        back = None
        if down.n_samples:
            back = {}
            for n in psi_T.sectors:
                basis = device.registry[n]
                back[n] = evolve_block(basis, np.eye(basis.dim, dtype=complex), down, policy)
        occ = np.empty((omegas.size, durations.size, device.n_sites))
        for i, w in enumerate(omegas):
            for j, d in enumerate(durations):
                occ[i, j] = _phonon_occupations(
                    device, psi_T, back, trans, Drive(ph.drive_site, ph.epsilon_d_mhz * MHZ, w, d, ph.sigma_ns * NS), dt, policy
                )
        occupations[anc] = occ
        if anc == "ground":
            # same pulse with zero amplitude, so free evolution cancels
            undriven = np.array([
                _phonon_occupations(device, psi_T, back, trans, Drive(ph.drive_site, 0.0, 0.0, d, ph.sigma_ns * NS), dt, policy)
                for d in durations
            ])
            ground_change = float(np.max(np.abs(occ - undriven[None])))
    right = list(device.right)
    transfer = occupations["excited"][:, :, right].sum(axis=2) / len(right)
    notes: list[str] = []
    j = int(np.argmax(transfer.max(axis=0)))
    peak = _peak_location(omegas, transfer[:, j])
    if ground_change >= 1e-3:
        _warn(notes, f"drive changed ground-branch occupations by {ground_change:.2e}")
    fr = []
    if fringe is None:
        fringe = p.ancilla == "superposition" and p.variant == "phonon-assisted"
    if fringe:
        for d in durations:
            drive = Drive(ph.drive_site, ph.epsilon_d_mhz * MHZ, center, d, ph.sigma_ns * NS)
            U = entangler(device, t_ramp, _target(cfg), p.tau_fraction, drive)
            prog = ramsey_program(device, U, device.config(_target(cfg)), True, p.jump_ns * NS)
            rec, w = _fringe(cfg, device, prog, p.hold_grid(), _TAG_RAMSEY)
            notes += w
            dom = analysis.dominant_frequency(analysis.fringe_spectrum(rec, p.spectrum_pad))
            fr.append((float(d), dom.frequency))
    swap = list(device.left) + right
    return PhononResult(omegas, durations, occupations, transfer, res, peak, ground_change, swap, fr, warnings=notes)


def _peak_location(x: np.ndarray, y: np.ndarray) -> float:
    """Argmax refined by a parabola through the three highest neighbouring points."""
    k = int(np.argmax(y))
    if 0 < k < len(y) - 1:
        x3, y3 = x[k - 1 : k + 2], y[k - 1 : k + 2]
        a, b, _ = np.polyfit(x3, y3, 2)
        if a < 0:
            v = -b / (2 * a)
            if x3[0] <= v <= x3[-1]:
                return float(v)
    return float(x[k])


# -------------------------------------------------------------------- echo


@dataclass
class EchoPoint:
    pairs: int
    echo: analysis.FringeRecord
    plain: analysis.FringeRecord
    echo_amplitude: float
    echo_stderr: float
    plain_amplitude: float
    plain_stderr: float

    @property
    def combined_stderr(self) -> float:
        return float(np.hypot(self.echo_stderr, self.plain_stderr))

    @property
    def separation(self) -> float:
        """(echo - plain) in units of the combined standard error."""
        se = self.combined_stderr
        return float((self.echo_amplitude - self.plain_amplitude) / se) if se > 0 else float("inf")


@dataclass
class EchoResult:
    points: list[EchoPoint]
    frequency_hz: float
    fit: analysis.FitResult | None
    warnings: list[str] = field(default_factory=list)

    def table(self) -> Table:
        rows = []
        for pt in self.points:
            se_e = pt.echo.stderr if pt.echo.stderr is not None else np.zeros_like(pt.echo.p1)
            se_p = pt.plain.stderr if pt.plain.stderr is not None else np.zeros_like(pt.plain.p1)
            for k, t in enumerate(pt.echo.hold_times):
                rows.append([pt.pairs, t / NS, pt.echo.p1[k], se_e[k], pt.plain.p1[k], se_p[k]])
        return Table(["n_pairs", "dt_ns", "echo_p1", "echo_stderr", "plain_p1", "plain_stderr"], rows)

    def spectrum_table(self) -> Table:
        return Table(
            ["n_pairs", "freq_mhz", "echo_amplitude", "echo_stderr", "plain_amplitude", "plain_stderr"],
            [[p.pairs, self.frequency_hz / 1e6, p.echo_amplitude, p.echo_stderr, p.plain_amplitude, p.plain_stderr]
             for p in self.points],
        )

    def summary(self) -> dict:
        out = {"frequency_mhz": self.frequency_hz / 1e6,
               "separation_se": [p.separation for p in self.points], "warnings": self.warnings}
        if self.fit is not None:
            out.update(epsilon_x=self.fit.epsilon, epsilon_x_stderr=self.fit.epsilon_stderr, amplitude=self.fit.amplitude)
        return out


def _coefficients(samples: np.ndarray, holds: np.ndarray, freq_hz: float) -> np.ndarray:
    """Per-row DFT coefficient at ``freq_hz`` (mean subtracted, divided by n)."""
    x = samples - samples.mean(axis=1, keepdims=True)
    phase = np.exp(-2j * np.pi * freq_hz * holds)
    return x @ phase / holds.size


def _amplitude(coeffs: np.ndarray) -> tuple[float, float]:
    """|mean coefficient| and its standard error along the mean direction."""
    m = coeffs.mean()
    M = coeffs.size
    if M < 2:
        return float(abs(m)), 0.0
    u = m / abs(m) if abs(m) > 0 else 1.0
    proj = (coeffs * np.conj(u)).real
    return float(abs(m)), float(proj.std(ddof=1) / np.sqrt(M))


def run_echo(cfg: ExperimentConfig, pairs=None, shots: int | None = None) -> EchoResult:
    device = Device.from_config(cfg)
    p = cfg.protocol
    pairs = list(p.echo_pairs if pairs is None else pairs)
    holds = p.hold_grid()
    U = build_entangler(cfg, device)
    hold = device.config(_target(cfg))
    pred = predict_noon(device, hold, p.omega_ref_mhz * MHZ)
    # the bin closest to the predicted folded fringe on the unpadded grid
    spec0 = analysis.spectrum_of(holds, np.zeros(holds.size))
    f_bin = float(spec0.frequencies[np.argmin(np.abs(spec0.frequencies - pred.folded_hz(spec0.dt)))])
    model = cfg.noise_model() or NoiseModel.noiseless(device.n_sites, cfg.simulation.seed)
    readout = cfg.readout_model()
    M = cfg.simulation.shots if shots is None else shots
    points, notes = [], []
    for N in pairs:
        recs = {}
        for echo, tag in ((True, _TAG_ECHO), (False, _TAG_PLAIN)):
            prog = ramsey_program(device, U, hold, True, p.jump_ns * NS, echo_pairs=N, echo=echo)
            probs = shot_fringes(cfg, device, prog, holds, model, readout, tag, N, M)
            # one readout shot per hold time and trajectory
            rng = substream(cfg.simulation.seed, _TAG_READOUT, tag, N)
            clicks = (rng.random(probs.shape) < probs).astype(float)
            coeff = _coefficients(clicks, holds, f_bin)
            amp, se = _amplitude(coeff)
            rec = analysis.FringeRecord(holds, clicks.mean(0), clicks.std(0, ddof=1) / np.sqrt(M) if M > 1 else None,
                                        meta={"shots": M})
            recs[echo] = (rec, amp, se)
        points.append(EchoPoint(N, recs[True][0], recs[False][0], recs[True][1], recs[True][2], recs[False][1], recs[False][2]))
    fit = None
    good = [(pt.pairs, pt.echo_amplitude) for pt in points]
    ses = [pt.echo_stderr for pt in points]
    if len(good) >= 3:
        try:
            fit = analysis.fit_power_decay(good, 4, ses)
        except DomainError as exc:
            _warn(notes, f"echo decay fit skipped: {exc}")
    return EchoResult(points, f_bin, fit, notes)


# ----------------------------------------------------------- reversibility


@dataclass
class ReversibilityResult:
    pairs: np.ndarray
    t_ramps: np.ndarray
    fidelity: np.ndarray  # (n_ramps, n_pairs)
    stderr: np.ndarray
    fits: list[analysis.FitResult | None]
    warnings: list[str] = field(default_factory=list)

    def table(self) -> Table:
        rows = []
        for i, T in enumerate(self.t_ramps):
            for j, N in enumerate(self.pairs):
                rows.append([T / NS, int(N), self.fidelity[i, j], self.stderr[i, j]])
        return Table(["t_ramp_ns", "n_pairs", "fidelity", "stderr"], rows)

    def summary(self) -> dict:
        return {
            "fits": [
                None if f is None else {"t_ramp_ns": T / NS, "A": f.amplitude, "epsilon_rev": f.epsilon,
                                        "epsilon_rev_stderr": f.epsilon_stderr}
                for T, f in zip(self.t_ramps, self.fits)
            ],
            "warnings": self.warnings,
        }


def _reversibility_worker(args):
    device, controls, model, key, readout, sites, policy = args
    psi0 = device.vacuum()
    if model is None:
        st = evolve_sampled(psi0, controls, policy, np.inf)
    else:
        st = evolve_trajectory(psi0, controls, model, substream(model.seed, *key), policy, rotation_threshold=np.inf)
    return reported_probability(st, readout, sites, [1] * len(sites))


def run_reversibility(cfg: ExperimentConfig, pairs=None, t_ramps_ns=None, shots: int | None = None) -> ReversibilityResult:
    device = Device.from_config(cfg)
    p = cfg.protocol
    pairs = np.asarray(p.reversibility_pairs if pairs is None else pairs, int)
    t_ramps = np.asarray([p.t_ramp_ns] if t_ramps_ns is None else t_ramps_ns, float) * NS
    model = cfg.noise_model()
    readout = cfg.readout_model()
    M = 1 if model is None else (cfg.simulation.shots if shots is None else shots)
    dt, policy = _dt(cfg, model is not None), _policy(cfg)
    sites = list(device.left)
    F = np.zeros((t_ramps.size, pairs.size))
    S = np.zeros_like(F)
    fits, notes = [], []
    ancilla = p.ancilla
    for i, T in enumerate(t_ramps):
        U = build_entangler(cfg, device, T)
        pair = U + U.reversed()
        for j, N in enumerate(pairs):
            sched = Schedule(device.n_sites, tuple(preparation(device, ancilla)))
            sched = sched + Schedule(device.n_sites, tuple(_jump_pair(device, p.jump_ns * NS)[0]))
            for _ in range(int(N)):
                sched = sched + pair
            sched = sched + Schedule(device.n_sites, tuple(_jump_pair(device, p.jump_ns * NS)[1]))
            controls = compile_schedule(sched, dt)
            tasks = [(device, controls, model, (_TAG_REV, i, int(N), s), readout, sites, policy) for s in range(M)]
            vals = np.array(_map(_reversibility_worker, tasks, cfg.simulation.jobs))
            F[i, j] = vals.mean()
            S[i, j] = vals.std(ddof=1) / np.sqrt(M) if M > 1 else 0.0
        fit = None
        if pairs.size >= 3:
            try:
                fit = analysis.fit_power_decay(list(zip(pairs, F[i])), 2, S[i] if M > 1 else None)
            except DomainError as exc:
                _warn(notes, f"t_ramp {T / NS:g} ns: fit skipped: {exc}")
        fits.append(fit)
    return ReversibilityResult(pairs, t_ramps, F, S, fits, notes)


def _jump_pair(device, duration):
    return (jump(device, "large_disorder", "small_disorder", duration),
            jump(device, "small_disorder", "large_disorder", duration))


# ----------------------------------------------------------------- dispatch


def run_protocol(cfg: ExperimentConfig, tag: str):
    runners = {
        "conditional-transport": run_conditional_transport,
        "echo": run_echo,
        "noon-ramsey": run_noon_ramsey,
        "phonon-swap": run_phonon_swap,
        "ramp-sweep": run_ramp_sweep,
        "reversibility": run_reversibility,
        "sensing": run_sensing,
    }
    try:
        fn = runners[tag]
    except KeyError as exc:
        raise DomainError(f"unknown protocol {tag!r}; choose from {sorted(runners)}") from exc
    return fn(cfg)
