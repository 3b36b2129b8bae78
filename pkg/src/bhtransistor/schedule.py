"""Declarative control programs and their compilation to sampled detunings.

A :class:`Schedule` is a sequential list of segments.  Continuous segments
(holds, ramps, single-site modulation) become per-sample detuning vectors;
microwave rotations, virtual phases and readout markers become zero-duration
events.  Internally everything is SI: seconds and rad/s.  The text form
(:func:`dump_schedule` / :func:`load_schedule`) uses ns and MHz.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Union

import numpy as np
import yaml

from .errors import DomainError, ModelValidityError
from .fock import CompositeState, LatticeSpec, enumerate_sector

from .units import MHZ, NS, TWO_PI  # noqa: F401


def _vec(x) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Hold:
    duration: float
    detunings: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "detunings", _vec(self.detunings))


@dataclass(frozen=True)
class ExpRamp:
    """Exponential flux ramp between two detuning configurations.

    ``shape="rise"`` moves fast first and settles slowly onto ``end``;
    ``shape="mirror"`` is its time reverse (slow departure from ``start``).
    """

    duration: float
    start: tuple[float, ...]
    end: tuple[float, ...]
    tau: float
    shape: str = "rise"
    allow_any_tau: bool = False

    def __post_init__(self):
        object.__setattr__(self, "start", _vec(self.start))
        object.__setattr__(self, "end", _vec(self.end))
        if self.shape not in ("rise", "mirror"):
            raise DomainError(f"unknown ramp shape {self.shape!r}")
        if len(self.start) != len(self.end):
            raise DomainError("ramp start and end differ in length")
        if self.tau <= 0:
            raise DomainError("ramp timescale tau must be positive")
        if not self.allow_any_tau and self.duration > 0:
            frac = self.tau / self.duration
            if not 0.4 - 1e-12 <= frac <= 0.6 + 1e-12:
                raise DomainError(
                    f"tau/t_ramp = {frac:.3f} outside [0.4, 0.6]; pass allow_any_tau=True to override"
                )

    def at(self, t: float) -> np.ndarray:
        s, e = np.asarray(self.start), np.asarray(self.end)
        if self.shape == "rise":
            return exp_ramp_eval(t, self.duration, self.tau, s, e)
        return exp_ramp_eval(self.duration - t, self.duration, self.tau, e, s)


@dataclass(frozen=True)
class LinearRamp:
    duration: float
    start: tuple[float, ...]
    end: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "start", _vec(self.start))
        object.__setattr__(self, "end", _vec(self.end))

    def at(self, t: float) -> np.ndarray:
        s, e = np.asarray(self.start), np.asarray(self.end)
        return s + (e - s) * (t / self.duration if self.duration else 1.0)


@dataclass(frozen=True)
class SiteModulation:
    """eps * envelope(t) * cos(omega t + phase) added to one site of ``base``.

    The envelope is flat-top with Gaussian edges of width ``sigma``, truncated
    at 2 sigma and offset so it starts and ends at zero.
    """

    site: int
    amplitude: float
    frequency: float
    duration: float
    base: tuple[float, ...]
    sigma: float = 5 * NS
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "base", _vec(self.base))
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")

    def envelope(self, t):
        return flat_top_envelope(t, self.duration, self.sigma)

    def at(self, t: float) -> np.ndarray:
        d = np.array(self.base)
        d[self.site] += self.amplitude * self.envelope(t) * np.cos(self.frequency * t + self.phase)
        return d


@dataclass(frozen=True)
class InstantRotation:
    site: int
    angle: float
    phase: float = 0.0
    duration = 0.0


@dataclass(frozen=True)
class VirtualPhase:
    site: int
    phase: float
    duration = 0.0


@dataclass(frozen=True)
class ReadoutMarker:
    label: str = "readout"
    duration = 0.0


Segment = Union[Hold, ExpRamp, LinearRamp, SiteModulation, InstantRotation, VirtualPhase, ReadoutMarker]
Event = Union[InstantRotation, VirtualPhase, ReadoutMarker]
SEGMENT_TYPES = {
    cls.__name__: cls
    for cls in (Hold, ExpRamp, LinearRamp, SiteModulation, InstantRotation, VirtualPhase, ReadoutMarker)
}
_EVENT_TYPES = (InstantRotation, VirtualPhase, ReadoutMarker)


def exp_ramp_eval(t, t_ramp: float, tau: float, start, end):
    """start + (end - start) (1 - e^{-t/tau}) / (1 - e^{-t_ramp/tau})."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-15 * max(t_ramp, 1.0)) or np.any(t > t_ramp * (1 + 1e-12) + 1e-30):
        raise DomainError(f"t outside [0, t_ramp={t_ramp}]")
    if t_ramp == 0:
        frac = np.ones_like(t)
    else:
        frac = -np.expm1(-t / tau) / -np.expm1(-t_ramp / tau)
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if start.ndim and np.ndim(frac):
        return start + np.multiply.outer(frac, end - start)
    return start + (end - start) * frac


def flat_top_envelope(t, duration: float, sigma: float):
    t = np.asarray(t, dtype=float)
    edge = min(2.0 * sigma, duration / 2.0)
    if edge <= 0:
        return np.where((t >= 0) & (t <= duration), 1.0, 0.0)
    s = edge / 2.0
    floor = np.exp(-2.0)

    def g(x):
        return (np.exp(-(x**2) / (2 * s**2)) - floor) / (1.0 - floor)

    env = np.ones_like(t)
    env = np.where(t < edge, g(t - edge), env)
    env = np.where(t > duration - edge, g(t - (duration - edge)), env)
    return np.clip(np.where((t < 0) | (t > duration), 0.0, env), 0.0, 1.0)


@dataclass(frozen=True)
class Schedule:
    n_sites: int
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            _validate_segment(seg, self.n_sites)

    def __add__(self, other: "Schedule") -> "Schedule":
        if other.n_sites != self.n_sites:
            raise DomainError("cannot join schedules for different lattices")
        return Schedule(self.n_sites, self.segments + other.segments)

    @property
    def duration(self) -> float:
        return float(sum(seg.duration for seg in self.segments))

    def reversed(self) -> "Schedule":
        """Time-mirrored program: ramps run backwards, rotations are inverted."""
        return Schedule(self.n_sites, tuple(_reverse_segment(s) for s in reversed(self.segments)))


def _validate_segment(seg, n_sites: int):
    if type(seg).__name__ not in SEGMENT_TYPES:
        raise DomainError(f"unknown segment {seg!r}")
    if getattr(seg, "duration", 0.0) < 0:
        raise DomainError(f"negative duration in {seg!r}")
    site = getattr(seg, "site", None)
    if site is not None and not 0 <= site < n_sites:
        raise DomainError(f"site {site} outside lattice of {n_sites} sites")
    for name in ("detunings", "start", "end", "base"):
        v = getattr(seg, name, None)
        if v is not None:
            if len(v) != n_sites:
                raise DomainError(f"{type(seg).__name__}.{name} has {len(v)} entries, expected {n_sites}")
            if not np.all(np.isfinite(v)):
                raise DomainError(f"{type(seg).__name__}.{name} is not finite")


def _reverse_segment(seg):
    if isinstance(seg, ExpRamp):
        return replace(seg, start=seg.end, end=seg.start, shape="mirror" if seg.shape == "rise" else "rise")
    if isinstance(seg, LinearRamp):
        return replace(seg, start=seg.end, end=seg.start)
    if isinstance(seg, SiteModulation):
        # cos(w (T - t) + p) == cos(w t - w T - p)
        return replace(seg, phase=-(seg.frequency * seg.duration + seg.phase))
    if isinstance(seg, InstantRotation):
        return replace(seg, angle=-seg.angle)
    if isinstance(seg, VirtualPhase):
        return replace(seg, phase=-seg.phase)
    return seg


@dataclass
class SampledControls:
    """Per-sample midpoint detunings plus zero-duration events.

    ``steps[k]`` is the length of sample ``k`` (equal to ``dt`` unless a
    segment's duration is not a multiple of it).  ``events`` holds
    ``(sample_index, event)`` pairs; an event at index ``k`` fires before sample
    ``k``.
    """

    dt: float
    detunings: np.ndarray
    steps: np.ndarray
    events: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.steps.shape[0])

    @property
    def duration(self) -> float:
        return float(self.steps.sum())

    def events_by_index(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for idx, ev in self.events:
            out.setdefault(idx, []).append(ev)
        return out

    def sample_times(self) -> np.ndarray:
        """Start time of each sample."""
        return np.concatenate([[0.0], np.cumsum(self.steps)[:-1]]) if self.n_samples else np.zeros(0)

    def with_offsets(self, offsets) -> "SampledControls":
        """Same program with a constant per-site detuning offset added."""
        return SampledControls(self.dt, self.detunings + np.asarray(offsets, float), self.steps, list(self.events))


def compile_schedule(schedule: Schedule, dt: float) -> SampledControls:
    """Sample every continuous segment at interval midpoints."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    rows, steps, events = [], [], []
    count = 0
    for seg in schedule.segments:
        if isinstance(seg, _EVENT_TYPES):
            events.append((count, seg))
            continue
        if seg.duration == 0:
            continue
        n = max(1, int(np.ceil(seg.duration / dt - 1e-9)))
        h = seg.duration / n
        mids = (np.arange(n) + 0.5) * h
        if isinstance(seg, Hold):
            block = np.tile(np.asarray(seg.detunings), (n, 1))
        elif isinstance(seg, SiteModulation):
            block = np.tile(np.asarray(seg.base), (n, 1))
            block[:, seg.site] += seg.amplitude * seg.envelope(mids) * np.cos(seg.frequency * mids + seg.phase)
        else:
            block = np.array([seg.at(t) for t in mids])
        rows.append(block)
        steps.append(np.full(n, h))
        count += n
    det = np.vstack(rows) if rows else np.zeros((0, schedule.n_sites))
    st = np.concatenate(steps) if steps else np.zeros(0)
    return SampledControls(dt, det, st, events)


compile = compile_schedule  # noqa: A001  (public name used by callers and docs)


@lru_cache(maxsize=512)
def _pairing(lattice: LatticeSpec, n: int, site: int):
    """Indices in sector n with site empty, and their partners in sector n+1."""
    lo = enumerate_sector(lattice, n)
    hi = enumerate_sector(lattice, n + 1)
    idx0 = np.flatnonzero(lo.states[:, site] == 0)
    partners = lo.states[idx0].copy()
    partners[:, site] = 1
    idx1 = np.array([hi.index[tuple(p)] for p in partners], dtype=np.int64)
    return idx0, idx1


_EMPTY_SECTOR = 1e-30


def site_population(state: CompositeState, site: int, occupancy: int) -> float:
    total = 0.0
    for n, v in state.sectors.items():
        mask = state.registry[n].states[:, site] == occupancy
        total += float(np.sum(np.abs(v[mask]) ** 2))
    return total


def apply_rotation(
    state: CompositeState, site: int, theta: float, phi: float = 0.0, threshold: float = 1e-6
) -> CompositeState:
    """Selective 0<->1 rotation on one site.

    Acts with [[cos(t/2), -i e^{-i phi} sin(t/2)], [-i e^{i phi} sin(t/2), cos(t/2)]]
    on each pair of basis states differing only by that site's occupancy 0/1.
    Components where the site holds two or more photons are left alone.
    """
    higher = sum(site_population(state, site, k) for k in range(2, state.lattice.n_max + 1))
    if higher > threshold:
        raise ModelValidityError(
            f"site {site} holds {higher:.2e} population at occupancy >= 2; "
            f"a selective rotation is not valid (threshold {threshold:.1e})"
        )
    lat = state.lattice
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    m01 = -1j * np.exp(-1j * phi) * s
    m10 = -1j * np.exp(1j * phi) * s
    n_top = lat.n_sites * lat.n_max
    pairs = sorted({n for n in state.sectors} | {n - 1 for n in state.sectors})
    out = {n: v.copy() for n, v in state.sectors.items()}
    for n in pairs:
        if n < 0 or n + 1 > n_top:
            continue
        lo, hi = state.sectors.get(n), state.sectors.get(n + 1)
        if lo is None and hi is None:
            continue
        idx0, idx1 = _pairing(lat, n, site)
        a = lo[idx0] if lo is not None else 0.0
        b = hi[idx1] if hi is not None else 0.0
        new_a = c * a + m01 * b
        new_b = m10 * a + c * b
        if n not in out:
            out[n] = np.zeros(state.registry[n].dim, dtype=complex)
        if n + 1 not in out:
            out[n + 1] = np.zeros(state.registry[n + 1].dim, dtype=complex)
        out[n][idx0] = new_a
        out[n + 1][idx1] = new_b
    # a pi pulse leaves ~1e-17 amplitudes behind; drop sectors that are numerically empty
    kept = {n: v for n, v in out.items() if np.vdot(v, v).real > _EMPTY_SECTOR}
    return CompositeState(state.registry, kept or out)


def apply_virtual_phase(state: CompositeState, site: int, phase: float) -> CompositeState:
    """Multiply every amplitude by exp(i phase n_site)."""
    out = {}
    for n, v in state.sectors.items():
        occ = state.registry[n].states[:, site]
        out[n] = v * np.exp(1j * phase * occ)
    return CompositeState(state.registry, out)


def apply_event(state: CompositeState, event, threshold: float = 1e-6) -> CompositeState:
    if isinstance(event, InstantRotation):
        return apply_rotation(state, event.site, event.angle, event.phase, threshold)
    if isinstance(event, VirtualPhase):
        return apply_virtual_phase(state, event.site, event.phase)
    return state


# -- text form -----------------------------------------------------------------

_TIME_FIELDS = {"duration", "tau", "sigma"}
_FREQ_FIELDS = {"detunings", "start", "end", "base", "amplitude", "frequency"}


def _to_doc(seg) -> dict:
    d = {"type": type(seg).__name__}
    for f in fields(seg):
        val = getattr(seg, f.name)
        if f.name in _TIME_FIELDS:
            val = float(val) / NS
        elif f.name in _FREQ_FIELDS:
            val = (np.asarray(val) / MHZ).tolist() if isinstance(val, tuple) else float(val) / MHZ
        d[f.name] = val
    if isinstance(seg, _EVENT_TYPES):
        d.pop("duration", None)
    return d


def _from_doc(d: dict):
    d = dict(d)
    try:
        cls = SEGMENT_TYPES[d.pop("type")]
    except KeyError as exc:
        raise DomainError(f"unknown or missing segment type in {d!r}") from exc
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise DomainError(f"{cls.__name__}: unknown fields {sorted(extra)}")
    kw = {}
    for k, v in d.items():
        if k in _TIME_FIELDS:
            v = float(v) * NS
        elif k in _FREQ_FIELDS:
            v = tuple(np.asarray(v, float) * MHZ) if isinstance(v, (list, tuple)) else float(v) * MHZ
        kw[k] = v
    return cls(**kw)


def schedule_to_document(schedule: Schedule) -> dict:
    return {
        "units": {"time": "ns", "frequency": "MHz (cyclic)", "angle": "rad"},
        "n_sites": schedule.n_sites,
        "segments": [_to_doc(s) for s in schedule.segments],
    }


def schedule_from_document(doc: dict) -> Schedule:
    return Schedule(int(doc["n_sites"]), tuple(_from_doc(s) for s in doc.get("segments", [])))


def dump_schedule(schedule: Schedule) -> str:
    return yaml.safe_dump(schedule_to_document(schedule), sort_keys=False)


def load_schedule(text: str) -> Schedule:
    return schedule_from_document(yaml.safe_load(text))


__all__ = [
    "ExpRamp",
    "Hold",
    "InstantRotation",
    "LinearRamp",
    "ReadoutMarker",
    "SampledControls",
    "Schedule",
    "SiteModulation",
    "VirtualPhase",
    "apply_event",
    "apply_rotation",
    "apply_virtual_phase",
    "compile_schedule",
    "dump_schedule",
    "exp_ramp_eval",
    "flat_top_envelope",
    "load_schedule",
    "site_population",
]
