"""Device description and the control programs shared by the protocols.

The entangling operation U ramps the lattice from the small-disorder
configuration into the transistor configuration (exponential "rise") and then
out to a target configuration (exponential "mirror").  Its inverse is the
time-mirrored schedule.  State preparation happens in the large-disorder
configuration, where single-site rotations are selective, followed by a
diabatic jump to the small-disorder configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .fock import BasisRegistry, CompositeState, LatticeSpec
from .schedule import (
    ExpRamp,
    InstantRotation,
    LinearRamp,
    ReadoutMarker,
    Schedule,
    SiteModulation,
    VirtualPhase,
)

HALF_PI = np.pi / 2


@dataclass
class Device:
    lattice: LatticeSpec
    ancilla: int
    left: tuple[int, ...]
    right: tuple[int, ...]
    configurations: dict[str, np.ndarray]
    registry: BasisRegistry = field(init=False, repr=False)

    def __post_init__(self):
        n = self.lattice.n_sites
        self.left = tuple(int(i) for i in self.left)
        self.right = tuple(int(i) for i in self.right)
        sites = set(self.left) | set(self.right) | {self.ancilla}
        if len(sites) != len(self.left) + len(self.right) + 1 or not all(0 <= s < n for s in sites):
            raise DomainError("left cluster, right cluster and ancilla must be distinct sites of the lattice")
        self.configurations = {k: np.asarray(v, dtype=float) for k, v in self.configurations.items()}
        for name, det in self.configurations.items():
            if det.shape != (n,):
                raise DomainError(f"configuration {name!r} has {det.size} entries, expected {n}")
        self.registry = BasisRegistry(self.lattice)

    @classmethod
    def from_config(cls, cfg) -> "Device":
        d = cfg.device
        confs = {name: d.detunings(name) for name in d.configurations_mhz}
        return cls(d.lattice(), d.ancilla, tuple(d.left), tuple(d.right), confs)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def n_cluster(self) -> int:
        """Photons in the cluster (the left sites are filled initially)."""
        return len(self.left)

    def config(self, name: str) -> np.ndarray:
        try:
            return self.configurations[name]
        except KeyError as exc:
            raise DomainError(f"unknown configuration {name!r}; have {sorted(self.configurations)}") from exc

    def occupations(self, cluster: str = "left", ancilla: int = 0) -> tuple[int, ...]:
        occ = [0] * self.n_sites
        for s in {"left": self.left, "right": self.right, "none": ()}[cluster]:
            occ[s] = 1
        occ[self.ancilla] = ancilla
        return tuple(occ)

    def product_state(self, cluster: str = "left", ancilla: int = 0) -> CompositeState:
        return CompositeState.basis_state(self.registry, self.occupations(cluster, ancilla))

    def vacuum(self) -> CompositeState:
        return CompositeState.basis_state(self.registry, (0,) * self.n_sites)

    def sensing_offsets(self, delta: float) -> np.ndarray:
        """+delta on the right cluster, -delta on the left cluster."""
        off = np.zeros(self.n_sites)
        off[list(self.right)] = delta
        off[list(self.left)] = -delta
        return off


@dataclass(frozen=True)
class Drive:
    """Single-site modulation applied in the transistor configuration."""

    site: int
    amplitude: float
    frequency: float
    duration: float
    sigma: float


def preparation(device: Device, ancilla: str, photons: bool = True) -> list:
    """Rotations in the large-disorder configuration: pi on the left sites, then the ancilla."""
    segs: list = []
    if photons:
        segs += [InstantRotation(s, np.pi) for s in device.left]
    if ancilla == "excited":
        segs.append(InstantRotation(device.ancilla, np.pi))
    elif ancilla == "superposition":
        segs.append(InstantRotation(device.ancilla, HALF_PI))
    elif ancilla != "ground":
        raise DomainError(f"unknown ancilla preparation {ancilla!r}")
    return segs


def jump(device: Device, start: str, end: str, duration: float) -> list:
    """The diabatic jump; instantaneous unless a finite duration is requested."""
    if duration <= 0:
        return []
    return [LinearRamp(duration, device.config(start), device.config(end))]


def _ramp(duration, start, end, tau_fraction, shape):
    if duration <= 0:
        return []
    return [ExpRamp(duration, start, end, tau_fraction * duration, shape)]


def rise(device: Device, t_ramp: float, tau_fraction: float = 0.5) -> list:
    return _ramp(t_ramp, device.config("small_disorder"), device.config("transistor"), tau_fraction, "rise")


def entangler(
    device: Device,
    t_ramp: float,
    target: str,
    tau_fraction: float = 0.5,
    drive: Drive | None = None,
) -> Schedule:
    """U: small disorder -> transistor [-> drive] -> target."""
    segs = rise(device, t_ramp, tau_fraction)
    if drive is not None and drive.duration > 0:
        segs.append(
            SiteModulation(
                drive.site, drive.amplitude, drive.frequency, drive.duration,
                device.config("transistor"), drive.sigma,
            )
        )
    segs += _ramp(t_ramp, device.config("transistor"), device.config(target), tau_fraction, "mirror")
    return Schedule(device.n_sites, tuple(segs))


@dataclass
class RamseyProgram:
    """A Ramsey-type sequence split around the variable hold.

    ``pre`` holds preparation, entangling steps and (for the echo) the ancilla
    pi pulse; ``post`` is event-free.  The final analysis pulse is a pi/2 about
    ``final_phase`` after a virtual phase on the ancilla.
    """

    pre: Schedule
    hold: np.ndarray
    post: Schedule
    final_phase: float = 0.0
    echo: bool = False


def ramsey_program(
    device: Device,
    U: Schedule,
    hold: np.ndarray,
    photons: bool = True,
    jump_duration: float = 0.0,
    echo_pairs: int = 0,
    echo: bool = False,
) -> RamseyProgram:
    """prep, (U U+)^N [pi, (U U+)^(N-1)] U, hold, U+, jump back.

    With ``echo_pairs = 0`` this is the plain many-body Ramsey sequence.
    """
    if echo and echo_pairs < 1:
        raise DomainError("an echo needs at least one entangling pair")
    Ud = U.reversed()
    pair = U + Ud
    pre = Schedule(
        device.n_sites,
        tuple(preparation(device, "superposition", photons))
        + tuple(jump(device, "large_disorder", "small_disorder", jump_duration)),
    )
    for _ in range(echo_pairs):
        pre = pre + pair
    if echo:
        pre = pre + Schedule(device.n_sites, (InstantRotation(device.ancilla, np.pi),))
        for _ in range(echo_pairs - 1):
            pre = pre + pair
    elif echo_pairs:
        for _ in range(echo_pairs - 1):
            pre = pre + pair
    pre = pre + U
    post = Ud + Schedule(device.n_sites, tuple(jump(device, "small_disorder", "large_disorder", jump_duration)))
    return RamseyProgram(pre, np.asarray(hold, dtype=float), post, np.pi if echo else 0.0, echo)


def analysis_pulses(device: Device, virtual_phase: float, final_phase: float) -> Schedule:
    return Schedule(
        device.n_sites,
        (
            VirtualPhase(device.ancilla, virtual_phase),
            InstantRotation(device.ancilla, HALF_PI, final_phase),
            ReadoutMarker(),
        ),
    )
