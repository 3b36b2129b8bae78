"""Experiment configuration documents.

A configuration is a YAML mapping with units in the key names (``_ns``,
``_us``, ``_mhz``).  :func:`load_config` validates the whole document and
reports every problem at once.  Dotted ``key=value`` overrides
(:func:`apply_overrides`) support sweep scripting: a list given for a scalar
field, or a list of lists for a list field, becomes a sweep axis
(:func:`expand_sweeps`).
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import DomainError
from .fock import LatticeSpec
from .units import MHZ, NS, US

PROTOCOLS = (
    "conditional-transport",
    "echo",
    "noon-ramsey",
    "phonon-swap",
    "ramp-sweep",
    "reversibility",
    "sensing",
)
ANCILLA_PREPS = ("ground", "excited", "superposition")
VARIANTS = ("inverted-disorder", "phonon-assisted")
REQUIRED_CONFIGURATIONS = ("large_disorder", "small_disorder", "transistor", "inverted")


class ConfigError(DomainError):
    """A configuration document violates one or more invariants."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class DeviceConfig:
    sites: list[str]
    U_mhz: list[float]
    J_mhz: list[float]
    ancilla: int
    left: list[int]
    right: list[int]
    configurations_mhz: dict[str, list[float]]
    T1_us: list[float]
    T2star_us: list[float]
    readout_fidelity: list[float]
    n_max: int = 2

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def lattice(self) -> LatticeSpec:
        return LatticeSpec(
            self.n_sites,
            tuple(np.asarray(self.J_mhz) * MHZ),
            tuple(np.asarray(self.U_mhz) * MHZ),
            self.n_max,
        )

    def detunings(self, name: str) -> np.ndarray:
        return np.asarray(self.configurations_mhz[name], dtype=float) * MHZ


@dataclass
class PhononConfig:
    drive_site: int = 1
    epsilon_d_mhz: float = 20.0
    omega_d_mhz: float | None = None  # None: exact band-edge gap / 2
    duration_ns: list[float] = field(default_factory=lambda: [0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 110.0, 120.0, 140.0, 160.0, 180.0, 200.0])
    scan_span: float = 0.1  # relative half-width of the omega_d scan
    scan_points: int = 21
    sigma_ns: float = 5.0


@dataclass
class ProtocolConfig:
    variant: str = "inverted-disorder"
    target_configuration: str = "inverted"
    t_ramp_ns: float = 240.0
    tau_fraction: float = 0.5
    jump_ns: float = 0.0
    ancilla: str = "superposition"
    omega_ref_mhz: float = 50.0
    hold_ns: dict[str, float] = field(default_factory=lambda: {"start": 0.0, "stop": 200.0, "step": 1.0})
    sensing_delta_mhz: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    ramp_sweep_ns: list[float] = field(
        default_factory=lambda: [4.0, 6, 8, 11, 16, 22, 32, 45, 64, 90, 128, 180, 256, 360, 512, 720, 1024, 1450, 2000]
    )
    echo_pairs: list[int] = field(default_factory=lambda: [1, 2, 3])
    reversibility_pairs: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    adiabatic_floor: float = 0.95
    spectrum_pad: int = 16
    phonon: PhononConfig = field(default_factory=PhononConfig)

    def hold_grid(self) -> np.ndarray:
        h = self.hold_ns
        n = int(round((h["stop"] - h["start"]) / h["step"])) + 1
        return (h["start"] + h["step"] * np.arange(n)) * NS


@dataclass
class NoiseConfig:
    enabled: bool = False
    markovian: bool = True
    quasistatic: bool = True
    T2_us: float | list[float] = 4.0
    sigma_mhz: float | list[float] | None = None  # None: sqrt(2)/T2* per site


@dataclass
class ReadoutConfig:
    enabled: bool = False


@dataclass
class SimulationConfig:
    dt_ns: float = 0.25
    trajectory_dt_ns: float = 0.5  # stochastic runs; shot noise dwarfs the step error
    shots: int = 200
    seed: int = 1234
    jobs: int = 1
    rotation_threshold: float = 0.05
    keep_tolerance: float = 1e-10


@dataclass
class ExperimentConfig:
    name: str
    device: DeviceConfig
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    default_protocol: str = "noon-ramsey"
    description: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def sigma(self) -> np.ndarray:
        """Quasi-static detuning spread per site (rad/s)."""
        n = self.device.n_sites
        if self.noise.sigma_mhz is None:
            return np.sqrt(2.0) / (np.asarray(self.device.T2star_us) * US)
        return np.broadcast_to(np.asarray(self.noise.sigma_mhz, float) * MHZ, (n,)).copy()

    def noise_model(self):
        """The configured :class:`~bhtransistor.noise.NoiseModel`, or None if noise is off."""
        from .noise import NoiseModel

        if not self.noise.enabled:
            return None
        n = self.device.n_sites
        T1 = np.asarray(self.device.T1_us, float) * US
        T2 = np.broadcast_to(np.asarray(self.noise.T2_us, float) * US, (n,)).copy()
        if not self.noise.markovian:
            T1 = np.full(n, np.inf)
            T2 = np.full(n, np.inf)
        sigma = self.sigma() if self.noise.quasistatic else np.zeros(n)
        return NoiseModel(tuple(T1), tuple(T2), tuple(sigma), self.simulation.seed)

    def readout_model(self):
        from .noise import ReadoutModel

        if not self.readout.enabled:
            return ReadoutModel.ideal(self.device.n_sites, self.device.n_max + 1)
        return ReadoutModel.from_fidelities(self.device.readout_fidelity, self.device.n_max + 1)


# ---------------------------------------------------------------- parsing


def _build(cls, data: dict, path: str, problems: list[str]):
    if not isinstance(data, dict):
        problems.append(f"{path}: expected a mapping, got {type(data).__name__}")
        return None
    names = {f.name: f for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(data) - set(names))
    for k in unknown:
        problems.append(f"{path}.{k}: unknown field" if path else f"{k}: unknown field")
    kwargs = {}
    nested = {
        "device": DeviceConfig,
        "protocol": ProtocolConfig,
        "noise": NoiseConfig,
        "readout": ReadoutConfig,
        "simulation": SimulationConfig,
        "phonon": PhononConfig,
    }
    for k, v in data.items():
        if k not in names:
            continue
        if k in nested and isinstance(v, dict):
            built = _build(nested[k], v, f"{path}.{k}" if path else k, problems)
            if built is not None:
                kwargs[k] = built
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{path or 'config'}: {exc}")
        return None


def _check(cfg: ExperimentConfig) -> list[str]:
    p: list[str] = []
    d = cfg.device
    n = d.n_sites
    if n < 2:
        p.append("device.sites: need at least 2 sites")

    def length(name, values, expected):
        try:
            if len(values) != expected:
                p.append(f"device.{name}: expected {expected} entries, got {len(values)}")
                return False
        except TypeError:
            p.append(f"device.{name}: expected a list")
            return False
        if not all(isinstance(x, (int, float)) and np.isfinite(x) for x in values):
            p.append(f"device.{name}: entries must be finite numbers")
            return False
        return True

    length("U_mhz", d.U_mhz, n)
    length("J_mhz", d.J_mhz, n - 1)
    if length("T1_us", d.T1_us, n) and any(x <= 0 for x in d.T1_us):
        p.append("device.T1_us: must be positive")
    if length("T2star_us", d.T2star_us, n) and any(x <= 0 for x in d.T2star_us):
        p.append("device.T2star_us: must be positive")
    if length("readout_fidelity", d.readout_fidelity, n) and any(not 0 <= x <= 1 for x in d.readout_fidelity):
        p.append("device.readout_fidelity: must lie in [0, 1]")
    if not isinstance(d.n_max, int) or d.n_max < 1:
        p.append("device.n_max: must be an integer >= 1")
    if not (isinstance(d.ancilla, int) and 0 <= d.ancilla < n):
        p.append(f"device.ancilla: must be a site index in [0, {n})")
    for side in ("left", "right"):
        idx = getattr(d, side)
        if not idx or not all(isinstance(i, int) and 0 <= i < n for i in idx):
            p.append(f"device.{side}: must be a nonempty list of site indices")
    if set(d.left) & set(d.right) or d.ancilla in set(d.left) | set(d.right):
        p.append("device: left, right and ancilla must be disjoint")
    if not isinstance(d.configurations_mhz, dict):
        p.append("device.configurations_mhz: expected a mapping")
    else:
        for name in REQUIRED_CONFIGURATIONS:
            if name not in d.configurations_mhz:
                p.append(f"device.configurations_mhz.{name}: missing")
        for name, row in d.configurations_mhz.items():
            length(f"configurations_mhz.{name}", row, n)

    pr = cfg.protocol
    if cfg.default_protocol not in PROTOCOLS:
        p.append(f"default_protocol: unknown protocol {cfg.default_protocol!r}")
    if pr.variant not in VARIANTS:
        p.append(f"protocol.variant: must be one of {VARIANTS}")
    if isinstance(d.configurations_mhz, dict) and pr.target_configuration not in d.configurations_mhz:
        p.append(f"protocol.target_configuration: {pr.target_configuration!r} is not a device configuration")
    if not pr.t_ramp_ns >= 0:
        p.append("protocol.t_ramp_ns: must be >= 0")
    if not 0.4 <= pr.tau_fraction <= 0.6:
        p.append("protocol.tau_fraction: must lie in [0.4, 0.6]")
    if pr.jump_ns < 0:
        p.append("protocol.jump_ns: must be >= 0")
    if pr.ancilla not in ANCILLA_PREPS:
        p.append(f"protocol.ancilla: must be one of {ANCILLA_PREPS}")
    h = pr.hold_ns
    if not (isinstance(h, dict) and {"start", "stop", "step"} <= set(h)):
        p.append("protocol.hold_ns: needs start, stop and step")
    elif not (h["step"] > 0 and h["stop"] >= h["start"] >= 0):
        p.append("protocol.hold_ns: need step > 0 and stop >= start >= 0")
    if any(x <= 0 for x in pr.ramp_sweep_ns):
        p.append("protocol.ramp_sweep_ns: ramp times must be positive")
    if any((not isinstance(x, int)) or x < 1 for x in pr.echo_pairs):
        p.append("protocol.echo_pairs: must be integers >= 1")
    if any((not isinstance(x, int)) or x < 0 for x in pr.reversibility_pairs):
        p.append("protocol.reversibility_pairs: must be integers >= 0")
    if not isinstance(pr.spectrum_pad, int) or pr.spectrum_pad < 1:
        p.append("protocol.spectrum_pad: must be an integer >= 1")
    ph = pr.phonon
    if isinstance(ph, PhononConfig):
        if not 0 <= ph.drive_site < n:
            p.append("protocol.phonon.drive_site: outside the lattice")
        if ph.epsilon_d_mhz < 0:
            p.append("protocol.phonon.epsilon_d_mhz: must be >= 0")
        if any(x < 0 for x in ph.duration_ns):
            p.append("protocol.phonon.duration_ns: must be >= 0")
        if ph.scan_points < 1 or ph.scan_span < 0:
            p.append("protocol.phonon: scan_points >= 1 and scan_span >= 0 required")
    nz = cfg.noise
    T2 = np.atleast_1d(np.asarray(nz.T2_us, float))
    if T2.size not in (1, n) or np.any(T2 <= 0):
        p.append("noise.T2_us: a positive scalar or one value per site")
    elif len(d.T1_us) == n and np.any(T2 > 2 * np.asarray(d.T1_us, float)):
        p.append("noise.T2_us: must not exceed 2*T1")
    if nz.sigma_mhz is not None:
        s = np.atleast_1d(np.asarray(nz.sigma_mhz, float))
        if s.size not in (1, n) or np.any(s < 0):
            p.append("noise.sigma_mhz: a non-negative scalar or one value per site")
    sim = cfg.simulation
    if not sim.dt_ns > 0:
        p.append("simulation.dt_ns: must be positive")
    if not sim.trajectory_dt_ns > 0:
        p.append("simulation.trajectory_dt_ns: must be positive")
    if not (isinstance(sim.shots, int) and sim.shots >= 1):
        p.append("simulation.shots: must be an integer >= 1")
    if not isinstance(sim.seed, int) or sim.seed < 0:
        p.append("simulation.seed: must be a non-negative integer")
    if not (isinstance(sim.jobs, int) and sim.jobs >= 1):
        p.append("simulation.jobs: must be an integer >= 1")
    return p


def config_from_dict(doc: dict) -> ExperimentConfig:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["document: expected a mapping at top level"])
    if "name" not in doc:
        problems.append("name: missing")
    if "device" not in doc:
        problems.append("device: missing")
    cfg = _build(ExperimentConfig, doc, "", problems) if not problems else None
    if cfg is not None and not isinstance(cfg.device, DeviceConfig):
        problems.append("device: expected a mapping")
        cfg = None
    if cfg is not None:
        problems.extend(_check(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def preset_names() -> list[str]:
    root = resources.files("bhtransistor") / "presets"
    return sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    root = resources.files("bhtransistor") / "presets"
    f = root / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(preset_names())}"])
    return f.read_text()


def read_document(source: str | Path) -> dict:
    """Parse a config file, or a bare packaged preset name such as ``noon7``."""
    s = str(source)
    path = Path(s)
    if path.is_file():
        text = path.read_text()
    elif "/" not in s and "\\" not in s and not path.suffix:
        text = preset_text(s)
    else:
        raise ConfigError([f"config file {s!r} does not exist"])
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{s}: not valid YAML ({exc})"]) from None
    return doc


def load_config(source: str | Path, overrides: list[str] = ()) -> ExperimentConfig:
    doc = read_document(source)
    return config_from_dict(apply_overrides(doc, overrides))


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError([f"override {item!r}: expected key=value"])
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError([f"override {item!r}: empty key"])
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.split("."), value


_SHORTHAND = {
    "ancilla": ["protocol", "ancilla"],
    "t_ramp_ns": ["protocol", "t_ramp_ns"],
    "seed": ["simulation", "seed"],
    "shots": ["simulation", "shots"],
    "noise": ["noise", "enabled"],
}


def _shorthand(doc: dict, path: list[str], value) -> list[str]:
    # a scalar aimed at a whole section (``noise=true``) means the section's switch
    if len(path) == 1 and path[0] in _SHORTHAND and not isinstance(value, dict):
        if path[0] not in doc or isinstance(doc[path[0]], dict):
            return _SHORTHAND[path[0]]
    return path


def apply_overrides(doc: dict, overrides) -> dict:
    """Return a copy of ``doc`` with dotted-path overrides applied.

    A single key without dots that is not a top-level field is looked up in a
    short list of aliases (``ancilla``, ``t_ramp_ns``, ``seed``, ``shots``,
    ``noise``).
    """
    out = copy.deepcopy(doc)
    for item in overrides:
        path, value = parse_override(item)
        path = _shorthand(out, path, value)
        node = out
        for part in path[:-1]:
            if not isinstance(node, dict):
                raise ConfigError([f"override {item!r}: {part!r} is not a mapping"])
            node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([f"override {item!r}: parent is not a mapping"])
        node[path[-1]] = value
    return out


def _default_value(path: list[str]):
    """Value of a dotted path in a fresh default config (None when unknown)."""
    defaults = {
        "protocol": asdict(ProtocolConfig()),
        "noise": asdict(NoiseConfig()),
        "readout": asdict(ReadoutConfig()),
        "simulation": asdict(SimulationConfig()),
    }
    node: Any = defaults
    for part in path:
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def expand_sweeps(doc: dict, overrides) -> list[tuple[dict, dict]]:
    """Cross product of sweep overrides.

    Returns ``(point, document)`` pairs where ``point`` maps each swept dotted
    key to its value.  A list is a sweep when the field is a scalar, and a list
    of lists is a sweep for list-valued fields.
    """
    fixed, axes = [], []
    for item in overrides:
        path, value = parse_override(item)
        path = _shorthand(doc, path, value)
        default = _default_value(path)
        is_list_field = isinstance(default, list)
        if isinstance(value, list) and (
            (not is_list_field and not (default is None and path[0] == "device"))
            or (is_list_field and value and all(isinstance(v, list) for v in value))
        ):
            axes.append((".".join(path), value))
        else:
            fixed.append(f"{'.'.join(path)}={yaml.safe_dump(value, default_flow_style=True).strip().removesuffix('...').strip()}")
    base = apply_overrides(doc, fixed)
    if not axes:
        return [({}, base)]
    out = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        point = {k: v for (k, _), v in zip(axes, combo)}
        items = [f"{k}={yaml.safe_dump(v, default_flow_style=True).strip().removesuffix('...').strip()}" for k, v in point.items()]
        out.append((point, apply_overrides(base, items)))
    return out
