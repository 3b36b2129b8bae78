"""Desk-scale simulator for an ancilla-controlled Bose-Hubbard transistor."""

from .analysis import (
    FitResult,
    FoldedSpectrum,
    FringeRecord,
    compare_density,
    dominant_frequency,
    fit_power_decay,
    fold_frequency,
    fringe_spectrum,
)
from .config import ExperimentConfig, load_config, preset_names
from .errors import AmbiguityError, CapabilityError, DomainError, ModelValidityError, NumericError
from .fock import BasisRegistry, CompositeState, LatticeSpec, build_hamiltonian, density_expectation
from .protocols import run_protocol

__version__ = "0.1.0"

__all__ = [
    "AmbiguityError",
    "BasisRegistry",
    "CapabilityError",
    "CompositeState",
    "DomainError",
    "ExperimentConfig",
    "FitResult",
    "FoldedSpectrum",
    "FringeRecord",
    "LatticeSpec",
    "ModelValidityError",
    "NumericError",
    "build_hamiltonian",
    "compare_density",
    "density_expectation",
    "dominant_frequency",
    "fit_power_decay",
    "fold_frequency",
    "fringe_spectrum",
    "load_config",
    "preset_names",
    "run_protocol",
]
