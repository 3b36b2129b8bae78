"""Flux-control calibration: crosstalk matrices, transmon dispersion and bias solving.

Conventions
-----------
``M[i, j] = dPhi_i / dI_j`` in flux quanta per mA, so ``Phi = M @ I``.  On
disk a matrix may be stored row-normalized to its diagonal (every diagonal
entry 1), which is how crosstalk maps are usually plotted; the diagonal scale
is then kept separately.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class CrosstalkMatrix:
    M: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DomainError(f"crosstalk matrix must be square, got shape {M.shape}")
        if np.any(np.diag(M) == 0):
            raise DomainError("crosstalk matrix has a zero diagonal entry")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.M))

    def row_normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Split into (rows divided by their diagonal, diagonal)."""
        d = np.diag(self.M).copy()
        return self.M / d[:, None], d

    def fluxes(self, currents) -> np.ndarray:
        return self.M @ np.asarray(currents, dtype=float)


def build_crosstalk(slopes, sensitivities) -> CrosstalkMatrix:
    """M_ij = (d omega_i / d I_j) / (d omega_i / d Phi_i).

    ``slopes`` is the full n x n matrix of frequency-vs-current slopes and
    ``sensitivities`` the diagonal frequency-vs-flux slopes at the bias point.
    """
    S = np.asarray(slopes, dtype=float)
    s = np.asarray(sensitivities, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or s.shape != (S.shape[0],):
        raise DomainError(f"shape mismatch: slopes {S.shape}, sensitivities {s.shape}")
    zero = np.flatnonzero(s == 0)
    if zero.size:
        raise DomainError(
            f"zero flux sensitivity for sites {zero.tolist()} (biased at a sweet spot?)"
        )
    return CrosstalkMatrix(S / s[:, None])


def invert_crosstalk(M: CrosstalkMatrix, fluxes, cond_cap: float = 1e6) -> np.ndarray:
    """Currents I with M @ I = Phi."""
    phi = np.asarray(fluxes, dtype=float)
    if phi.shape != (M.n,):
        raise DomainError(f"expected {M.n} target fluxes, got shape {phi.shape}")
    cond = M.condition_number
    if not np.isfinite(cond) or cond > cond_cap:
        raise NumericError(
            f"crosstalk matrix condition number {cond:.3g} exceeds cap {cond_cap:.3g}",
            condition_number=cond,
        )
    return np.linalg.solve(M.M, phi)


def save_crosstalk(M: CrosstalkMatrix, path, normalized: bool = False) -> None:
    """Plain whitespace-separated text, one row per line.

    With ``normalized=True`` rows are divided by their diagonal and the
    diagonal is written as a ``# diagonal:`` header so the file round-trips.
    """
    buf = io.StringIO()
    if normalized:
        rows, diag = M.row_normalized()
        buf.write("# diagonal: " + " ".join(repr(float(x)) for x in diag) + "\n")
    else:
        rows = M.M
    np.savetxt(buf, rows, fmt="%.17g")
    Path(path).write_text(buf.getvalue())


def load_crosstalk(path) -> CrosstalkMatrix:
    text = Path(path).read_text()
    diag = None
    for line in text.splitlines():
        if line.startswith("# diagonal:"):
            diag = np.array([float(x) for x in line.split(":", 1)[1].split()])
    rows = np.atleast_2d(np.loadtxt(io.StringIO(text), comments="#"))
    if diag is not None:
        if diag.shape != (rows.shape[0],):
            raise DomainError("diagonal header length does not match the matrix")
        rows = rows * diag[:, None]
    return CrosstalkMatrix(rows)


@dataclass(frozen=True)
class DispersionModel:
    """omega(Phi) = (omega_max + c) sqrt|cos(pi Phi / Phi0)| - c, per site.

    A symmetric-SQUID transmon approximation with synthetic constants; the
    frequency is maximal at Phi = 0 and periodic in Phi0.
    """

    omega_max: float
    charging: float
    phi0: float = 1.0

    def __post_init__(self):
        if self.omega_max <= 0 or self.charging < 0 or self.phi0 <= 0:
            raise DomainError("omega_max and phi0 must be positive, charging non-negative")

    def frequency(self, flux):
        c = np.abs(np.cos(np.pi * np.asarray(flux, dtype=float) / self.phi0))
        return (self.omega_max + self.charging) * np.sqrt(c) - self.charging

    def sensitivity(self, flux, h: float = 1e-7):
        """d omega / d Phi by central difference (in units of phi0)."""
        f = np.asarray(flux, dtype=float)
        return (self.frequency(f + h * self.phi0) - self.frequency(f - h * self.phi0)) / (
            2 * h * self.phi0
        )

    @property
    def omega_min(self) -> float:
        return -self.charging

    @classmethod
    def from_range(cls, omega_min: float, omega_max: float, flux_at_min: float = 0.45, phi0: float = 1.0):
        """Pick ``c`` so that omega(flux_at_min) = omega_min."""
        s = np.sqrt(abs(np.cos(np.pi * flux_at_min / phi0)))
        if not 0 < omega_min < omega_max or s >= 1:
            raise DomainError("need 0 < omega_min < omega_max and 0 < flux_at_min < phi0/2")
        c = (omega_min - omega_max * s) / (s - 1.0)
        if c < 0:
            raise DomainError(
                f"omega_min is above what a non-negative charging offset reaches at flux {flux_at_min}; "
                "pick a flux_at_min closer to phi0/2"
            )
        return cls(omega_max, c, phi0)


def flux_for_frequency(
    model: DispersionModel,
    target: float,
    tol: float = 2 * np.pi * 1e3,
    flux_limit: float | None = None,
) -> float:
    """Smallest non-negative flux on the principal branch reaching ``target``.

    Bisection on [0, flux_limit] where omega decreases monotonically;
    ``flux_limit`` defaults to just below Phi0/2.
    """
    hi = 0.5 * model.phi0 * (1 - 1e-9) if flux_limit is None else float(flux_limit)
    w_hi, w_lo = float(model.frequency(0.0)), float(model.frequency(hi))
    if not w_lo - tol <= target <= w_hi + tol:
        raise DomainError(
            f"target {target / (2e9 * np.pi):.6g} GHz outside tuning range "
            f"[{w_lo / (2e9 * np.pi):.6g}, {w_hi / (2e9 * np.pi):.6g}] GHz"
        )
    if target >= w_hi:
        return 0.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        w = float(model.frequency(mid))
        if abs(w - target) < tol * 1e-3:
            return mid
        if w > target:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(float(model.frequency(mid)) - target) >= tol:
        raise NumericError("bisection did not reach tolerance", residual=float(model.frequency(mid)) - target)
    return mid


def single_pole_prefilter(samples, alpha: float, axis: int = 0) -> np.ndarray:
    """Inverse of a first-order low-pass y[n] = (1-alpha) x[n] + alpha y[n-1].

    Pre-distorting with this filter makes a line with that step response
    deliver the intended samples.  ``alpha`` in [0, 1); 0 is the identity.
    """
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    x = np.asarray(samples, dtype=float)
    return lfilter([1.0, -alpha], [1.0 - alpha], x, axis=axis)


def single_pole_response(samples, alpha: float, axis: int = 0) -> np.ndarray:
    """The line model the prefilter inverts."""
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    return lfilter([1.0 - alpha], [1.0, -alpha], np.asarray(samples, dtype=float), axis=axis)
