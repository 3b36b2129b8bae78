"""Fringe spectra, dominant-frequency estimation and power-law decay fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class FringeRecord:
    """Ancilla P(|1>) against hold time.

    ``stderr`` is None for exact (infinite-shot) records.
    """

    hold_times: np.ndarray
    p1: np.ndarray
    stderr: np.ndarray | None = None
    out_of_range: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hold_times = np.asarray(self.hold_times, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.hold_times.shape != self.p1.shape:
            raise DomainError("hold_times and p1 differ in length")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)


@dataclass
class FoldedSpectrum:
    """One-sided DFT of a mean-subtracted real series.

    ``amplitudes[k] = (1/n) sum_j (x_j - mean) exp(-2 pi i f_k t_j)`` with
    ``f_k`` in Hz from 0 to the Nyquist frequency.  With ``pad > 1`` the
    series is zero-padded, which interpolates the same spectrum on a finer
    grid without changing its resolution.
    """

    frequencies: np.ndarray
    amplitudes: np.ndarray
    dt: float
    n: int
    pad: int = 1

    @property
    def nyquist(self) -> float:
        return 0.5 / self.dt

    @property
    def resolution(self) -> float:
        return 1.0 / (self.n * self.dt)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitudes)

    def amplitude_at(self, frequency: float) -> complex:
        """Amplitude at the bin nearest the folded image of ``frequency``."""
        k = int(np.argmin(np.abs(self.frequencies - fold_frequency(frequency, self.dt))))
        return complex(self.amplitudes[k])


def fold_frequency(f, dt: float):
    """Alias of ``f`` (Hz) into [0, 1/(2 dt)] for sampling interval ``dt``."""
    fs = 1.0 / dt
    r = np.mod(np.asarray(f, dtype=float), fs)
    out = np.minimum(r, fs - r)
    return float(out) if np.ndim(out) == 0 else out


def _uniform_step(t: np.ndarray) -> float:
    if t.size < 2:
        raise DomainError("need at least two samples")
    d = np.diff(t)
    if np.any(d <= 0) or np.ptp(d) > 1e-6 * abs(d.mean()):
        raise DomainError("hold-time grid is not uniform")
    return float(d.mean())


def spectrum_of(times, values, pad: int = 1) -> FoldedSpectrum:
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.shape != x.shape:
        raise DomainError("times and values differ in length")
    dt = _uniform_step(t)
    if pad < 1:
        raise DomainError("pad must be >= 1")
    n = x.size
    y = x - x.mean()
    # Phase referenced to t[0] = 0 so that records starting later are comparable.
    coeffs = np.fft.rfft(y, n=n * pad) / n
    freqs = np.fft.rfftfreq(n * pad, d=dt)
    if t[0] != 0.0:
        coeffs = coeffs * np.exp(-2j * np.pi * freqs * t[0])
    return FoldedSpectrum(freqs, coeffs, dt, n, pad)


def fringe_spectrum(record: FringeRecord, pad: int = 1) -> FoldedSpectrum:
    return spectrum_of(record.hold_times, record.p1, pad)


@dataclass
class DominantFrequency:
    frequency: float
    amplitude: float
    tie: bool = False
    candidates: tuple[tuple[float, float], ...] = ()


def _parabolic(mag: np.ndarray, k: int) -> tuple[float, float]:
    """Vertex of a parabola through log-magnitudes at k-1, k, k+1 (offset, log peak)."""
    if k == 0 or k == len(mag) - 1:
        return 0.0, float(np.log(mag[k]))
    a, b, c = np.log(np.maximum(mag[k - 1 : k + 2], 1e-300))
    denom = a - 2 * b + c
    if denom >= 0:
        return 0.0, float(b)
    off = 0.5 * (a - c) / denom
    return float(off), float(b - 0.25 * (a - c) * off)


def local_peaks(spectrum: FoldedSpectrum, rel_floor: float = 0.0) -> list[tuple[float, float]]:
    """Local maxima of the magnitude (frequency, magnitude), strongest first.

    On a zero-padded spectrum, maxima closer than one resolution bin are
    merged into the stronger one.
    """
    mag = spectrum.magnitude()
    if mag.size == 0:
        return []
    top = mag.max()
    idx = [
        k
        for k in range(mag.size)
        if (k == 0 or mag[k] >= mag[k - 1])
        and (k == mag.size - 1 or mag[k] > mag[k + 1])
        and mag[k] > 0
        and mag[k] >= rel_floor * top
    ]
    idx.sort(key=lambda k: -mag[k])
    kept: list[int] = []
    for k in idx:
        if all(abs(k - j) >= spectrum.pad for j in kept):
            kept.append(k)
    df = spectrum.frequencies[1] - spectrum.frequencies[0] if mag.size > 1 else 0.0
    out = []
    for k in kept:
        off, logp = _parabolic(mag, k)
        out.append((float(spectrum.frequencies[k] + off * df), float(np.exp(logp))))
    return out


def dominant_frequency(spectrum: FoldedSpectrum, tie_tol: float = 0.01) -> DominantFrequency:
    """Strongest spectral component with parabolic (log-magnitude) refinement.

    When the runner-up peak is within ``tie_tol`` relative amplitude the
    result is flagged as a tie and both are listed in ``candidates``.
    """
    mag = spectrum.magnitude()
    if mag.size == 0:
        raise DomainError("empty spectrum")
    peaks = local_peaks(spectrum)
    if not peaks:
        k = int(np.argmax(mag))
        return DominantFrequency(float(spectrum.frequencies[k]), float(mag[k]))
    f0, a0 = peaks[0]
    tied = [(f, a) for f, a in peaks[1:] if a >= (1 - tie_tol) * a0]
    if tied:
        return DominantFrequency(f0, a0, True, ((f0, a0), *tied))
    return DominantFrequency(f0, a0)


@dataclass
class FitResult:
    """A (1 - eps)^(m N) fit; ``exponent`` is m."""

    amplitude: float
    epsilon: float
    amplitude_stderr: float
    epsilon_stderr: float
    residual_norm: float
    exponent: int
    n_used: int
    dropped: tuple[int, ...] = ()

    def predict(self, N) -> np.ndarray:
        return self.amplitude * (1 - self.epsilon) ** (self.exponent * np.asarray(N, float))


def fit_power_decay(points, exponent_per_N: int, stderr=None, floor_sigmas: float = 3.0) -> FitResult:
    """Least-squares fit of log(value) = log A + m N log(1 - eps).

    ``points`` is a sequence of (N, value).  With ``stderr`` given, points below
    ``floor_sigmas`` times their standard error are dropped before the log
    transform (an amplitude floor); at least three points must remain.
    Standard errors come from the covariance of the linear fit, propagated to
    A and eps.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("points must be a sequence of (N, value) pairs")
    N, y = arr[:, 0], arr[:, 1]
    keep = np.ones(N.size, dtype=bool)
    if stderr is not None:
        se = np.asarray(stderr, dtype=float)
        keep &= y > floor_sigmas * se
    dropped = tuple(int(i) for i in np.flatnonzero(~keep))
    N, y = N[keep], y[keep]
    if N.size < 3:
        raise DomainError(f"need at least 3 usable points, have {N.size}")
    if np.any(y <= 0):
        raise DomainError("values must be positive for a log-space fit; apply an amplitude floor")
    m = int(exponent_per_N)
    if m <= 0:
        raise DomainError("exponent_per_N must be a positive integer")
    X = np.column_stack([np.ones_like(N), m * N])
    ly = np.log(y)
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    dof = N.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    logA, slope = coef
    A = float(np.exp(logA))
    eps = float(1.0 - np.exp(slope))
    A_se = A * float(np.sqrt(cov[0, 0]))
    eps_se = float(np.exp(slope) * np.sqrt(cov[1, 1]))
    eps_clipped = float(np.clip(eps, 0.0, 1.0))
    return FitResult(A, eps_clipped, A_se, eps_se, float(np.linalg.norm(resid)), m, int(N.size), dropped)


@dataclass
class DensityComparison:
    passed: bool
    residuals: np.ndarray
    max_residual: float
    worst_site: int


def compare_density(profile, reference, tolerance) -> DensityComparison:
    p = np.asarray(profile, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape:
        raise DomainError(f"profile length {p.shape} differs from reference {r.shape}")
    tol = np.broadcast_to(np.asarray(tolerance, dtype=float), p.shape)
    res = p - r
    worst = int(np.argmax(np.abs(res) - tol)) if res.size else -1
    return DensityComparison(
        bool(np.all(np.abs(res) <= tol)), res, float(np.max(np.abs(res), initial=0.0)), worst
    )
