"""Unit constants.  Internally time is in seconds and frequency in rad/s."""

import numpy as np

TWO_PI = 2.0 * np.pi
NS = 1e-9
US = 1e-6
MHZ = TWO_PI * 1e6  # rad/s per MHz (cyclic)


def to_mhz(omega):
    """rad/s -> cyclic MHz."""
    return np.asarray(omega) / MHZ if np.ndim(omega) else float(omega) / MHZ
