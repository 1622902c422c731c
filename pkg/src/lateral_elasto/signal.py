"""RF signal helpers: analytic signal, point-spread function, noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .grid import UsFrame

MIN_LENGTH = 16


def analytic_signal(rf_column) -> tuple[np.ndarray, np.ndarray]:
    """Imaginary part and envelope of the analytic signal of a real vector.

    Uses the FFT construction (negative frequencies zeroed, positive ones
    doubled, DC and Nyquist kept), so ``env**2 == rf**2 + imag**2``.
    """
    x = np.asarray(rf_column, dtype=np.float64)
    if x.ndim != 1 or x.size < MIN_LENGTH:
        raise ValueError(f"too-short input: need a vector of length >= {MIN_LENGTH}")
    imag, env = analytic_signal_2d(x[:, None])
    return imag[:, 0], env[:, 0]


def analytic_signal_2d(rf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise (axial) analytic signal of an ``(H, W)`` RF image."""
    rf = np.asarray(rf, dtype=np.float64)
    if rf.shape[0] < MIN_LENGTH:
        raise ValueError(f"too-short input: need >= {MIN_LENGTH} axial samples")
    imag = np.imag(scipy.signal.hilbert(rf, axis=0))
    env = np.sqrt(rf**2 + imag**2)
    return imag, env


@dataclass(frozen=True)
class PsfKernel:
    axial: np.ndarray
    lateral: np.ndarray

    def as_2d(self) -> np.ndarray:
        return np.outer(self.axial, self.lateral)

    @property
    def footprint(self) -> tuple[int, int]:
        """Support size in (axial samples, lateral lines)."""
        return self.axial.size, self.lateral.size


def _gauss(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    half = int(math.ceil(3.0 * sigma))
    n = np.arange(-half, half + 1, dtype=np.float64)
    return n, np.exp(-0.5 * (n / sigma) ** 2)


def psf_kernel(f0_over_fs: float, sigma_ax: float, sigma_lat: float) -> PsfKernel:
    """Separable pulse: Gaussian-windowed cosine axially, Gaussian laterally.

    Both profiles are truncated at +-3 sigma and peak-normalised to 1.
    """
    if not 0.0 < f0_over_fs < 0.5:
        raise ValueError(f"frequency out of range: f0/fs={f0_over_fs} must lie in (0, 0.5)")
    if sigma_ax <= 0 or sigma_lat <= 0:
        raise ValueError("PSF widths must be positive")
    n, g = _gauss(sigma_ax)
    axial = g * np.cos(2 * np.pi * f0_over_fs * n)
    axial /= np.abs(axial).max()
    _, lateral = _gauss(sigma_lat)
    return PsfKernel(axial, lateral / lateral.max())


def add_noise(frame: UsFrame, snr_db: float, rng: np.random.Generator) -> UsFrame:
    """Add white Gaussian noise to the RF channel at the requested SNR.

    ``snr_db = math.inf`` returns the frame untouched. The envelope and
    imaginary channels are recomputed from the noisy RF.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return frame
    sigma = math.sqrt(float(np.var(frame.rf)) / 10.0 ** (snr_db / 10.0))
    noisy = frame.rf + rng.normal(0.0, sigma, size=frame.rf.shape)
    return UsFrame.from_rf(frame.grid, noisy)


def empirical_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    return 10.0 * math.log10(float(np.var(clean)) / float(np.var(noisy - clean)))
