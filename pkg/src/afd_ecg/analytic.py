"""Analytic signals of real samples taken on the unit circle.

A length-``M`` array is read as samples at ``t_j = 2*pi*j/M``, one full
period of the circle. Inner products are normalized so the constant 1 has
unit norm: ``<f, g> = mean(f * conj(g))``.
"""

from __future__ import annotations

import numpy as np


def circle_grid(M: int) -> np.ndarray:
    """Sample times ``t_j = 2*pi*j/M`` on ``[0, 2*pi)``."""
    return 2.0 * np.pi * np.arange(M) / M


def inner(f: np.ndarray, g: np.ndarray) -> complex:
    return complex(np.mean(f * np.conj(g)))


def energy(f: np.ndarray) -> float:
    return float(np.mean(np.abs(f) ** 2))


def mean_coefficient(s) -> float:
    """Zeroth Fourier coefficient (the sample mean)."""
    s = np.asarray(s, dtype=float)
    return float(np.mean(s))


def analytic_signal(s) -> np.ndarray:
    """Return ``s_plus = (s + i*H s + c0) / 2`` for a real periodic signal.

    In the DFT domain: DC is kept, positive frequencies are kept, negative
    frequencies are removed, and at even length the Nyquist bin is halved.
    Consequently ``Re(2*s_plus - c0) == s``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 1:
        raise ValueError("expected a 1-D signal")
    M = s.size
    if M < 4:
        raise ValueError(f"need at least 4 samples, got {M}")
    spec = np.fft.fft(s)
    mask = np.zeros(M)
    mask[0] = 1.0
    mask[1:(M + 1) // 2] = 1.0
    if M % 2 == 0:
        mask[M // 2] = 0.5
    return np.fft.ifft(spec * mask)


def real_part_reconstruction(s_plus: np.ndarray, c0: float) -> np.ndarray:
    return 2.0 * s_plus.real - c0
