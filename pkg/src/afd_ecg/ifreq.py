"""Instantaneous frequency of AFD components and the transient TFR.

Frequencies are phase derivatives with respect to ``t`` in ``[0, 2*pi)``,
i.e. cycles per segment period. Multiply by ``sample_rate / M`` for Hz.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from afd_ecg.afd import AFDDecomposition
from afd_ecg.analytic import circle_grid

logger = logging.getLogger(__name__)


def evaluator_phase_term(a: complex, t) -> np.ndarray:
    """Phase derivative of ``1 / (1 - conj(a) e^{it})``."""
    r, th = abs(a), np.angle(a)
    c = np.cos(np.asarray(t, dtype=float) - th)
    return (r * c - r * r) / (1.0 - 2.0 * r * c + r * r)


def poisson_term(a: complex, t) -> np.ndarray:
    """Phase derivative of the Blaschke factor ``(z - a)/(1 - conj(a) z)``.

    Equals the Poisson kernel, strictly positive for ``|a| < 1``.
    """
    r, th = abs(a), np.angle(a)
    c = np.cos(np.asarray(t, dtype=float) - th)
    return (1.0 - r * r) / (1.0 - 2.0 * r * c + r * r)


def phase_derivative(poles, n: int, t) -> np.ndarray:
    """Closed-form IF of the n-th (1-based) TM component at times ``t``."""
    poles = np.asarray(poles, dtype=complex)
    if not 1 <= n <= poles.size:
        raise IndexError(f"component {n} outside 1..{poles.size}")
    out = evaluator_phase_term(poles[n - 1], t)
    for a in poles[: n - 1]:
        out = out + poisson_term(a, t)
    return out


def instantaneous_frequency(d: AFDDecomposition, n: int) -> np.ndarray:
    """IF of ``c_n B_n`` over the decomposition's grid.

    A constant coefficient (and the unimodular normalization) adds no phase
    derivative, so only the poles matter.
    """
    if not 1 <= n <= d.level:
        raise IndexError(f"component {n} outside 1..{d.level}")
    return phase_derivative(d.poles, n, circle_grid(d.grid_len))


def numeric_phase_derivative(mono) -> np.ndarray:
    """Unwrapped phase differentiated by central differences (step 2*pi/M).

    End points use one-sided differences; compare on interior points.
    """
    mono = np.asarray(mono, dtype=complex)
    if np.any(np.abs(mono) <= 1e-12):
        raise ValueError("phase undefined: signal has (near-)zero samples")
    M = mono.size
    phase = np.unwrap(np.angle(mono))
    return np.gradient(phase, 2.0 * np.pi / M)


@dataclass
class TFRGrid:
    times: np.ndarray       # rad, length M
    edges: np.ndarray       # F + 1 bin edges, cycles per period
    energy: np.ndarray      # M x F
    clamped: int = 0        # deposits that fell outside the edges

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def marginal(self) -> np.ndarray:
        return self.energy.sum(axis=1)


def tfr(d: AFDDecomposition, freq_bins=128, f_max: float | None = None) -> TFRGrid:
    """Transient time-frequency representation of a decomposition.

    For every component ``n`` and time ``t_j`` the instantaneous energy
    ``|c_n B_n(t_j)|^2`` is deposited in the frequency bin containing
    ``theta_n'(t_j)``. ``freq_bins`` is either a bin count over
    ``[0, f_max]`` (default ``f_max`` = level) or an array of edges.
    Values beyond the edges go to the first/last bin and are counted.
    """
    if np.ndim(freq_bins) == 0:
        count = int(freq_bins)
        if count < 1:
            raise ValueError("need at least one frequency bin")
        edges = np.linspace(0.0, float(d.level if f_max is None else f_max), count + 1)
    else:
        edges = np.asarray(freq_bins, dtype=float)
        if edges.size < 2:
            raise ValueError("empty bin specification")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must increase")
    F = edges.size - 1
    M = d.grid_len
    out = np.zeros((M, F))
    rows = np.arange(M)
    clamped = 0
    for n in range(1, d.level + 1):
        rho2 = np.abs(d.component(n)) ** 2
        f = instantaneous_frequency(d, n)
        idx = np.searchsorted(edges, f, side="right") - 1
        idx[f == edges[-1]] = F - 1
        outside = (idx < 0) | (idx >= F)
        clamped += int(np.count_nonzero(outside))
        np.add.at(out, (rows, np.clip(idx, 0, F - 1)), rho2)
    if clamped:
        logger.warning("%d TFR deposits fell outside [%g, %g] and were clamped",
                       clamped, edges[0], edges[-1])
    return TFRGrid(circle_grid(M), edges, out, clamped)


def write_tfr_csv(grid: TFRGrid, path, sample_rate: float | None = None) -> None:
    """Matrix layout: one row per time sample, one column per bin center.

    The first comment line carries the Hz conversion when the sample rate
    is known.
    """
    from afd_ecg.io_utils import atomic_write_text

    M = grid.times.size
    lines = []
    if sample_rate:
        lines.append(f"# freq_unit=cycles_per_segment hz_per_unit={sample_rate / M:.10g} "
                     f"sample_rate={sample_rate:g}")
    head = ["t_rad"] + (["t_s"] if sample_rate else []) + [f"{c:.6g}" for c in grid.centers]
    lines.append(",".join(head))
    for j in range(M):
        cells = [f"{grid.times[j]:.10g}"]
        if sample_rate:
            cells.append(f"{j / sample_rate:.10g}")
        cells += [f"{v:.10g}" for v in grid.energy[j]]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")
