"""Adaptive Fourier decomposition on a uniform circle grid.

The analytic signal is expanded greedily in a Takenaka-Malmquist basis

    B_n(z) = e_{a_n}(z) * prod_{k<n} (z - a_k) / (1 - conj(a_k) z),
    e_a(z) = sqrt(1 - |a|^2) / (1 - conj(a) z),

choosing each pole ``a_n`` to maximize the energy captured from the
current reduced remainder.

Discretization notes
--------------------
Samples of ``e_a`` on an ``M``-point grid alias the tail of its power
series, so their discrete norm is ``sqrt(1 - |a|^(2M)) / |1 - a^M|``, not
exactly 1. The decomposition projects onto the discretely normalized
evaluator instead; with that choice the energy bookkeeping

    ||s_plus||^2 = sum |c_n|^2 + ||R_N||^2

holds to rounding error for every grid length. The continuous formulas
are still what :func:`evaluator` and :func:`tm_basis` return.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from afd_ecg.analytic import circle_grid, energy, inner

R_MAX = 0.98
DEFAULT_RINGS = 64
MAX_LEVEL = 256
# Gains within this relative distance of the maximum count as tied, so
# exact-arithmetic ties are not decided by rounding noise.
TIE_RTOL = 1e-10
FORMAT_NAME = "afd-decomposition"
FORMAT_VERSION = 1


def _check_pole(a: complex) -> complex:
    a = complex(a)
    if not abs(a) < 1.0:
        raise ValueError(f"pole {a} is not inside the unit disk")
    return a


def _unit_circle(M: int) -> np.ndarray:
    return np.exp(1j * circle_grid(M))


def evaluator(a: complex, M: int) -> np.ndarray:
    """Samples of ``sqrt(1-|a|^2) / (1 - conj(a) e^{it})`` on the M-point grid."""
    a = _check_pole(a)
    z = _unit_circle(M)
    return np.sqrt(1.0 - abs(a) ** 2) / (1.0 - np.conj(a) * z)


def unit_evaluator(a: complex, M: int) -> np.ndarray:
    """Evaluator rescaled to unit discrete norm (see module notes)."""
    e = evaluator(a, M)
    return e / np.sqrt(energy(e))


def blaschke_factor(a: complex, M: int) -> np.ndarray:
    z = _unit_circle(M)
    return (z - a) / (1.0 - np.conj(a) * z)


def tm_basis(poles, n: int, M: int, unit_norm: bool = False) -> np.ndarray:
    """Samples of the n-th (1-based) Takenaka-Malmquist function."""
    poles = [complex(p) for p in poles]
    if not 1 <= n <= len(poles):
        raise IndexError(f"basis index {n} outside 1..{len(poles)}")
    ev = unit_evaluator if unit_norm else evaluator
    out = ev(poles[n - 1], M)
    for a in poles[: n - 1]:
        out = out * blaschke_factor(a, M)
    return out


@dataclass
class SearchGrid:
    """Polar candidate set for the pole search.

    ``radii`` must start at 0 and increase strictly; every ring is sampled
    at ``phases_per_ring`` equally spaced angles starting at angle 0.
    """

    radii: np.ndarray
    phases_per_ring: int

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        r = self.radii
        if r.ndim != 1 or r.size == 0 or r[0] != 0.0:
            raise ValueError("radii must be a 1-D sequence starting at 0")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if r[-1] >= 1.0:
            raise ValueError("radii must stay inside the unit disk")
        if self.phases_per_ring < 1:
            raise ValueError("phases_per_ring must be positive")

    @classmethod
    def for_length(cls, M: int, n_rings: int = DEFAULT_RINGS, r_max: float = R_MAX) -> "SearchGrid":
        P = 1 << int(np.ceil(np.log2(2 * M)))
        return cls(np.linspace(0.0, r_max, n_rings), P)

    def point(self, ring: int, phase: int) -> complex:
        return complex(self.radii[ring] * np.exp(2j * np.pi * phase / self.phases_per_ring))

    def points(self) -> np.ndarray:
        """All candidates, ring-major (shape ``n_rings x P``)."""
        phi = 2.0 * np.pi * np.arange(self.phases_per_ring) / self.phases_per_ring
        return self.radii[:, None] * np.exp(1j * phi)[None, :]


def energy_gain_map(remainder: np.ndarray, grid: SearchGrid) -> np.ndarray:
    """Energy captured by projecting ``remainder`` on each candidate pole.

    With ``g_k`` the normalized DFT of the samples, ``G(a) = sum_k g_k a^k``
    and the gain at ``a`` (``|a| = r``) is
    ``(1 - r^2) |G(a)|^2 / (1 - r^(2M))``. Each ring is one length-P
    inverse FFT of ``g_k r^k``.
    """
    M = remainder.size
    P = grid.phases_per_ring
    if P < M:
        raise ValueError(f"phases_per_ring ({P}) must be >= signal length ({M})")
    ghat = np.fft.fft(remainder) / M
    r = grid.radii[:, None]
    k = np.arange(M)[None, :]
    weighted = np.zeros((grid.radii.size, P), dtype=complex)
    with np.errstate(under="ignore"):
        weighted[:, :M] = ghat[None, :] * r ** k
    G = np.fft.ifft(weighted, axis=1) * P
    G[grid.radii == 0.0, :] = ghat[0]
    r2 = grid.radii ** 2
    scale = (1.0 - r2) / (1.0 - r2 ** M)
    return scale[:, None] * np.abs(G) ** 2


def next_pole(remainder, grid: SearchGrid) -> tuple[complex, complex]:
    """Maximal-selection step: the grid pole with the largest energy gain.

    Ties (gains within ``TIE_RTOL`` of the maximum) resolve to the smallest
    ring index, then the smallest phase index.
    Returns the pole and the coefficient ``<remainder, e~_a>``.
    """
    remainder = np.asarray(remainder, dtype=complex)
    if energy(remainder) == 0.0:
        raise ValueError("zero remainder: the decomposition is already exact")
    gains = energy_gain_map(remainder, grid)
    best = int(np.argmax(gains >= gains.max() * (1.0 - TIE_RTOL)))
    ring, phase = np.unravel_index(best, gains.shape)
    a = grid.point(ring, phase)
    coeff = inner(remainder, unit_evaluator(a, remainder.size))
    return a, coeff


def reduce_remainder(remainder: np.ndarray, a: complex, coeff: complex) -> np.ndarray:
    """``(G - c e~_a) (1 - conj(a) z) / (z - a)`` sampled on the grid."""
    M = remainder.size
    z = _unit_circle(M)
    return (remainder - coeff * unit_evaluator(a, M)) * (1.0 - np.conj(a) * z) / (z - a)


@dataclass
class AFDDecomposition:
    poles: np.ndarray
    coeffs: np.ndarray
    grid_len: int
    residual_energies: np.ndarray
    source_energy: float
    c0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=complex)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self.residual_energies = np.asarray(self.residual_energies, dtype=float)
        if self.poles.size != self.coeffs.size:
            raise ValueError("poles and coefficients differ in length")
        if self.residual_energies.size != self.poles.size + 1:
            raise ValueError("residual trace must have level + 1 entries")

    @property
    def level(self) -> int:
        return int(self.poles.size)

    def basis(self, n: int) -> np.ndarray:
        return tm_basis(self.poles, n, self.grid_len, unit_norm=True)

    def component(self, n: int) -> np.ndarray:
        """The n-th mono-component ``c_n B_n`` on the grid."""
        return self.coeffs[n - 1] * self.basis(n)

    def reconstruct(self, upto: int | None = None, c0: float | None = None):
        return reconstruct(self, self.level if upto is None else upto, c0)

    def residual_energy(self, n: int) -> float:
        return residual_energy(self, n)

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "grid_len": self.grid_len,
            "level": self.level,
            "c0": self.c0,
            "poles": [[float(abs(a)), float(np.angle(a))] for a in self.poles],
            "coeffs": [[float(c.real), float(c.imag)] for c in self.coeffs],
            "residual_energies": [float(e) for e in self.residual_energies],
            "source_energy": self.source_energy,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AFDDecomposition":
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"not an {FORMAT_NAME} v{FORMAT_VERSION} document")
        poles = [m * np.exp(1j * th) for m, th in d["poles"]]
        coeffs = [complex(re, im) for re, im in d["coeffs"]]
        if len(poles) != d["level"]:
            raise ValueError("level does not match the number of poles")
        return cls(poles, coeffs, int(d["grid_len"]), d["residual_energies"],
                   float(d["source_energy"]), float(d.get("c0", 0.0)), dict(d.get("meta", {})))

    def save(self, path: str | os.PathLike) -> None:
        from afd_ecg.io_utils import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AFDDecomposition":
        return cls.from_dict(json.loads(Path(path).read_text()))


def decompose(s_plus, level: int = 10, grid: SearchGrid | None = None,
              force_first_pole_zero: bool = True, c0: float | None = None,
              max_level: int = MAX_LEVEL) -> AFDDecomposition:
    """Greedy AFD of an analytic signal up to ``level`` components.

    ``c0`` is only stored (it is needed to map back to the real signal);
    it defaults to ``Re <s_plus, 1>``. Once the remainder is numerically
    zero, the remaining levels are filled with pole 0 and coefficient 0.
    """
    s_plus = np.asarray(s_plus, dtype=complex)
    M = s_plus.size
    if level < 1 or level > max_level:
        raise ValueError(f"level must be in 1..{max_level}, got {level}")
    if grid is None:
        grid = SearchGrid.for_length(M)
    src = energy(s_plus)
    if src == 0.0:
        raise ValueError("zero-energy input")
    if c0 is None:
        c0 = float(np.mean(s_plus).real)

    floor = src * 1e-26
    G = s_plus.copy()
    poles, coeffs, trace = [], [], [src]
    for n in range(level):
        if trace[-1] <= floor:
            poles.append(0j)
            coeffs.append(0j)
            trace.append(trace[-1])
            continue
        if n == 0 and force_first_pole_zero:
            a, c = 0j, complex(np.mean(G))
        else:
            a, c = next_pole(G, grid)
        G = reduce_remainder(G, a, c)
        poles.append(a)
        coeffs.append(c)
        trace.append(min(energy(G), trace[-1]))
    return AFDDecomposition(np.array(poles), np.array(coeffs), M, np.array(trace), src, c0)


def reconstruct(d: AFDDecomposition, upto: int, c0: float | None = None):
    """Partial sum ``sum_{n<=upto} c_n B_n`` and the real approximation
    ``2 Re(.) - c0``."""
    if not 1 <= upto <= d.level:
        raise IndexError(f"level {upto} outside 1..{d.level}")
    c0 = d.c0 if c0 is None else c0
    M = d.grid_len
    z = _unit_circle(M)
    acc = np.zeros(M, dtype=complex)
    prod = np.ones(M, dtype=complex)
    for n in range(upto):
        a = d.poles[n]
        acc += d.coeffs[n] * unit_evaluator(a, M) * prod
        prod = prod * (z - a) / (1.0 - np.conj(a) * z)
    return acc, 2.0 * acc.real - c0


def residual_energy(d: AFDDecomposition, n: int) -> float:
    if not 0 <= n <= d.level:
        raise IndexError(f"level {n} outside 0..{d.level}")
    return float(d.residual_energies[n])
