"""Heartbeat segmentation, AAMI labels and the 19-dimensional feature vector."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from afd_ecg.afd import AFDDecomposition, SearchGrid, decompose
from afd_ecg.analytic import analytic_signal, mean_coefficient
from afd_ecg.ifreq import phase_derivative
from afd_ecg.analytic import circle_grid

logger = logging.getLogger(__name__)

FS = 360.0
PRE_R = 100
POST_R = 200
SEGMENT_LEN = PRE_R + POST_R + 1
P_WAVE_OFFSET = 50
AFD_LEVEL = 10
RR_HISTORY = 10

# QRS-duration estimator constants.
QRS_THRESHOLD = 0.05
QRS_MAX_HALF_WIDTH = 60
QRS_SMOOTH = 15
QRS_MIN_S = 2 / FS
QRS_MAX_S = 120 / FS

AAMI_MAP = {
    "N": "N", "L": "N", "R": "N", "e": "N", "j": "N",
    "A": "S", "a": "S", "J": "S", "S": "S",
    "V": "V", "E": "V",
    "F": "F",
    "Q": "Q",
}
CLASSES = ("N", "S", "V", "F")

FEATURE_VERSION = "afd-ecg-features/1"
FEATURE_NAMES = (
    [f"rpeak_if_{n}" for n in range(2, 11)]
    + [f"pwave_if_{n}" for n in range(2, 7)]
    + ["qrs_duration", "r_amplitude", "pre_rr", "post_rr", "local_rr"]
)


def map_aami(symbol: str) -> str:
    try:
        return AAMI_MAP[symbol]
    except KeyError:
        raise ValueError(f"unknown beat symbol {symbol!r}") from None


def aami_class(symbol: str) -> str:
    """Like :func:`map_aami` but beats outside the table become ``"Q"``."""
    return AAMI_MAP.get(symbol, "Q")


@dataclass
class HeartbeatSegment:
    samples: np.ndarray
    record_id: str
    beat_index: int
    ref_class: str
    r_sample_global: int
    r_index_in_segment: int = PRE_R


def segment(record, annotations) -> tuple[list[HeartbeatSegment], int]:
    """Cut a 301-sample window (100 before R, R, 200 after) around every beat.

    ``beat_index`` is the position in ``annotations``. Windows that would
    cross the record boundary are dropped; their number is returned.
    """
    x = record.samples
    out = []
    dropped = 0
    for i, ann in enumerate(annotations):
        r = ann.sample_index
        lo, hi = r - PRE_R, r + POST_R + 1
        if lo < 0 or hi > x.size:
            dropped += 1
            continue
        out.append(HeartbeatSegment(x[lo:hi].copy(), record.record_id, i,
                                    aami_class(ann.symbol), r))
    return out, dropped


def rr_features(r_samples, i: int, fs: float = FS) -> tuple[float, float, float]:
    """Pre-, post- and local (mean of previous 10) RR intervals in seconds."""
    r = np.asarray(r_samples, dtype=np.int64)
    if i < RR_HISTORY or i >= r.size - 1:
        raise IndexError(f"beat {i} needs {RR_HISTORY} previous beats and a next beat")
    pre = (r[i] - r[i - 1]) / fs
    post = (r[i + 1] - r[i]) / fs
    local = (r[i] - r[i - RR_HISTORY]) / RR_HISTORY / fs
    return float(pre), float(post), float(local)


def _slope_envelope(x: np.ndarray) -> np.ndarray:
    d = np.zeros_like(x)
    d[2:-2] = (x[:-4] - 8 * x[1:-3] + 8 * x[3:-1] - x[4:]) / 12.0
    return np.convolve(d * d, np.ones(QRS_SMOOTH) / QRS_SMOOTH, mode="same")


def qrs_duration(seg: HeartbeatSegment, fs: float = FS) -> float:
    """QRS width from a smoothed slope-energy envelope, in seconds.

    Scanning out from R, onset and offset are the last samples whose
    envelope is still >= 5% of its peak (within +-60 samples). The moving
    average widens the envelope by its half-length on each side, which is
    taken back off before measuring.
    """
    x = np.asarray(seg.samples, dtype=float)
    if np.ptp(x) == 0.0:
        raise ValueError("flat segment: QRS duration undefined")
    r = seg.r_index_in_segment
    env = _slope_envelope(x)
    lo_cap = max(r - QRS_MAX_HALF_WIDTH, 0)
    hi_cap = min(r + QRS_MAX_HALF_WIDTH, x.size - 1)
    thr = QRS_THRESHOLD * env[lo_cap:hi_cap + 1].max()

    onset = r
    while onset > lo_cap and env[onset - 1] >= thr:
        onset -= 1
    offset = r
    while offset < hi_cap and env[offset + 1] >= thr:
        offset += 1
    shrink = QRS_SMOOTH // 2
    onset = min(onset + shrink, r)
    offset = max(offset - shrink, r)
    return float(np.clip((offset - onset) / fs, QRS_MIN_S, QRS_MAX_S))


def r_amplitude(seg: HeartbeatSegment) -> float:
    return float(seg.samples[seg.r_index_in_segment])


def decompose_segment(seg_samples, level: int = AFD_LEVEL, grid: SearchGrid | None = None) -> AFDDecomposition:
    s = np.asarray(seg_samples, dtype=float)
    return decompose(analytic_signal(s), level, grid, force_first_pole_zero=True,
                     c0=mean_coefficient(s))


def if_features(d: AFDDecomposition, r_index: int = PRE_R) -> tuple[np.ndarray, np.ndarray]:
    """IFs of components 2..10 at the R sample and of 2..6 fifty samples earlier."""
    if d.level != AFD_LEVEL or d.grid_len != SEGMENT_LEN:
        raise ValueError(f"expected level {AFD_LEVEL} on {SEGMENT_LEN} samples, "
                         f"got level {d.level} on {d.grid_len}")
    t = circle_grid(d.grid_len)
    t_r, t_p = t[r_index], t[r_index - P_WAVE_OFFSET]
    rpeak = np.array([phase_derivative(d.poles, n, t_r) for n in range(2, 11)], dtype=float)
    pwave = np.array([phase_derivative(d.poles, n, t_p) for n in range(2, 7)], dtype=float)
    return rpeak, pwave


def build_feature_vector(seg: HeartbeatSegment, d: AFDDecomposition, r_samples,
                         i: int | None = None, fs: float = FS) -> np.ndarray:
    """Concatenate R-peak IFs, P-wave IFs, QRS duration, R amplitude and RR features."""
    i = seg.beat_index if i is None else i
    rpeak, pwave = if_features(d, seg.r_index_in_segment)
    pre, post, local = rr_features(r_samples, i, fs)
    fv = np.concatenate([rpeak, pwave,
                         [qrs_duration(seg, fs), r_amplitude(seg), pre, post, local]])
    if not np.all(np.isfinite(fv)):
        raise ValueError(f"non-finite feature for beat {i} of {seg.record_id}")
    return fv


def lead_feature_names(n_leads: int) -> list[str]:
    if n_leads == 1:
        return list(FEATURE_NAMES)
    return [f"{name}@lead{k}" for k in range(n_leads) for name in FEATURE_NAMES]


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "NormalizationStats":
        X = np.asarray(X, dtype=float)
        return cls(X.mean(axis=0), X.std(axis=0))

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.std > 0)


def normalize(stats: NormalizationStats, fv) -> np.ndarray:
    """Z-score per feature; zero-variance features pass through unchanged."""
    fv = np.asarray(fv, dtype=float)
    bad = stats.degenerate
    if np.any(bad):
        logger.warning("%d constant feature(s) left unscaled", int(bad.sum()))
    safe_std = np.where(bad, 1.0, stats.std)
    safe_mean = np.where(bad, 0.0, stats.mean)
    return (fv - safe_mean) / safe_std
