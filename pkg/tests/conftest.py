"""Shared fixtures: synthetic ECG records and WFDB writers."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from afd_ecg.signal_io import SYMBOL_CODES, encode_212

warnings.filterwarnings("ignore", category=DeprecationWarning, module="matplotlib")

FS = 360


def encode_annotations(anns) -> bytes:
    """MIT annotation bytes for ``(sample, symbol)`` pairs (sorted)."""
    words = []
    t = 0
    for sample, sym in anns:
        diff = sample - t
        if diff > 1023 or diff < 0:
            words.append(59 << 10)
            v = diff & 0xFFFFFFFF
            words += [v >> 16, v & 0xFFFF]
            diff = 0
        words.append((SYMBOL_CODES[sym] << 10) | diff)
        t = sample
    words.append(0)
    return np.asarray(words, dtype="<u2").tobytes()


def write_wfdb(directory, name, signals_mv, anns=None, fs=FS, gain=200.0, baseline=0,
               checksum=True):
    """Write ``name.hea``/``name.dat`` (format 212) and optionally ``name.atr``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    x = np.atleast_2d(np.asarray(signals_mv, dtype=float))
    if x.shape[0] < x.shape[1]:
        x = x.T                      # samples x signals
    adc = np.clip(np.round(x * gain) + baseline, -2048, 2047).astype(np.int64)
    (directory / f"{name}.dat").write_bytes(encode_212(adc.reshape(-1)))
    lines = [f"{name} {adc.shape[1]} {fs:g} {adc.shape[0]}"]
    for k in range(adc.shape[1]):
        s = int(adc[:, k].sum()) & 0xFFFF
        s = s - 0x10000 if s >= 0x8000 else s
        cks = str(s) if checksum else "0"
        lines.append(f"{name}.dat 212 {gain:g}({baseline}) 11 0 {adc[0, k]} {cks} 0 "
                     f"{'MLII' if k == 0 else 'V1'}")
    (directory / f"{name}.hea").write_text("\n".join(lines) + "\n")
    if anns is not None:
        (directory / f"{name}.atr").write_bytes(encode_annotations(anns))
    return directory / f"{name}.hea"


# Gaussian-bump templates (centre s, width s, amplitude mV) relative to R.
_WAVES = {
    "N": [(-0.20, 0.025, 0.15), (-0.03, 0.010, -0.10), (0.0, 0.012, 1.2), (0.03, 0.010, -0.25),
          (0.28, 0.045, 0.30)],
    "S": [(-0.16, 0.020, -0.08), (-0.03, 0.010, -0.10), (0.0, 0.012, 1.1), (0.03, 0.010, -0.25),
          (0.26, 0.045, 0.28)],
    "V": [(0.0, 0.040, -1.6), (0.06, 0.035, 0.9), (0.30, 0.060, -0.45)],
    "F": [(-0.20, 0.025, 0.10), (0.0, 0.025, 1.0), (0.05, 0.025, -0.7), (0.30, 0.050, 0.15)],
}
_SYMBOL = {"N": "N", "S": "A", "V": "V", "F": "F"}


def synthetic_ecg(classes, fs=FS, rr=0.8, seed=0, noise=0.01):
    """A record whose beats follow ``classes`` (AAMI letters).

    S beats come early (RR x 0.65), V beats are followed by a pause.
    Returns ``(samples_mv, [(sample, symbol), ...])``.
    """
    rng = np.random.default_rng(seed)
    times = []
    t = 1.0
    for k, c in enumerate(classes):
        step = rr * (0.65 if c == "S" else 1.0) * (1 + 0.03 * rng.standard_normal())
        if k and classes[k - 1] == "V":
            step *= 1.3
        t += step
        times.append(t)
    n = int((t + 1.2) * fs)
    tt = np.arange(n) / fs
    x = 0.05 * np.sin(2 * np.pi * 0.2 * tt) + noise * rng.standard_normal(n)
    anns = []
    for c, tr in zip(classes, times):
        scale = 1 + 0.05 * rng.standard_normal()
        for mu, sd, amp in _WAVES[c]:
            x += scale * amp * np.exp(-0.5 * ((tt - tr - mu) / sd) ** 2)
        anns.append((int(round(tr * fs)), _SYMBOL[c]))
    return x, anns


def class_pattern(n, seed=0, probs=(0.7, 0.12, 0.12, 0.06)):
    rng = np.random.default_rng(seed)
    return list(rng.choice(list("NSVF"), size=n, p=probs))


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """Six short synthetic records in a ``mitdb`` folder plus a split file."""
    root = tmp_path_factory.mktemp("data")
    ids = ["901", "902", "903", "904", "905", "906"]
    for k, rid in enumerate(ids):
        x, anns = synthetic_ecg(class_pattern(60, seed=k), seed=100 + k)
        write_wfdb(root / "mitdb", rid, x, anns)
    split = {"DS1": ids[:3], "DS2": ids[3:], "drop_first": 10, "drop_last": 1}
    (root / "split.json").write_text(json.dumps(split))
    return root
