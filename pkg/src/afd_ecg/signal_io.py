"""Reading ECG records and beat annotations, and rational-ratio resampling.

Supported inputs:

* WFDB records: ``.hea`` text header, format-212 signal file and the MIT
  binary annotation file (``.atr``).
* Plain delimited text, one sample per row, with a configurable column.

Everything is converted to millivolts as ``float64``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

logger = logging.getLogger(__name__)

REFERENCE_RATE = 360.0

# MIT annotation codes -> display symbols (ecgcodes.h).
ANNOTATION_SYMBOLS = {
    1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T",
    20: "*", 21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t",
    28: "+", 29: "u", 30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n",
    36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {sym: code for code, sym in ANNOTATION_SYMBOLS.items()}

# Annotation codes that mark a QRS complex.
BEAT_SYMBOLS = frozenset("NLRaVFJASEj/Qenf")

_SKIP, _NUM, _SUB, _CHN, _AUX = 59, 60, 61, 62, 63


class RecordFormatError(Exception):
    """A record or annotation file could not be decoded."""


@dataclass
class RawRecord:
    record_id: str
    samples: np.ndarray
    sample_rate: float
    lead_name: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"record {self.record_id!r}: empty record")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"record {self.record_id!r}: non-finite samples")

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class BeatAnnotation:
    sample_index: int
    symbol: str

    @property
    def known(self) -> bool:
        from afd_ecg.features import AAMI_MAP

        return self.symbol in AAMI_MAP


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Layout of a delimited-text record.

    ``column`` is either a zero-based index or a header name (the latter
    requires ``header_rows >= 1``; names are taken from the first row).
    """

    column: int | str = 0
    sample_rate: float = REFERENCE_RATE
    header_rows: int = 0
    delimiter: str = ","
    lead_name: str = "lead0"


def read_csv_record(path: str | os.PathLike, schema: CsvSchema | None = None,
                    record_id: str | None = None) -> RawRecord:
    schema = schema or CsvSchema()
    path = Path(path)
    if schema.sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {schema.sample_rate}")
    if not path.exists():
        raise FileNotFoundError(f"no such record file: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=schema.delimiter))

    col = schema.column
    if isinstance(col, str):
        if schema.header_rows < 1:
            raise ValueError("a named column needs header_rows >= 1")
        names = [c.strip() for c in rows[0]] if rows else []
        if col not in names:
            raise ValueError(f"{path}: column {col!r} not in header {names}")
        col = names.index(col)

    values = []
    for lineno, row in enumerate(rows[schema.header_rows:], start=schema.header_rows + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if col >= len(row):
            raise RecordFormatError(f"{path}: row {lineno} has no column {col}")
        try:
            values.append(float(row[col]))
        except ValueError:
            raise RecordFormatError(
                f"{path}: malformed numeric cell {row[col]!r} at row {lineno}") from None
    if not values:
        raise RecordFormatError(f"{path}: empty record")
    return RawRecord(record_id or path.stem, np.array(values), float(schema.sample_rate),
                     schema.lead_name)


def read_csv_annotations(path: str | os.PathLike) -> list[BeatAnnotation]:
    """Read ``sample,symbol`` rows (one header row) into beat annotations."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        raw = []
        for lineno, row in enumerate(reader, start=2):
            try:
                raw.append((int(row["sample"]), row["symbol"].strip()))
            except (KeyError, TypeError, ValueError):
                raise RecordFormatError(f"{path}: bad annotation row {lineno}") from None
    return beat_annotations(raw)


# --------------------------------------------------------------------------
# WFDB
# --------------------------------------------------------------------------

@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float
    baseline: int
    adc_resolution: int
    adc_zero: int
    initial_value: int | None
    checksum: int | None
    description: str


@dataclass
class WfdbHeader:
    record_name: str
    n_signals: int
    sample_rate: float
    n_samples: int | None
    signals: list[SignalSpec] = field(default_factory=list)


def _parse_gain(token: str) -> tuple[float, int | None]:
    # "200", "200(0)", "200(-12)/mV", "200/mV"
    token = token.split("/")[0]
    baseline = None
    if "(" in token:
        token, rest = token.split("(", 1)
        baseline = int(rest.rstrip(")"))
    gain = float(token)
    return gain, baseline


def parse_header(text: str) -> WfdbHeader:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise RecordFormatError("empty header")
    rec = lines[0].split()
    if len(rec) < 2:
        raise RecordFormatError(f"bad record line: {lines[0]!r}")
    name = rec[0].split("/")[0]
    nsig = int(rec[1])
    fs = 250.0
    if len(rec) > 2:
        fs = float(rec[2].split("/")[0].split("(")[0])
    nsamp = int(rec[3]) if len(rec) > 3 else None

    signals = []
    for ln in lines[1:1 + nsig]:
        parts = ln.split(None, 8)
        if len(parts) < 2:
            raise RecordFormatError(f"bad signal line: {ln!r}")
        fmt_token = parts[1].split("x")[0].split(":")[0].split("+")[0]
        fmt = int(fmt_token)
        gain, baseline = 200.0, None
        if len(parts) > 2:
            gain, baseline = _parse_gain(parts[2])
            if gain == 0:
                gain = 200.0
        adc_res = int(parts[3]) if len(parts) > 3 else 12
        adc_zero = int(parts[4]) if len(parts) > 4 else 0
        init = int(parts[5]) if len(parts) > 5 else None
        checksum = int(parts[6]) if len(parts) > 6 else None
        desc = parts[8] if len(parts) > 8 else ""
        signals.append(SignalSpec(parts[0], fmt, gain,
                                  adc_zero if baseline is None else baseline,
                                  adc_res, adc_zero, init, checksum, desc))
    if len(signals) != nsig:
        raise RecordFormatError(f"header declares {nsig} signals, found {len(signals)}")
    return WfdbHeader(name, nsig, fs, nsamp, signals)


def decode_212(data: bytes, n_values: int | None = None) -> np.ndarray:
    """Unpack format-212 bytes into signed 12-bit integers.

    Each 3-byte group holds two samples: the first takes byte 0 plus the low
    nibble of byte 1 as its high bits; the second takes byte 2 plus the high
    nibble of byte 1.
    """
    buf = np.frombuffer(data, dtype=np.uint8)
    available = (buf.size // 3) * 2 + (1 if buf.size % 3 == 2 else 0)
    if n_values is None:
        n_values = available
    elif n_values > available:
        needed = math.ceil(n_values * 3 / 2)
        raise RecordFormatError(
            f"truncated format-212 data: need {needed} bytes, file ends at byte offset {buf.size}")
    n_groups = math.ceil(n_values / 2)
    padded = np.zeros(n_groups * 3, dtype=np.int32)
    take = min(buf.size, padded.size)
    padded[:take] = buf[:take]
    g = padded.reshape(-1, 3)
    out = np.empty(n_groups * 2, dtype=np.int32)
    out[0::2] = g[:, 0] | ((g[:, 1] & 0x0F) << 8)
    out[1::2] = g[:, 2] | ((g[:, 1] & 0xF0) << 4)
    out[out > 2047] -= 4096
    return out[:n_values]


def encode_212(values) -> bytes:
    """Pack signed 12-bit integers into format-212 bytes (inverse of decode_212)."""
    v = np.asarray(values, dtype=np.int64)
    if v.size and (v.min() < -2048 or v.max() > 2047):
        raise ValueError("format 212 holds values in [-2048, 2047]")
    u = (v & 0xFFF).astype(np.int32)
    odd = u.size % 2
    if odd:
        u = np.append(u, 0)
    pairs = u.reshape(-1, 2)
    g = np.empty((pairs.shape[0], 3), dtype=np.uint8)
    g[:, 0] = pairs[:, 0] & 0xFF
    g[:, 1] = ((pairs[:, 0] >> 8) & 0x0F) | (((pairs[:, 1] >> 8) & 0x0F) << 4)
    g[:, 2] = pairs[:, 1] & 0xFF
    out = g.reshape(-1).tobytes()
    return out[:-1] if odd else out


def _checksum(values: np.ndarray) -> int:
    s = int(np.sum(values.astype(np.int64))) & 0xFFFF
    return s - 0x10000 if s >= 0x8000 else s


def decode_annotations(data: bytes) -> list[tuple[int, str]]:
    """Decode an MIT-format annotation stream into ``(sample, symbol)`` pairs.

    All annotation types are returned, including non-beat markers; unknown
    codes come back as ``"?<code>"``.
    """
    if len(data) % 2:
        data = data[:-1]
    words = np.frombuffer(data, dtype="<u2")
    out = []
    t = 0
    i = 0
    n = words.size
    while i < n:
        w = int(words[i])
        code, interval = w >> 10, w & 0x3FF
        if code == 0 and interval == 0:
            break
        if code == _SKIP:
            if i + 2 >= n:
                raise RecordFormatError(f"truncated SKIP at byte offset {2 * i}")
            hi, lo = int(words[i + 1]), int(words[i + 2])
            skip = (hi << 16) | lo
            if skip >= 1 << 31:
                skip -= 1 << 32
            t += skip
            i += 3
            continue
        if code == _AUX:
            i += 1 + (interval + 1) // 2
            continue
        if code in (_NUM, _SUB, _CHN):
            i += 1
            continue
        t += interval
        out.append((t, ANNOTATION_SYMBOLS.get(code, f"?{code}")))
        i += 1
    return out


def beat_annotations(raw: list[tuple[int, str]], n_samples: int | None = None) -> list[BeatAnnotation]:
    """Keep beat annotations only, sorted, with strictly increasing indices.

    Non-beat markers are excluded. Beat symbols outside the AAMI table are
    kept (they map to class Q downstream) and logged.
    """
    beats = sorted((int(s), sym) for s, sym in raw if sym in BEAT_SYMBOLS)
    if raw and not beats:
        logger.warning("annotation stream contains no beat annotations (%d markers)", len(raw))
    out: list[BeatAnnotation] = []
    unknown = 0
    for s, sym in beats:
        if s < 0 or (n_samples is not None and s >= n_samples):
            logger.warning("beat annotation at sample %d outside record; skipped", s)
            continue
        if out and s <= out[-1].sample_index:
            logger.warning("duplicate beat annotation at sample %d; keeping the first", s)
            continue
        a = BeatAnnotation(s, sym)
        if not a.known:
            unknown += 1
        out.append(a)
    if unknown:
        logger.info("%d beats carry symbols outside the AAMI table (class Q)", unknown)
    return out


def read_wfdb_record(header_path: str | os.PathLike, signal_path: str | os.PathLike | None = None,
                     annotation_path: str | os.PathLike | None = None,
                     strict_checksum: bool = False) -> tuple[list[RawRecord], list[BeatAnnotation]]:
    """Read a format-212 WFDB record and (optionally) its beat annotations.

    ``signal_path`` defaults to the file named in the header, next to it.
    ``annotation_path`` defaults to ``<record>.atr`` if that file exists.
    """
    header_path = Path(header_path)
    header = parse_header(header_path.read_text(encoding="latin-1"))
    for spec in header.signals:
        if spec.fmt != 212:
            raise RecordFormatError(f"{header_path}: unsupported signal format {spec.fmt}")
    files = {spec.file_name for spec in header.signals}
    if len(files) != 1:
        raise RecordFormatError(f"{header_path}: signals split across files {sorted(files)}")
    if signal_path is None:
        signal_path = header_path.parent / header.signals[0].file_name
    data = Path(signal_path).read_bytes()

    nsig = header.n_signals
    n_values = header.n_samples * nsig if header.n_samples else None
    try:
        raw = decode_212(data, n_values)
    except RecordFormatError as exc:
        raise RecordFormatError(f"{signal_path}: {exc}") from None
    if n_values is None:
        raw = raw[: (raw.size // nsig) * nsig]
    frames = raw.reshape(-1, nsig)

    records = []
    for k, spec in enumerate(header.signals):
        adc = frames[:, k]
        if spec.checksum is not None and _checksum(adc) != spec.checksum:
            msg = (f"{signal_path}: checksum mismatch on signal {k} "
                   f"(header {spec.checksum}, data {_checksum(adc)})")
            if strict_checksum:
                raise RecordFormatError(msg)
            logger.warning(msg)
        mv = (adc.astype(float) - spec.baseline) / spec.gain
        records.append(RawRecord(header.record_name, mv, header.sample_rate,
                                 spec.description or f"sig{k}"))

    if annotation_path is None:
        default = header_path.with_suffix(".atr")
        annotation_path = default if default.exists() else None
    beats: list[BeatAnnotation] = []
    if annotation_path is not None:
        beats = beat_annotations(decode_annotations(Path(annotation_path).read_bytes()),
                                 n_samples=frames.shape[0])
    return records, beats


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def _rate_ratio(source: float, target: float) -> tuple[int, int]:
    ratio = Fraction(str(target)) / Fraction(str(source))
    ratio = ratio.limit_denominator(10_000)
    return ratio.numerator, ratio.denominator


def design_resampling_filter(up: int, down: int, attenuation_db: float = 80.0,
                             taps_per_phase: int = 80) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for an ``up/down`` polyphase resampler.

    Every polyphase branch is scaled to unit DC gain so constants pass
    through exactly.
    """
    max_rate = max(up, down)
    half_len = taps_per_phase * max_rate // 2
    beta = sps.kaiser_beta(attenuation_db)
    h = sps.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", beta))
    for p in range(up):
        h[p::up] /= h[p::up].sum()
    # resample_poly multiplies a user filter by ``up``
    return h / up


def resample(record: RawRecord, target_rate: float = REFERENCE_RATE) -> RawRecord:
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if len(record) == 0:
        raise ValueError("cannot resample an empty record")
    up, down = _rate_ratio(record.sample_rate, target_rate)
    if up == down:
        return replace(record, sample_rate=float(target_rate))
    h = design_resampling_filter(up, down)
    y = sps.resample_poly(record.samples, up, down, window=h, padtype="edge")
    return RawRecord(record.record_id, y, float(target_rate), record.lead_name)


def rescale_annotations(annotations: list[BeatAnnotation], source_rate: float,
                        target_rate: float, n_samples: int | None = None) -> list[BeatAnnotation]:
    up, down = _rate_ratio(source_rate, target_rate)
    out = []
    for a in annotations:
        idx = (2 * a.sample_index * up + down) // (2 * down)  # round half up
        if n_samples is not None:
            idx = min(idx, n_samples - 1)
        if out and idx <= out[-1].sample_index:
            continue
        out.append(BeatAnnotation(idx, a.symbol))
    return out
