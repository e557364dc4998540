"""Inter-patient splits, confusion matrices and Se / +P / Acc."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from afd_ecg.features import CLASSES

# Per-symbol beat counts of the arrhythmia database (no drop rule applied).
BEAT_COUNTS = {
    "all": {"N": 74173, "L": 8038, "R": 7233, "A": 2535, "a": 149, "J": 84, "S": 2,
            "V": 6730, "F": 801, "e": 14, "j": 223, "E": 106, "Q": 15},
    "DS1": {"N": 37917, "L": 3933, "R": 3764, "A": 807, "a": 99, "J": 33, "S": 2,
            "V": 3648, "F": 423, "e": 14, "j": 12, "E": 105, "Q": 8},
    "DS2": {"N": 36256, "L": 4105, "R": 3469, "A": 1728, "a": 50, "J": 51, "S": 0,
            "V": 3082, "F": 378, "e": 0, "j": 211, "E": 1, "Q": 7},
}
BEAT_COUNT_TOTALS = {"all": 100103, "DS1": 50765, "DS2": 49338}

# Reported confusion matrices on DS2 (rows reference, columns predicted; N, S, V, F).
CONFUSION_MODEL1 = np.array([[37647, 3625, 260, 2509],
                             [339, 1428, 61, 1],
                             [61, 415, 2503, 104],
                             [36, 5, 22, 315]])
CONFUSION_MODEL2 = np.array([[37681, 3555, 231, 2574],
                             [299, 1470, 58, 2],
                             [67, 433, 2477, 106],
                             [38, 7, 20, 313]])
# Single-lead row of the comparison table, in percent.
REPORTED_MODEL2 = {
    "Se": {"N": 85.56, "S": 80.37, "V": 80.34, "F": 82.80},
    "+P": {"N": 98.94, "S": 26.9, "V": 88.91, "F": 10.45},
    "Acc": 85.02,
}


@dataclass
class SplitSpec:
    ds1_records: list
    ds2_records: list
    drop_first: int = 10
    drop_last: int = 1
    digest: str = ""

    def __post_init__(self):
        self.ds1_records = [str(r) for r in self.ds1_records]
        self.ds2_records = [str(r) for r in self.ds2_records]
        both = set(self.ds1_records) & set(self.ds2_records)
        if both:
            raise ValueError(f"records in both DS1 and DS2: {sorted(both)}")
        if self.drop_first < 0 or self.drop_last < 0:
            raise ValueError("drop counts must be non-negative")

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "SplitSpec":
        """Read a split file (JSON); ``None`` loads the bundled default."""
        if path is None:
            raw = resources.files("afd_ecg").joinpath("data/split_default.json").read_bytes()
        else:
            raw = Path(path).read_bytes()
        d = json.loads(raw)
        return cls(d["DS1"], d["DS2"], int(d.get("drop_first", 10)), int(d.get("drop_last", 1)),
                   hashlib.sha256(raw).hexdigest())


@dataclass
class BeatRecord:
    """Per-beat row in a dataset table (features plus provenance)."""

    record_id: str
    beat_index: int
    n_beats: int          # beats annotated in the record
    ref_class: str
    features: np.ndarray | None = None
    source: str = ""
    residual: float = float("nan")   # final relative AFD residual energy


def keep_beat(b: BeatRecord, spec: SplitSpec) -> bool:
    return spec.drop_first <= b.beat_index < b.n_beats - spec.drop_last and b.ref_class != "Q"


def split_ds(beats, spec: SplitSpec):
    """Assign beats to DS1/DS2 by record, dropping edge beats and class Q."""
    present = {b.record_id for b in beats}
    missing = (set(spec.ds1_records) | set(spec.ds2_records)) - present
    if missing:
        raise ValueError(f"records missing from dataset: {sorted(missing)}")
    ds1_ids, ds2_ids = set(spec.ds1_records), set(spec.ds2_records)
    ds1 = [b for b in beats if b.record_id in ds1_ids and keep_beat(b, spec)]
    ds2 = [b for b in beats if b.record_id in ds2_ids and keep_beat(b, spec)]
    return ds1, ds2


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: tuple = CLASSES

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError(f"expected a {k}x{k} matrix")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(refs, preds) -> ConfusionMatrix:
    refs, preds = list(refs), list(preds)
    if len(refs) != len(preds):
        raise ValueError(f"length mismatch: {len(refs)} references, {len(preds)} predictions")
    idx = {c: i for i, c in enumerate(CLASSES)}
    cm = np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    for r, p in zip(refs, preds):
        if r not in idx or p not in idx:
            raise ValueError(f"class outside {CLASSES}: {r!r} -> {p!r}")
        cm[idx[r], idx[p]] += 1
    return ConfusionMatrix(cm)


@dataclass
class Metrics:
    se: dict          # class -> fraction, None when the row is empty
    ppv: dict         # class -> fraction, None when the column is empty
    acc: float

    def as_percent(self) -> dict:
        pct = lambda v: None if v is None else 100.0 * v  # noqa: E731
        return {"Se": {c: pct(v) for c, v in self.se.items()},
                "+P": {c: pct(v) for c, v in self.ppv.items()},
                "Acc": 100.0 * self.acc}


def metrics(cm: ConfusionMatrix) -> Metrics:
    n = cm.counts
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(n)
    rows, cols = n.sum(axis=1), n.sum(axis=0)
    se = {c: (float(diag[i] / rows[i]) if rows[i] else None) for i, c in enumerate(cm.classes)}
    ppv = {c: (float(diag[i] / cols[i]) if cols[i] else None) for i, c in enumerate(cm.classes)}
    return Metrics(se, ppv, float(diag.sum() / cm.total))


def report_dict(cm: ConfusionMatrix, m: Metrics, **provenance) -> dict:
    return {
        "classes": list(cm.classes),
        "confusion_matrix": cm.counts.tolist(),
        "n_beats": cm.total,
        "metrics_percent": m.as_percent(),
        **provenance,
    }


def write_report(cm: ConfusionMatrix, m: Metrics, out_dir: str | os.PathLike,
                 figure: bool = True, **provenance) -> dict:
    """Write ``metrics.json``, ``confusion.csv`` and (optionally) ``confusion.png``."""
    from afd_ecg.io_utils import atomic_write_text

    out_dir = Path(out_dir)
    rep = report_dict(cm, m, **provenance)
    atomic_write_text(out_dir / "metrics.json", json.dumps(rep, indent=2))
    lines = ["reference," + ",".join(cm.classes)]
    for c, row in zip(cm.classes, cm.counts):
        lines.append(c + "," + ",".join(str(int(v)) for v in row))
    atomic_write_text(out_dir / "confusion.csv", "\n".join(lines) + "\n")
    if figure:
        from afd_ecg.plotting import plot_confusion

        plot_confusion(cm, m, out_dir / "confusion.png")
    return rep
