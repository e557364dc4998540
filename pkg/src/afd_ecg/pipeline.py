"""Record loading and per-beat feature extraction for whole datasets."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from afd_ecg.afd import SearchGrid
from afd_ecg.evaluation import BeatRecord, SplitSpec
from afd_ecg.features import (FS, RR_HISTORY, SEGMENT_LEN, build_feature_vector, decompose_segment,
                              lead_feature_names, segment, aami_class)
from afd_ecg.signal_io import (CsvSchema, RawRecord, read_csv_annotations, read_csv_record,
                               read_wfdb_record, rescale_annotations, resample)
from afd_ecg.io_utils import atomic_write_text

logger = logging.getLogger(__name__)


def load_record(path: str | os.PathLike, annotations: str | os.PathLike | None = None,
                leads=(0,), csv_rate: float = FS):
    """Load leads and beat annotations, resampled to 360 Hz.

    ``path`` is either a ``.csv`` file (then ``annotations`` is a
    ``sample,symbol`` CSV) or a WFDB record (``.hea`` path or the same
    path without extension).
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rec = read_csv_record(path, CsvSchema(sample_rate=csv_rate))
        leads_out = [rec]
        anns = read_csv_annotations(annotations) if annotations else []
        if any(k != 0 for k in leads):
            raise ValueError("CSV records hold a single lead")
    else:
        hea = path if path.suffix == ".hea" else path.with_name(path.name + ".hea")
        if not hea.exists():
            raise FileNotFoundError(f"no such record header: {hea}")
        recs, anns = read_wfdb_record(hea, annotation_path=annotations)
        for k in leads:
            if k >= len(recs):
                raise ValueError(f"{hea}: lead {k} not present ({len(recs)} leads)")
        leads_out = [recs[k] for k in leads]
    src_rate = leads_out[0].sample_rate
    if src_rate != FS:
        leads_out = [resample(r, FS) for r in leads_out]
        anns = rescale_annotations(anns, src_rate, FS, n_samples=len(leads_out[0]))
    return leads_out, anns


@dataclass
class ExtractionStats:
    n_annotations: int = 0
    kept: int = 0
    dropped_first: int = 0
    dropped_last: int = 0
    dropped_edge: int = 0


def extract_record(leads: list[RawRecord], annotations, level: int = 10, rings: int = 64,
                   r_max: float = 0.98, drop_first: int = RR_HISTORY, drop_last: int = 1,
                   source: str = ""):
    """Feature rows for every usable beat of one record.

    Beats ``drop_first .. n - drop_last - 1`` are kept (at least the first
    10 and the last are always dropped, because the RR features need
    them); beats whose 301-sample window leaves the record are dropped
    next. Returns ``(rows, stats)`` with one :class:`BeatRecord` per kept
    beat and the final relative AFD residual per lead in ``rows[i].residual``.
    """
    drop_first = max(drop_first, RR_HISTORY)
    drop_last = max(drop_last, 1)
    n = len(annotations)
    stats = ExtractionStats(n_annotations=n)
    r_samples = np.array([a.sample_index for a in annotations], dtype=np.int64)
    lo, hi = drop_first, max(n - drop_last, drop_first)
    stats.dropped_first = min(drop_first, n)
    stats.dropped_last = n - stats.dropped_first - max(hi - lo, 0)
    grid = SearchGrid.for_length(SEGMENT_LEN, rings, r_max)

    per_lead = []
    for rec in leads:
        segs, _ = segment(rec, annotations)
        per_lead.append({s.beat_index: s for s in segs})
    rows = []
    for i in range(lo, hi):
        segs = [m.get(i) for m in per_lead]
        if any(s is None for s in segs):
            stats.dropped_edge += 1
            continue
        vecs, resid = [], []
        for s in segs:
            d = decompose_segment(s.samples, level, grid)
            vecs.append(build_feature_vector(s, d, r_samples, i))
            resid.append(d.residual_energies[-1] / d.source_energy)
        rows.append(BeatRecord(leads[0].record_id, i, n, aami_class(annotations[i].symbol),
                               np.concatenate(vecs), source, float(np.mean(resid))))
    stats.kept = len(rows)
    return rows, stats


def _extract_one(args):
    path, leads, cfg_afd, source, drop_first, drop_last = args
    recs, anns = load_record(path, leads=leads)
    return extract_record(recs, anns, cfg_afd["level"], cfg_afd["rings"], cfg_afd["r_max"],
                          drop_first, drop_last, source)


def extract_many(paths, leads=(0,), afd=None, source: str = "", jobs: int = 1,
                 drop_first: int = RR_HISTORY, drop_last: int = 1):
    afd = afd or {"level": 10, "rings": 64, "r_max": 0.98}
    tasks = [(p, tuple(leads), afd, source, drop_first, drop_last) for p in paths]
    rows, all_stats = [], []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_extract_one, tasks))
    else:
        results = [_extract_one(t) for t in tasks]
    for r, s in results:
        rows.extend(r)
        all_stats.append(s)
    return rows, all_stats


def mitdb_paths(cfg, records) -> list[Path]:
    base = cfg.data_path(cfg.mitdb_subdir)
    return [base / f"{r}.hea" for r in records]


def svdb_paths(cfg) -> list[Path]:
    base = cfg.data_path(cfg.svdb_subdir)
    paths = sorted(base.glob("*.hea"))
    if not paths:
        raise FileNotFoundError(f"no supraventricular records under {base}")
    return paths


def leads_for(cfg, svdb: bool = False) -> tuple:
    first = cfg.svdb_lead if svdb else cfg.lead
    return (first, 1 - first) if cfg.two_lead else (first,)


def dataset_features(cfg, split: SplitSpec, which=("DS1", "DS2"), augment: bool = False):
    """Extract features for the requested split parts (+ S beats from the SV database)."""
    afd = {"level": cfg.afd.level, "rings": cfg.afd.rings, "r_max": cfg.afd.r_max}
    records = []
    if "DS1" in which:
        records += split.ds1_records
    if "DS2" in which:
        records += split.ds2_records
    rows, _ = extract_many(mitdb_paths(cfg, records), leads_for(cfg), afd, "mitdb", cfg.jobs,
                           split.drop_first, split.drop_last)
    if augment:
        extra, _ = extract_many(svdb_paths(cfg), leads_for(cfg, svdb=True), afd, "svdb", cfg.jobs,
                                split.drop_first, split.drop_last)
        rows += [r for r in extra if r.ref_class == "S"]
    return rows


# --------------------------------------------------------------------------
# Feature matrix files
# --------------------------------------------------------------------------

META_COLUMNS = ["source", "record_id", "beat_index", "n_beats", "ref_class", "afd_rel_residual"]


def write_features_csv(rows, path, n_leads: int = 1) -> None:
    names = lead_feature_names(n_leads)
    lines = [",".join(META_COLUMNS + names)]
    for r in rows:
        meta = [r.source, r.record_id, str(r.beat_index), str(r.n_beats), r.ref_class,
                f"{r.residual:.6g}"]
        lines.append(",".join(meta + [repr(float(v)) for v in r.features]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_features_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(META_COLUMNS)] != META_COLUMNS:
            raise ValueError(f"{path}: not a feature matrix file")
        names = header[len(META_COLUMNS):]
        for row in reader:
            rows.append(BeatRecord(row[1], int(row[2]), int(row[3]), row[4],
                                   np.array([float(v) for v in row[len(META_COLUMNS):]]),
                                   row[0], float(row[5])))
    return rows, names
