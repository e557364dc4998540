"""``afd-ecg`` command line: decompose, features, train, predict, evaluate, tfr-export.

Exit codes: 0 success, 1 validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from afd_ecg import __version__
from afd_ecg.afd import SearchGrid
from afd_ecg.config import DATA_DIR_ENV, ConfigError, PipelineConfig
from afd_ecg.evaluation import (REPORTED_MODEL2, SplitSpec, confusion, keep_beat, metrics,
                                write_report)
from afd_ecg.features import (CLASSES, FEATURE_NAMES, FS, SEGMENT_LEN, decompose_segment,
                              lead_feature_names, segment)
from afd_ecg.io_utils import atomic_write_text
from afd_ecg.pipeline import (dataset_features, extract_many, leads_for, load_record,
                              read_features_csv, write_features_csv)
from afd_ecg.signal_io import RecordFormatError
from afd_ecg.svm import MODEL_VERSION, TrainedModel, grid_search_cv, train_ovo

logger = logging.getLogger("afd_ecg")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _parse_beats(spec: str | None, n: int) -> range:
    """``"all"``, ``"7"`` or ``"start:stop"`` (stop exclusive) over ``n`` beats."""
    if spec is None or spec == "all":
        return range(n)
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        r = range(int(lo or 0), int(hi) if hi else n)
    else:
        k = int(spec)
        r = range(k, k + 1)
    if r.start < 0 or r.stop > n or r.start >= r.stop:
        raise IndexError(f"beat range {spec!r} outside 0..{n - 1}")
    return r


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "data_dir", None):
        cfg.data_dir = args.data_dir
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "level", None):
        cfg.afd.level = args.level
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "augment", False):
        cfg.augment_svdb = True
    if getattr(args, "two_lead", False):
        cfg.two_lead = True
    return cfg.validate()


def _beats_for_records(args, cfg):
    """Feature rows from explicit record paths (``--records``) or a CSV."""
    if getattr(args, "features", None):
        rows, _ = read_features_csv(args.features)
        return rows
    afd = {"level": cfg.afd.level, "rings": cfg.afd.rings, "r_max": cfg.afd.r_max}
    rows, stats = extract_many(args.records, leads_for(cfg), afd, "cli", cfg.jobs)
    for p, s in zip(args.records, stats):
        logger.info("%s: %d annotated, %d kept, %d dropped at the edges",
                    p, s.n_annotations, s.kept, s.dropped_first + s.dropped_last + s.dropped_edge)
    return rows


def _residual_summary(rows) -> dict:
    res = np.array([r.residual for r in rows], dtype=float)
    res = res[np.isfinite(res)]
    if res.size == 0:
        return {}
    return {"median": float(np.median(res)), "p95": float(np.percentile(res, 95)),
            "max": float(res.max())}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    cfg = _load_config(args)
    leads, anns = load_record(args.record, args.annotations, leads=(args.lead,))
    segs, _ = segment(leads[0], anns)
    by_index = {s.beat_index: s for s in segs}
    wanted = _parse_beats(args.beats, len(anns))
    grid = SearchGrid.for_length(SEGMENT_LEN, cfg.afd.rings, cfg.afd.r_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for i in wanted:
        seg = by_index.get(i)
        if seg is None:
            logger.warning("beat %d: window leaves the record, skipped", i)
            continue
        d = decompose_segment(seg.samples, cfg.afd.level, grid)
        d.meta.update({"record": seg.record_id, "beat_index": i, "ref_class": seg.ref_class,
                       "r_sample": seg.r_sample_global, "sample_rate": FS})
        d.save(out / f"{seg.record_id}_{i:06d}.afd.json")
        written += 1
    logger.info("wrote %d decomposition(s) to %s", written, out)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _load_config(args)
    if args.records:
        rows = _beats_for_records(args, cfg)
    else:
        split = SplitSpec.load(args.split or cfg.split_file)
        which = {"DS1": ("DS1",), "DS2": ("DS2",), "all": ("DS1", "DS2")}[args.subset]
        rows = dataset_features(cfg, split, which, augment=cfg.augment_svdb)
    write_features_csv(rows, args.out, n_leads=len(leads_for(cfg)))
    logger.info("wrote %d feature rows to %s", len(rows), args.out)
    return EXIT_OK


def _training_rows(args, cfg, split):
    if args.features:
        rows, _ = read_features_csv(args.features)
        ds1 = set(split.ds1_records)
        rows = [r for r in rows if (r.record_id in ds1 and keep_beat(r, split))
                or (cfg.augment_svdb and r.source == "svdb" and r.ref_class == "S")]
    else:
        rows = dataset_features(cfg, split, ("DS1",), augment=cfg.augment_svdb)
        rows = [r for r in rows if r.source == "svdb" or keep_beat(r, split)]
    return [r for r in rows if r.ref_class in CLASSES]


def cmd_train(args) -> int:
    cfg = _load_config(args)
    split = SplitSpec.load(args.split or cfg.split_file)
    rows = _training_rows(args, cfg, split)
    if not rows:
        raise ValueError("no training beats")
    X = np.vstack([r.features for r in rows])
    y = np.array([r.ref_class for r in rows])
    counts = {c: int(np.sum(y == c)) for c in CLASSES}
    logger.info("training beats per class: %s", counts)
    logger.info("AFD relative residual energy: %s", _residual_summary(rows))
    params = cfg.svm.params()
    search = None
    if args.grid_search:
        groups = np.array([f"{r.source}:{r.record_id}" for r in rows])
        params, scores = grid_search_cv(
            X, y, groups, {"C": cfg.grid_search.C, "sigma": cfg.grid_search.sigma,
                           "class_weights": [cfg.svm.class_weights]},
            folds=cfg.grid_search.folds, seed=cfg.seed, tol=cfg.svm.tol,
            cache_mb=cfg.svm.cache_mb)
        search = [{"C": p.C, "sigma": p.sigma, "macro_se": s} for p, s in scores]
        logger.info("grid search picked C=%g sigma=%g", params.C, params.sigma)
    names = lead_feature_names(X.shape[1] // len(FEATURE_NAMES))
    model = train_ovo(X, y, params, feature_names=names, tol=cfg.svm.tol,
                      cache_mb=cfg.svm.cache_mb)
    model.meta.update({"split_sha256": split.digest, "seed": cfg.seed,
                       "augment_svdb": cfg.augment_svdb, "residual": _residual_summary(rows),
                       "degenerate_pairs": [list(p) for p in model.degenerate_pairs]})
    if search is not None:
        model.meta["grid_search"] = search
    model.save(args.out or cfg.model_file)
    logger.info("model written to %s", args.out or cfg.model_file)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    model = TrainedModel.load(args.model or cfg.model_file)
    rows = _beats_for_records(args, cfg)
    if not rows:
        raise ValueError("no beats to classify")
    preds = model.predict_batch(np.vstack([r.features for r in rows]))
    lines = ["record_id,beat_index,ref_class,predicted"]
    lines += [f"{r.record_id},{r.beat_index},{r.ref_class},{p}" for r, p in zip(rows, preds)]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    logger.info("wrote %d predictions to %s", len(rows), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    split = SplitSpec.load(args.split or cfg.split_file)
    model = TrainedModel.load(args.model or cfg.model_file)
    if args.features:
        rows, _ = read_features_csv(args.features)
    else:
        rows = dataset_features(cfg, split, ("DS2",))
    ds2 = set(split.ds2_records)
    rows = [r for r in rows if r.record_id in ds2 and r.source != "svdb" and keep_beat(r, split)]
    if not rows:
        raise ValueError("no DS2 beats to evaluate")
    preds = model.predict_batch(np.vstack([r.features for r in rows]))
    cm = confusion([r.ref_class for r in rows], preds)
    m = metrics(cm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = write_report(cm, m, out, figure=not args.no_figures,
                       split_sha256=split.digest, model_version=MODEL_VERSION,
                       feature_version=model.feature_version, seed=cfg.seed,
                       model_meta={k: v for k, v in model.meta.items() if k != "grid_search"},
                       reference_acc=REPORTED_MODEL2["Acc"],
                       acc_delta_pp=100.0 * m.acc - REPORTED_MODEL2["Acc"])
    lines = ["record_id,beat_index,ref_class,predicted"]
    lines += [f"{r.record_id},{r.beat_index},{r.ref_class},{p}" for r, p in zip(rows, preds)]
    atomic_write_text(out / "predictions.csv", "\n".join(lines) + "\n")
    logger.info("Acc %.2f%% (reference %.2f%%, delta %+.2f pp), split %s",
                100 * m.acc, REPORTED_MODEL2["Acc"], rep["acc_delta_pp"], split.digest[:12])
    return EXIT_OK


def cmd_tfr_export(args) -> int:
    from afd_ecg.ifreq import instantaneous_frequency, tfr, write_tfr_csv
    from afd_ecg.plotting import plot_reconstruction, plot_tfr

    cfg = _load_config(args)
    leads, anns = load_record(args.record, args.annotations, leads=(args.lead,))
    segs, _ = segment(leads[0], anns)
    by_index = {s.beat_index: s for s in segs}
    grid = SearchGrid.for_length(SEGMENT_LEN, cfg.afd.rings, cfg.afd.r_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in args.beat:
        if not 0 <= i < len(anns):
            raise IndexError(f"beat {i} outside 0..{len(anns) - 1}")
        seg = by_index.get(i)
        if seg is None:
            raise IndexError(f"beat {i}: window leaves the record")
        d = decompose_segment(seg.samples, cfg.afd.level, grid)
        f_max = args.f_max
        if f_max is None:
            # cover the observed IF range, never less than the library default [0, N]
            peak = max(float(instantaneous_frequency(d, n).max()) for n in range(1, d.level + 1))
            f_max = max(float(d.level), float(np.ceil(peak)))
        g = tfr(d, args.bins, f_max)
        stem = out / f"{seg.record_id}_{i:06d}_{seg.ref_class}"
        write_tfr_csv(g, stem.with_suffix(".tfr.csv"), sample_rate=FS)
        if not args.no_figures:
            title = f"{seg.record_id} beat {i} ({seg.ref_class})"
            plot_tfr(g, stem.with_suffix(".tfr.png"), FS, title)
            plot_reconstruction(seg.samples, d.reconstruct()[1], stem.with_suffix(".recon.png"),
                                FS, title)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--data-dir", help=f"database root (overrides ${DATA_DIR_ENV})")
    common.add_argument("--jobs", type=int, help="worker processes for feature extraction")
    common.add_argument("--level", type=int, help="AFD decomposition level")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="afd-ecg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def record_args(sp):
        sp.add_argument("record", help="WFDB record (.hea or stem) or single-lead CSV")
        sp.add_argument("--annotations", help="annotation file (.atr or sample,symbol CSV)")
        sp.add_argument("--lead", type=int, default=0)

    sp = sub.add_parser("decompose", parents=[common], help="AFD of individual beats")
    record_args(sp)
    sp.add_argument("--beats", default="all", help="'all', an index, or start:stop")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("features", parents=[common], help="feature matrix CSV")
    sp.add_argument("--records", nargs="*", help="record paths (default: split records)")
    sp.add_argument("--split", help="split file (default: bundled)")
    sp.add_argument("--subset", choices=("DS1", "DS2", "all"), default="all")
    sp.add_argument("--augment", action="store_true", help="add S beats from the SV database")
    sp.add_argument("--two-lead", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_features, features=None)

    sp = sub.add_parser("train", parents=[common], help="train the one-vs-one SVM on DS1")
    sp.add_argument("--features", help="precomputed feature CSV (default: extract)")
    sp.add_argument("--split")
    sp.add_argument("--augment", action="store_true")
    sp.add_argument("--two-lead", action="store_true")
    sp.add_argument("--grid-search", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="model file (default: config model_file)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", parents=[common], help="classify beats")
    sp.add_argument("--model")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--features")
    src.add_argument("--records", nargs="+")
    sp.add_argument("--out", required=True, help="predictions CSV")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", parents=[common], help="metrics report on DS2")
    sp.add_argument("--model")
    sp.add_argument("--split")
    sp.add_argument("--features", help="precomputed feature CSV (default: extract)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--no-figures", action="store_true")
    sp.add_argument("--out", required=True, help="report directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("tfr-export", parents=[common], help="time-frequency grids per beat")
    record_args(sp)
    sp.add_argument("--beat", type=int, nargs="+", required=True)
    sp.add_argument("--bins", type=int, default=128)
    sp.add_argument("--f-max", type=float, help="upper bin edge (default: observed IF range)")
    sp.add_argument("--no-figures", action="store_true")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_tfr_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        logger.setLevel(logging.INFO)
    try:
        return args.func(args)
    except RecordFormatError as exc:
        print(f"afd-ecg: malformed input: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"afd-ecg: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, IndexError, KeyError) as exc:
        print(f"afd-ecg: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
