import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from afd_ecg.evaluation import (CONFUSION_MODEL1, CONFUSION_MODEL2, REPORTED_MODEL2, BEAT_COUNTS,
                                BEAT_COUNT_TOTALS, BeatRecord, ConfusionMatrix, SplitSpec,
                                confusion, keep_beat, metrics, split_ds, write_report)
from afd_ecg.features import AAMI_MAP, CLASSES

labels = st.lists(st.sampled_from(CLASSES), min_size=1, max_size=200)


# -- golden tables ----------------------------------------------------------------------

def test_confusion_matrix_1_golden():
    m = metrics(ConfusionMatrix(CONFUSION_MODEL1)).as_percent()
    assert m["Acc"] == pytest.approx(84.92, abs=0.01)
    for c, v in zip(CLASSES, (85.48, 78.08, 81.19, 83.33)):
        assert m["Se"][c] == pytest.approx(v, abs=0.01)


def test_confusion_matrix_2_golden():
    m = metrics(ConfusionMatrix(CONFUSION_MODEL2)).as_percent()
    assert m["Acc"] == pytest.approx(85.02, abs=0.01)
    assert m["Se"]["N"] == pytest.approx(85.56, abs=0.01)
    assert m["+P"]["N"] == pytest.approx(98.94, abs=0.01)


def test_confusion_matrix_2_reproduces_reported_row():
    # the reported row is rounded to at most two decimals
    m = metrics(ConfusionMatrix(CONFUSION_MODEL2)).as_percent()
    for key in ("Se", "+P"):
        for c in CLASSES:
            assert m[key][c] == pytest.approx(REPORTED_MODEL2[key][c], abs=0.01)


def test_beat_counts_internal_consistency():
    for part in ("all", "DS1", "DS2"):
        assert sum(BEAT_COUNTS[part].values()) == BEAT_COUNT_TOTALS[part]
    for sym in BEAT_COUNTS["all"]:
        assert BEAT_COUNTS["DS1"][sym] + BEAT_COUNTS["DS2"][sym] == BEAT_COUNTS["all"][sym]
    per_class = {c: 0 for c in "NSVFQ"}
    for sym, n in BEAT_COUNTS["all"].items():
        per_class[AAMI_MAP[sym]] += n
    assert per_class == {"N": 74173 + 8038 + 7233 + 14 + 223, "S": 2535 + 149 + 84 + 2,
                         "V": 6730 + 106, "F": 801, "Q": 15}


# -- confusion / metrics ----------------------------------------------------------------

def test_confusion_examples():
    assert confusion(["N"], ["S"]).counts.tolist() == [[0, 1, 0, 0], [0] * 4, [0] * 4, [0] * 4]
    cm = confusion(list("NSVF"), list("NNNN"))
    assert cm.counts[:, 0].tolist() == [1, 1, 1, 1] and cm.counts[:, 1:].sum() == 0
    with pytest.raises(ValueError):
        confusion(["N"], ["N", "S"])
    with pytest.raises(ValueError):
        confusion(["Q"], ["N"])


def test_identity_matrix_metrics():
    m = metrics(ConfusionMatrix(np.diag([10, 10, 10, 10]))).as_percent()
    assert m["Acc"] == 100.0
    assert all(v == 100.0 for v in m["Se"].values()) and all(v == 100.0 for v in m["+P"].values())


def test_undefined_ppv_is_none():
    m = metrics(confusion(["N", "S"], ["N", "N"]))
    assert m.ppv["S"] is None and m.ppv["V"] is None and m.se["V"] is None
    assert m.se["S"] == 0.0


def test_empty_matrix():
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(np.zeros((4, 4), int)))
    with pytest.raises(ValueError):
        ConfusionMatrix(-np.eye(4, dtype=int))


@given(labels)
def test_self_confusion_accuracy(x):
    assert metrics(confusion(x, x)).acc == 1.0


@given(labels, st.randoms(use_true_random=False))
def test_accuracy_is_weighted_sensitivity(refs, rnd):
    preds = [rnd.choice(CLASSES) for _ in refs]
    cm = confusion(refs, preds)
    m = metrics(cm)
    rows = cm.counts.sum(axis=1)
    weighted = sum(m.se[c] * rows[i] for i, c in enumerate(CLASSES) if rows[i]) / cm.total
    assert m.acc == pytest.approx(weighted, abs=1e-12)


@given(labels, st.permutations(range(4)), st.randoms(use_true_random=False))
def test_metrics_invariant_under_relabeling(refs, perm, rnd):
    preds = [rnd.choice(CLASSES) for _ in refs]
    m1 = metrics(confusion(refs, preds))
    relabel = {c: CLASSES[perm[i]] for i, c in enumerate(CLASSES)}
    m2 = metrics(confusion([relabel[r] for r in refs], [relabel[p] for p in preds]))
    for c in CLASSES:
        assert m1.se[c] == m2.se[relabel[c]] and m1.ppv[c] == m2.ppv[relabel[c]]


# -- split handling -------------------------------------------------------------------------

def test_default_split():
    s = SplitSpec.load()
    assert len(s.ds1_records) == 22 and len(s.ds2_records) == 22
    assert not set(s.ds1_records) & set(s.ds2_records)
    assert "101" in s.ds1_records and "100" in s.ds2_records
    assert len(s.digest) == 64 and (s.drop_first, s.drop_last) == (10, 1)


def test_split_overlap_rejected(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"DS1": ["100", "101"], "DS2": ["101"]}))
    with pytest.raises(ValueError, match="both"):
        SplitSpec.load(p)


def test_split_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        SplitSpec.load(tmp_path / "nope.json")


def _beats(record, classes):
    n = len(classes)
    return [BeatRecord(record, i, n, c) for i, c in enumerate(classes)]


def test_split_ds_drop_rule_and_q():
    beats = _beats("a", ["N"] * 20 + ["Q"] + ["V"] * 5) + _beats("b", ["S"] * 15)
    spec = SplitSpec(["a"], ["b"])
    ds1, ds2 = split_ds(beats, spec)
    assert len(ds1) == 26 - 10 - 1 - 1 and all(b.ref_class != "Q" for b in ds1)
    assert len(ds2) == 15 - 11
    assert [b.beat_index for b in ds2] == [10, 11, 12, 13]


def test_split_ds_missing_record():
    with pytest.raises(ValueError, match="missing"):
        split_ds(_beats("a", ["N"] * 3), SplitSpec(["a"], ["zz"]))


def test_beat_counts_accounting_without_drop_rule():
    # one synthetic "record" per split carrying the reference per-symbol counts
    spec = SplitSpec(["ds1"], ["ds2"], drop_first=0, drop_last=0)
    beats = []
    for part, rid in (("DS1", "ds1"), ("DS2", "ds2")):
        syms = [s for s, n in BEAT_COUNTS[part].items() for _ in range(n)]
        beats += _beats(rid, [AAMI_MAP[s] for s in syms])
    ds1, ds2 = split_ds(beats, spec)
    q = {p: BEAT_COUNTS[p]["Q"] for p in ("DS1", "DS2")}
    assert len(ds1) + q["DS1"] == BEAT_COUNT_TOTALS["DS1"]
    assert len(ds2) + q["DS2"] == BEAT_COUNT_TOTALS["DS2"]
    assert len(ds1) + len(ds2) + 15 == 100103


def test_keep_beat():
    spec = SplitSpec([], [])
    assert not keep_beat(BeatRecord("r", 9, 100, "N"), spec)
    assert keep_beat(BeatRecord("r", 10, 100, "N"), spec)
    assert not keep_beat(BeatRecord("r", 99, 100, "N"), spec)
    assert not keep_beat(BeatRecord("r", 50, 100, "Q"), spec)


def test_write_report(tmp_path):
    cm = ConfusionMatrix(CONFUSION_MODEL2)
    rep = write_report(cm, metrics(cm), tmp_path, split_sha256="abc", model_version=1, seed=0)
    d = json.loads((tmp_path / "metrics.json").read_text())
    assert d == json.loads(json.dumps(rep))
    assert d["split_sha256"] == "abc" and d["n_beats"] == CONFUSION_MODEL2.sum()
    assert (tmp_path / "confusion.csv").read_text().splitlines()[1] == "N,37681,3555,231,2574"
    assert (tmp_path / "confusion.png").stat().st_size > 0
