"""End-to-end runs of the command line on the synthetic WFDB fixture."""

import json

import numpy as np
import pytest

from afd_ecg.afd import AFDDecomposition
from afd_ecg.cli import main
from afd_ecg.config import DATA_DIR_ENV
from afd_ecg.pipeline import read_features_csv, write_features_csv
from afd_ecg.svm import TrainedModel


@pytest.fixture(autouse=True)
def _no_env(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(fixture_dataset, tmp_path_factory):
    """Features for all six records and a model trained on DS1."""
    out = tmp_path_factory.mktemp("cli")
    root = fixture_dataset
    common = ["--data-dir", root, "--split", root / "split.json"]
    assert run("features", *common, "--out", out / "feat.csv") == 0
    assert run("train", *common, "--features", out / "feat.csv", "--out", out / "model.json") == 0
    return root, out


def test_decompose_one_beat(fixture_dataset, tmp_path):
    rec = fixture_dataset / "mitdb" / "901"
    assert run("decompose", rec, "--beats", "12", "--out", tmp_path) == 0
    files = sorted(tmp_path.glob("*.afd.json"))
    assert [f.name for f in files] == ["901_000012.afd.json"]
    d = AFDDecomposition.load(files[0])
    assert d.level == 10 and d.grid_len == 301 and d.poles[0] == 0
    assert d.meta["beat_index"] == 12 and d.meta["sample_rate"] == 360


def test_decompose_level_flag(fixture_dataset, tmp_path):
    rec = fixture_dataset / "mitdb" / "901"
    assert run("decompose", rec, "--beats", "12:14", "--level", 5, "--out", tmp_path) == 0
    files = sorted(tmp_path.glob("*.afd.json"))
    assert len(files) == 2
    assert all(AFDDecomposition.load(f).level == 5 for f in files)


def test_decompose_bad_beat_range(fixture_dataset, tmp_path):
    rec = fixture_dataset / "mitdb" / "901"
    assert run("decompose", rec, "--beats", "500", "--out", tmp_path) == 1


def test_malformed_record_is_io_error(fixture_dataset, tmp_path, capsys):
    src = fixture_dataset / "mitdb"
    for ext in ("hea", "atr"):
        (tmp_path / f"901.{ext}").write_bytes((src / f"901.{ext}").read_bytes())
    (tmp_path / "901.dat").write_bytes((src / "901.dat").read_bytes()[:100])
    assert run("decompose", tmp_path / "901", "--out", tmp_path / "o") == 2
    assert "byte offset" in capsys.readouterr().err


def test_missing_split_is_io_error(fixture_dataset, tmp_path):
    code = run("features", "--data-dir", fixture_dataset, "--split", tmp_path / "none.json",
               "--out", tmp_path / "f.csv")
    assert code == 2


def test_bad_config_is_validation_error(fixture_dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"svm": {"C": 0}}))
    assert run("features", "--config", cfg, "--out", tmp_path / "f.csv") == 1


def test_missing_data_dir_is_validation_error(tmp_path):
    assert run("features", "--out", tmp_path / "f.csv") == 1


def test_features_csv(trained):
    _, out = trained
    rows, names = read_features_csv(out / "feat.csv")
    assert len(names) == 19
    assert {r.record_id for r in rows} == {"901", "902", "903", "904", "905", "906"}
    assert all(r.features.shape == (19,) and np.all(np.isfinite(r.features)) for r in rows)
    assert all(0 <= r.residual < 1 for r in rows)


def test_features_csv_round_trip(trained, tmp_path):
    _, out = trained
    rows, _ = read_features_csv(out / "feat.csv")
    write_features_csv(rows, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_text() == (out / "feat.csv").read_text()


def test_model_metadata(trained):
    root, out = trained
    m = TrainedModel.load(out / "model.json")
    assert m.meta["seed"] == 0 and len(m.meta["split_sha256"]) == 64
    assert m.feature_names[0] == "rpeak_if_2"
    assert len(m.binaries) == 6


def test_training_is_deterministic(trained, tmp_path):
    root, out = trained
    assert run("train", "--split", root / "split.json", "--features", out / "feat.csv",
               "--out", tmp_path / "m2.json") == 0
    assert (tmp_path / "m2.json").read_text() == (out / "model.json").read_text()


def test_evaluate_report(trained, tmp_path):
    root, out = trained
    args = ["evaluate", "--split", root / "split.json", "--features", out / "feat.csv",
            "--model", out / "model.json", "--seed", 5]
    assert run(*args, "--out", tmp_path / "r1") == 0
    assert run(*args, "--no-figures", "--out", tmp_path / "r2") == 0
    rep = json.loads((tmp_path / "r1" / "metrics.json").read_text())
    assert rep["seed"] == 5 and rep["split_sha256"] == TrainedModel.load(
        out / "model.json").meta["split_sha256"]
    assert 0 <= rep["metrics_percent"]["Acc"] <= 100 and rep["reference_acc"] == 85.02
    assert (tmp_path / "r1" / "confusion.png").exists()
    assert not (tmp_path / "r2" / "confusion.png").exists()
    for name in ("metrics.json", "confusion.csv", "predictions.csv"):
        assert (tmp_path / "r1" / name).read_text() == (tmp_path / "r2" / name).read_text()
    preds = (tmp_path / "r1" / "predictions.csv").read_text().splitlines()
    assert preds[0] == "record_id,beat_index,ref_class,predicted"
    assert {p.split(",")[0] for p in preds[1:]} == {"904", "905", "906"}
    assert min(int(p.split(",")[1]) for p in preds[1:]) >= 10


def test_evaluate_from_records_matches_csv(trained, tmp_path):
    root, out = trained
    common = ["--split", root / "split.json", "--model", out / "model.json", "--no-figures"]
    assert run("evaluate", *common, "--data-dir", root, "--out", tmp_path / "a") == 0
    assert run("evaluate", *common, "--features", out / "feat.csv", "--out", tmp_path / "b") == 0
    assert ((tmp_path / "a" / "predictions.csv").read_text()
            == (tmp_path / "b" / "predictions.csv").read_text())


def test_predict(trained, tmp_path):
    root, out = trained
    assert run("predict", "--model", out / "model.json", "--records", root / "mitdb" / "904",
               "--out", tmp_path / "p.csv") == 0
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert len(lines) > 1
    assert all(line.split(",")[3] in "NSVF" for line in lines[1:])


def test_tfr_export_single_bin(fixture_dataset, tmp_path):
    rec = fixture_dataset / "mitdb" / "902"
    assert run("tfr-export", rec, "--beat", 12, "--bins", 1, "--out", tmp_path) == 0
    assert run("decompose", rec, "--beats", 12, "--out", tmp_path) == 0
    csv = list(tmp_path.glob("902_000012_*.tfr.csv"))
    assert len(csv) == 1
    assert csv[0].with_name(csv[0].name.replace(".tfr.csv", ".tfr.png")).exists()
    grid = np.loadtxt(csv[0], delimiter=",", skiprows=2)
    d = AFDDecomposition.load(tmp_path / "902_000012.afd.json")
    energy = sum(np.abs(d.component(n)) ** 2 for n in range(1, d.level + 1))
    np.testing.assert_allclose(grid[:, 2], energy, rtol=1e-9, atol=1e-15)


def test_tfr_export_bad_beat(fixture_dataset, tmp_path):
    rec = fixture_dataset / "mitdb" / "902"
    assert run("tfr-export", rec, "--beat", 9999, "--out", tmp_path) == 1
