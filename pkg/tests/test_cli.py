import csv
import json
import shutil

import pytest

from mcidrive.cli import main
from mcidrive.dbi import CSV_HEADER, read_features_csv
from mcidrive.pipeline import PipelineConfig, quarterly_table, time_of_day_table
from mcidrive.suite import GROUP_LABELS


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "cohort.json"
    path.write_text(json.dumps({"n_participants": 3, "weeks": 2, "seed": 1}))
    return path


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_missing_spec_is_usage_error(tmp_path, capsys):
    assert main(["synth", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


def test_synth_bad_spec_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"mci_fraction": 3}))
    assert main(["synth", "--spec", str(path), "--out", str(tmp_path / "o")]) == 2
    path.write_text("{not json")
    assert main(["synth", "--spec", str(path), "--out", str(tmp_path / "o")]) == 2


def test_synth_seed_twice_identical(tmp_path, spec_file, capsys):
    for name in "ab":
        assert main(["synth", "--spec", str(spec_file), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert "manifest.json" in capsys.readouterr().out
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["spec"]["seed"] == 7


def test_extract_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["extract", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 1
    assert "no trips extracted" in capsys.readouterr().err


def test_extract_missing_dir(tmp_path, capsys):
    assert main(["extract", str(tmp_path / "absent"), "--out", str(tmp_path / "o")]) == 1
    assert "no trips extracted" in capsys.readouterr().err


def test_extract_matches_ledger(small_cohort, small_ledger, tmp_path):
    assert main(["extract", str(small_cohort), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "features.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_HEADER)
    assert rows[0][:3] == ["participant_id", "period_id", "trip_id"] and rows[0][-1] == "mci"
    assert len(rows) - 1 == len(small_ledger)
    quality = json.loads((tmp_path / "parse_quality.json").read_text())
    assert quality["total"]["trips"] == len(small_ledger)


def test_extract_tolerates_unreadable_file(small_cohort, tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(small_cohort, data)
    manifest = json.loads((data / "manifest.json").read_text())
    first = manifest["participants"][0]["files"]
    (data / first["imu"]).write_text("not,a,header\n")
    assert main(["extract", str(data), "--out", str(tmp_path / "o")]) == 0
    quality = json.loads((tmp_path / "o" / "parse_quality.json").read_text())
    assert quality["total"]["unreadable_imu_files"] == 1


def test_report_outputs(small_features, tmp_path, capsys):
    assert main(["report", str(small_features), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "time_of_day,trips,share"
    with open(tmp_path / "time_of_day.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [r["time_of_day"] for r in table] == ["morning", "afternoon", "evening", "night"]
    assert sum(float(r["share"]) for r in table) == pytest.approx(1.0)
    records = read_features_csv(small_features)
    quarters = {(r.participant_id, r.period_id) for r in records}
    n = 0
    for name in ("quarterly_nonmci.csv", "quarterly_mci.csv"):
        with open(tmp_path / name, newline="") as fh:
            n += len(list(csv.DictReader(fh)))
    assert n == len(quarters)


def test_time_of_day_table_all_morning():
    table = time_of_day_table([{"time_of_day": "morning"}] * 5)
    assert table[0] == {"time_of_day": "morning", "trips": 5, "share": 1.0}
    assert all(row["share"] == 0.0 for row in table[1:])


def test_quarterly_table_means(small_features):
    records = read_features_csv(small_features)
    rows = quarterly_table(records)
    first = rows[0]
    mine = [r for r in records if (r.participant_id, r.period_id) == (first["participant_id"], first["period_id"])]
    assert first["rows"] == len(mine)
    assert first["distance_km"] == pytest.approx(sum(r.distance_km for r in mine) / len(mine))


def test_report_missing_features(tmp_path):
    assert main(["report", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1


def test_train_eval_all_groups_and_rerun(small_features, tmp_path, capsys):
    args = ["train-eval", str(small_features), "--seed", "3"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    table = capsys.readouterr().out
    for label in GROUP_LABELS.values():
        assert label in table
    doc = json.loads((tmp_path / "a" / "results.json").read_text())
    assert [m["input"] for m in doc["models"]] == [GROUP_LABELS[g] for g in range(1, 7)]
    assert len(list((tmp_path / "a" / "models").glob("*.json"))) == 6
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.json").read_bytes() == (tmp_path / "b" / "results.json").read_bytes()


def test_train_eval_single_group(small_features, tmp_path):
    assert main(["train-eval", str(small_features), "--group", "1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "results.json").read_text())
    assert [(m["model"], m["features"]) for m in doc["models"]] == [(1, ["age"])]


def test_train_eval_bad_group_is_usage_error(small_features, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train-eval", str(small_features), "--group", "9", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_config_file(small_features, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"forest": {"n_trees": 3}, "test_fraction": 0.25}))
    assert main(["--config", str(config), "train-eval", str(small_features), "--group", "2",
                 "--out", str(tmp_path / "o")]) == 0
    model = json.loads((tmp_path / "o" / "models" / "model_group2.json").read_text())
    assert len(model["trees"]) == 3
    config.write_text(json.dumps({"bogus_key": 1}))
    assert main(["--config", str(config), "train-eval", str(small_features), "--out", str(tmp_path)]) == 2


def test_pipeline_config_round_trip():
    cfg = PipelineConfig(gap_s=120, seed=4)
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        PipelineConfig(harsh_threshold=0)
