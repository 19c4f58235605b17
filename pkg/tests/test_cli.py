import json

import pytest

from posevents import io, synth
from posevents.cli import main
from posevents.core import timelines_by_type


def run(*argv):
    return main([str(a) for a in argv])


def _write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run("track", "--nonsense")
    assert exc.value.code == 2


def test_missing_config_file_exits_2(tmp_path, capsys):
    scene = tmp_path / "x.jsonl"
    scene.write_text("")
    assert run("track", "--in", scene, "--config", tmp_path / "nope.json",
               "--out", tmp_path / "t.jsonl") == 2


def test_unknown_config_key_exits_2(tmp_path):
    params = _write_json(tmp_path / "p.json", {"not_a_field": 1})
    assert run("synth", "runner", "--params", params, "--out-dir", tmp_path / "d") == 2


def test_eval_events_identical_gives_f1_one(tmp_path, capsys):
    events = _write_json(tmp_path / "e.json",
                         {"fps": 200.0, "events": {"step_begin": [10, 30], "step_end": [20, 40]}})
    out = tmp_path / "report.json"
    assert run("eval-events", "--pred", events, "--gt", events, "--dt", "1,3",
               "--out", out) == 0
    report = json.loads(out.read_text())
    assert all(row["f1"] == 1.0 for row in report["rows"])
    assert "F1=1.000" in capsys.readouterr().out


def test_runner_pipeline_roundtrip(tmp_path, capsys):
    params = _write_json(tmp_path / "params.json",
                         {"count": 2, "period": 30, "num_strides": 5})
    data_dir = tmp_path / "data"
    assert run("synth", "runner", "--params", params, "--seed", 3,
               "--out-dir", data_dir) == 0
    video = data_dir / "video_000"
    assert (video / "candidates.jsonl").exists()
    assert (video / "events.json").exists()

    track_path = tmp_path / "track.jsonl"
    assert run("track", "--in", video / "candidates.jsonl", "--domain", "athletics",
               "--out", track_path, "--dump-all-tracks", tmp_path / "ranked.jsonl") == 0
    track, meta = io.load_track(track_path)
    assert track.t1 == 0

    dataset = tmp_path / "dataset.bin"
    assert run("encode",
               "--track", track_path, "--events", video / "events.json",
               "--track", track_path, "--events", video / "events.json",
               "--mode", "sequence", "--tmax", 30, "--out", dataset) == 0

    model = tmp_path / "model.tcn"
    train_cfg = _write_json(tmp_path / "train.json",
                            {"epochs": 2, "batch_size": 64, "hidden": 8})
    assert run("train", "--data", dataset, "--config", train_cfg, "--seed", 5,
               "--out", model, "--loss-log", tmp_path / "loss.json") == 0
    assert model.exists()

    pred = tmp_path / "pred.json"
    indicators = tmp_path / "indicators.csv"
    assert run("infer", "--model", model, "--track", track_path,
               "--out", pred, "--dump-indicators", indicators) == 0
    timelines, fps = io.load_timeline(pred)
    assert fps == 200.0
    assert indicators.read_text().splitlines()[0].startswith("frame,boundary,f_step_begin")

    report = tmp_path / "report.json"
    assert run("eval-events", "--pred", pred, "--gt", video / "events.json",
               "--dt", "1,2,3", "--out", report) == 0

    # report conversion and plotting
    assert run("report", "--in", report, "--format", "csv", "--out", tmp_path / "report.csv") == 0
    import csv as csv_mod
    with open(tmp_path / "report.csv") as fh:
        csv_rows = list(csv_mod.DictReader(fh))
    json_rows = json.loads(report.read_text())["rows"]
    assert len(csv_rows) == len(json_rows)
    for csv_row, json_row in zip(csv_rows, json_rows):
        assert float(csv_row["f1"]) == pytest.approx(json_row["f1"])
        assert int(csv_row["tp"]) == json_row["tp"]
    assert run("report", "--format", "plot", "--indicators", indicators,
               "--pred", pred, "--gt", video / "events.json",
               "--out", tmp_path / "plot.png") == 0
    assert (tmp_path / "plot.png").stat().st_size > 1000


def test_infer_short_track_exits_1(tmp_path, capsys):
    params = _write_json(tmp_path / "params.json", {"period": 8, "num_strides": 2})
    data_dir = tmp_path / "data"
    assert run("synth", "runner", "--params", params, "--out-dir", data_dir) == 0
    track_path = tmp_path / "track.jsonl"
    assert run("track", "--in", data_dir / "video_000" / "candidates.jsonl",
               "--out", track_path) == 0
    model = tmp_path / "model.tcn"
    # Build a model from a long enough synthetic video first.
    params2 = _write_json(tmp_path / "params2.json", {"period": 30, "num_strides": 4})
    assert run("synth", "runner", "--params", params2, "--out-dir", tmp_path / "d2") == 0
    long_track = tmp_path / "long.jsonl"
    assert run("track", "--in", tmp_path / "d2" / "video_000" / "candidates.jsonl",
               "--out", long_track) == 0
    dataset = tmp_path / "dataset.bin"
    assert run("encode", "--track", long_track,
               "--events", tmp_path / "d2" / "video_000" / "events.json",
               "--out", dataset) == 0
    cfg = _write_json(tmp_path / "t.json", {"epochs": 1, "batch_size": 16, "hidden": 4})
    assert run("train", "--data", dataset, "--config", cfg, "--out", model) == 0

    code = run("infer", "--model", model, "--track", track_path, "--out", tmp_path / "p.json")
    assert code == 1
    assert "29" in capsys.readouterr().err


def test_swim_pipeline(tmp_path):
    params = _write_json(tmp_path / "swim.json", {"num_distractors": 2})
    data_dir = tmp_path / "swim"
    assert run("synth", "swim", "--params", params, "--seed", 2, "--out-dir", data_dir) == 0
    rec_dir = data_dir / "rec_000"
    tracks = []
    for cam in range(4):
        out = tmp_path / f"track_cam{cam}.jsonl"
        assert run("track", "--in", rec_dir / "candidates.jsonl", "--camera", f"cam{cam}",
                   "--domain", "swim", "--out", out) == 0
        tracks.append(out)

    base = synth.SwimStartParams(num_distractors=2)
    rule_cfg = _write_json(tmp_path / "rules.json", {
        "event_cameras": {"jump_off": "cam0", "dive_in": "cam0", "first_kick": "cam1",
                          "d5m": "cam1", "d10m": "cam2", "d15m": "cam3"},
        "position_thresholds": {
            name: mark - base.camera_ranges[ci][0]
            for name, mark, ci in zip(("d5m", "d10m", "d15m"), base.mark_x, (1, 2, 3))
        },
    })
    detected_path = tmp_path / "detected.json"
    assert run("swim-detect", "--tracks", *tracks, "--config", rule_cfg,
               "--out", detected_path) == 0
    detected, _ = io.load_timeline(detected_path)
    truth, _ = io.load_timeline(rec_dir / "events.json")
    truth_by = timelines_by_type(truth)
    for tl in detected:
        assert len(tl.occurrences) == 1
        assert abs(tl.occurrences[0] - truth_by[tl.event_type].occurrences[0]) <= 1

    # Idempotence: rerunning writes byte-identical output.
    before = detected_path.read_bytes()
    assert run("swim-detect", "--tracks", *tracks, "--config", rule_cfg,
               "--out", detected_path) == 0
    assert detected_path.read_bytes() == before


def test_eval_pose_cli(tmp_path, capsys):
    params = _write_json(tmp_path / "params.json", {"period": 30, "num_strides": 3})
    assert run("synth", "runner", "--params", params, "--out-dir", tmp_path / "d") == 0
    cands = tmp_path / "d" / "video_000" / "candidates.jsonl"
    out = tmp_path / "pck.json"
    assert run("eval-pose", "--pred", cands, "--gt", cands,
               "--alpha", "0.05,0.1", "--out", out) == 0
    report = json.loads(out.read_text())
    assert all(row["pck"] == 100.0 for row in report["rows"])


def test_track_multi_camera_with_jobs(tmp_path):
    params = _write_json(tmp_path / "swim.json", {"num_distractors": 1})
    assert run("synth", "swim", "--params", params, "--out-dir", tmp_path / "s") == 0
    out = tmp_path / "track.jsonl"
    assert run("track", "--in", tmp_path / "s" / "rec_000" / "candidates.jsonl",
               "--domain", "swim", "--out", out, "--jobs", 2) == 0
    for cam in range(4):
        assert (tmp_path / f"track_cam{cam}.jsonl").exists()
