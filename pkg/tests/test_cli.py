import csv
import json
import shlex

import numpy as np
import pytest
import torch

from umbra.classifier import load_model
from umbra.cli import EXIT_ATTACK_FAILED, EXIT_ERROR, EXIT_OK, build_parser, main
from umbra.config import RUN_CONFIG_NAME, load_config
from umbra.dataio import load_image, load_manifest, save_image
from umbra.geometry import Polygon, RegionMask, rasterize

SMALL = ["--swarm-size", "12", "--iterations", "10", "--restarts", "2"]


@pytest.fixture
def sign(tmp_path):
    return save_image(tmp_path / "sign.png", np.full((32, 32, 3), 200, dtype=np.uint8))


@pytest.fixture
def oracle(oracle_cmd):
    def build(mode: str) -> str:
        return shlex.join(oracle_cmd(mode))
    return build


def read_csv(path) -> list:
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_parser_maps_flags_to_config_keys():
    args = build_parser().parse_args(["attack", "--restarts", "3", "--eot"])
    assert getattr(args, "swarm.restarts") == 3
    assert args.use_eot is True
    assert args.stabilize is None


def test_corpus_command(tmp_path):
    out = tmp_path / "corpus"
    assert main(["corpus", "--out", str(out), "--classes", "2", "--per-class", "3", "--seed", "4"]) == EXIT_OK
    assert len(load_manifest(out)) == 6
    assert load_config(out / RUN_CONFIG_NAME)["seed"] == 4


def test_attack_command_writes_a_local_shadow(tmp_path, sign, oracle):
    out = tmp_path / "run"
    code = main(["attack", "--image", str(sign), "--oracle-cmd", oracle("lightness"), "--out", str(out)] + SMALL)
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["success"] and report["k_source"] == "assumed"
    assert report["original_label"] == 0 and report["adversarial_label"] == 1
    assert report["total_queries"] == report["queries_used"]

    clean = load_image(out / "clean.png")
    adv = load_image(out / "adv.png")
    np.testing.assert_array_equal(clean, load_image(sign))
    region = rasterize(Polygon(report["spec"]["polygon"]), RegionMask.full(32, 32)).bitmap
    np.testing.assert_array_equal(adv[~region], clean[~region])
    assert (adv[region] != clean[region]).any()
    assert (out / RUN_CONFIG_NAME).is_file()


def test_failed_attack_exits_with_two(tmp_path, sign, oracle):
    code = main(["attack", "--image", str(sign), "--oracle-cmd", oracle("constant"),
                 "--out", str(tmp_path / "run")] + SMALL)
    assert code == EXIT_ATTACK_FAILED
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert not report["success"]
    assert report["queries_used"] == 1 + 12 * 10 * 2


def test_measured_k_of_an_unshadowed_reference_is_one(tmp_path, sign, oracle):
    out = tmp_path / "run"
    code = main(["attack", "--image", str(sign), "--measure-k", str(sign), "--oracle-cmd", oracle("lightness"),
                 "--out", str(out)] + SMALL)
    assert code == EXIT_ATTACK_FAILED
    report = json.loads((out / "report.json").read_text())
    assert report["k"] == 1.0
    assert report["k_source"] == "measured"


def test_errors_exit_with_one(tmp_path, oracle):
    assert main(["attack", "--image", str(tmp_path / "missing.png"), "--oracle-cmd", oracle("echo"),
                 "--out", str(tmp_path / "a")]) == EXIT_ERROR
    save_image(tmp_path / "x.png", np.zeros((8, 8, 3), dtype=np.uint8))
    assert main(["attack", "--image", str(tmp_path / "x.png"), "--out", str(tmp_path / "b")]) == EXIT_ERROR


def test_schedule_sweeps_every_second(tmp_path, sign, oracle):
    out = tmp_path / "sched"
    assert main(["schedule", "--image", str(sign), "--oracle-cmd", oracle("constant"), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "timeline.csv")
    assert rows[0] == ["timestamp", "elevation_deg", "azimuth_deg", "label", "confidence_true"]
    assert len(rows) == 1 + 601
    assert {r[3] for r in rows[1:]} == {"0"}
    assert read_csv(out / "windows.csv") == [["start", "end", "duration_s", "frames"]]


def test_schedule_step_and_bad_timestamp(tmp_path, sign, oracle):
    out = tmp_path / "sched"
    assert main(["schedule", "--image", str(sign), "--oracle-cmd", oracle("constant"), "--step", "60",
                 "--start", "2025-03-21T08:00:00", "--end", "2025-03-21T08:10:00", "--out", str(out)]) == EXIT_OK
    assert len(read_csv(out / "timeline.csv")) == 1 + 11
    assert main(["schedule", "--image", str(sign), "--oracle-cmd", oracle("constant"), "--start", "yesterday",
                 "--out", str(tmp_path / "bad")]) == EXIT_ERROR


def test_schedule_at_night_writes_no_shadow_rows(tmp_path, sign, oracle):
    out = tmp_path / "night"
    assert main(["schedule", "--image", str(sign), "--oracle-cmd", oracle("constant"), "--step", "60",
                 "--start", "2025-03-21T00:00:00", "--end", "2025-03-21T00:10:00", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "timeline.csv")
    assert len(rows) == 1 + 11
    assert {r[3] for r in rows[1:]} == {"no shadow"}
    assert {r[4] for r in rows[1:]} == {""}
    assert read_csv(out / "windows.csv") == [["start", "end", "duration_s", "frames"]]
    assert len(load_config(out / RUN_CONFIG_NAME)["occluder"]) == 9


def test_run_config_replays_a_schedule(tmp_path, sign, oracle):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["schedule", "--image", str(sign), "--oracle-cmd", oracle("lightness"), "--step", "30",
                 "--out", str(first)]) == EXIT_OK
    assert main(["schedule", "--config", str(first / RUN_CONFIG_NAME), "--out", str(second)]) == EXIT_OK
    for name in ("timeline.csv", "windows.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_train_and_bench_commands(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["corpus", "--out", str(corpus), "--classes", "2", "--per-class", "4"]) == EXIT_OK
    plain, robust = tmp_path / "plain", tmp_path / "robust"
    assert main(["train", "--corpus", str(corpus), "--epochs", "2", "--out", str(plain)]) == EXIT_OK
    assert main(["train", "--corpus", str(corpus), "--epochs", "2", "--augment-shadows",
                 "--out", str(robust)]) == EXIT_OK
    log = read_csv(plain / "train_log.csv")
    assert log[0] == ["epoch", "loss", "accuracy"] and len(log) == 3
    a, b = load_model(plain / "model.pt"), load_model(robust / "model.pt")
    assert b.augmented and not a.augmented
    assert not torch.equal(a.net.hidden.weight, b.net.hidden.weight)

    out = tmp_path / "bench"
    assert main(["bench", "--corpus", str(corpus), "--model", str(plain / "model.pt"),
                 "--robust-model", str(robust / "model.pt"), "--axis", "k", "--values", "0.2,0.7",
                 "--limit", "1", "--swarm-size", "6", "--iterations", "3", "--restarts", "1",
                 "--out", str(out)]) == EXIT_OK
    table = read_csv(out / "success_rate.csv")
    assert table[0] == ["model", "k=0.2", "k=0.7"]
    assert table[1][0] == "model"
    assert len(read_csv(out / "mean_queries.csv")) == 2
    assert len(read_csv(out / "defense.csv")) == 3


def test_frames_command(tmp_path, sign, oracle):
    frames = tmp_path / "video"
    for i in range(3):
        save_image(frames / f"f{i}.png", load_image(sign))
    out = tmp_path / "frames"
    assert main(["frames", "--frames", str(frames), "--label", "0", "--oracle-cmd", oracle("constant"),
                 "--out", str(out)]) == EXIT_OK
    stats = json.loads((out / "frames.json").read_text())
    assert stats == {"frames": 3, "error_rate": 0.0, "stability": 0.0, "primary_error": None}
    assert len(read_csv(out / "frames.csv")) == 4
