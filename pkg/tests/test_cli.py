import json

import numpy as np
import pytest
from PIL import Image

from app import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from services.data.sample_store import read_sample

TINY = """
# narrow network for 32x32 crops
model.resolution = 32
model.widths = 2, 3, 4
model.dilations = 2
model.disc_widths = 2, 3
model.disc_kernel = 3
backbone.widths = 2, 3, 3, 4
train.batch_size = 2
train.steps = 1
"""


@pytest.fixture
def split(two_instance_corpus, tmp_path):
    annotations, images = two_instance_corpus
    out = tmp_path / "train_split"
    code = main(["synth", "--annotations", str(annotations), "--images", str(images), "--out", str(out),
                 "--crop-size", "32", "--seed", "0"])
    assert code == EXIT_OK
    return out


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


@pytest.mark.parametrize("argv", [[], ["paint"], ["train"], ["eval", "--data", "x", "--out", "y", "--region", "edge"],
                                  ["audit", "--inject-fault", "matmul"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "synth" in capsys.readouterr().out


def test_config_errors(split, tmp_path):
    out = str(tmp_path / "run")
    assert main(["train", "--data", str(split), "--out", out, "--set", "train.steps"]) == EXIT_USAGE
    assert main(["train", "--data", str(split), "--out", out, "--set", "train.speed=3"]) == EXIT_USAGE
    assert main(["train", "--data", str(split), "--out", out, "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE
    assert main(["eval", "--data", str(split), "--out", out]) == EXIT_USAGE


def test_synth_summary(two_instance_corpus, tmp_path, capsys):
    annotations, images = two_instance_corpus
    code = main(["synth", "--annotations", str(annotations), "--images", str(images),
                 "--out", str(tmp_path / "s"), "--crop-size", "32", "--augment", "x4"])
    assert code == EXIT_OK
    assert "synthesized 8 samples" in capsys.readouterr().out


def test_data_errors(split, tmp_path):
    assert main(["eval", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "e"),
                 "--completer", "gt"]) == EXIT_DATA
    assert main(["synth", "--annotations", str(tmp_path / "none.json"), "--images", str(tmp_path),
                 "--out", str(tmp_path / "s")]) == EXIT_DATA
    assert main(["eval", "--data", str(split), "--out", str(tmp_path / "e"),
                 "--checkpoint", str(tmp_path / "absent.amgc")]) == EXIT_DATA


def test_ground_truth_eval_is_perfect(split, tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["eval", "--data", str(split), "--out", str(out), "--completer", "gt", "--panel", "2"]) == EXIT_OK
    aggregate = json.loads((out / "metrics.jsonl").read_text().splitlines()[-1])
    assert aggregate["l1_error"] == 0.0
    assert aggregate["psnr_db"] == "inf"
    assert aggregate["ssim"] == pytest.approx(1.0)
    assert (out / "panel.png").is_file()
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["count"] == 2


def test_resolution_mismatch_is_a_config_error(split, tmp_path):
    assert main(["train", "--data", str(split), "--out", str(tmp_path / "run"), "--steps", "1",
                 "--set", "model.resolution=64", "--set", "model.widths=2,3,4", "--set", "model.dilations=2",
                 "--set", "model.disc_widths=2,3", "--set", "backbone.widths=2,3,3,4"]) == EXIT_USAGE


@pytest.mark.slow
def test_train_eval_complete(split, tiny_config, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data", str(split), "--out", str(run)]) == EXIT_OK
    checkpoint = run / "latest.amgc"
    assert checkpoint.is_file()

    out = tmp_path / "eval"
    assert main(["eval", "--data", str(split), "--out", str(out), "--checkpoint", str(checkpoint)]) == EXIT_OK
    aggregate = json.loads((out / "metrics.jsonl").read_text().splitlines()[-1])
    assert aggregate["l1_error"] > 0.0

    sample = read_sample(split, "train_00000")
    for name, mask in (("occ", sample.occluded), ("vis", sample.visible)):
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(tmp_path / f"{name}.png")
    completed = tmp_path / "completed.png"
    assert main(["complete", "--checkpoint", str(checkpoint), "--image", str(split / "train_00000_gt.png"),
                 "--occluded", str(tmp_path / "occ.png"), "--visible", str(tmp_path / "vis.png"),
                 "--out", str(completed)]) == EXIT_OK
    with Image.open(completed) as image:
        assert image.size == (32, 32)
    assert (tmp_path / "completed_panel.png").is_file()


@pytest.mark.slow
def test_sabotaged_audit_exits_numeric(capsys):
    assert main(["audit", "--inject-fault", "conv2d"]) == EXIT_NUMERIC
    assert "audit FAILED" in capsys.readouterr().out
