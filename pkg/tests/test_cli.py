"""
Tests for the plab command line
"""

import json
import logging

import pytest
from typer.testing import CliRunner

from portrait_lab import __version__
from portrait_lab.cli import app
from portrait_lab.config import config, load_config
from portrait_lab.database import Database
from portrait_lab.dataset import read_dataset

runner = CliRunner()


@pytest.fixture(autouse=True)
def registry(tmp_path, monkeypatch):
    path = tmp_path / "registry.db"
    monkeypatch.setattr(config, "DB_PATH", path)
    monkeypatch.setattr(config, "DEFAULT_CONFIG_PATH", None)
    return path


def test_init_config_writes_defaults(tmp_path):
    out = tmp_path / "default.json"
    result = runner.invoke(app, ["init-config", str(out)])
    assert result.exit_code == 0, result.output
    assert load_config(out).seed == 0


def test_version():
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_verbose_sets_the_level_without_adding_handlers():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    try:
        result = runner.invoke(app, ["--verbose", "version"])
        assert result.exit_code == 0
        assert root.level == logging.DEBUG
        assert root.handlers == handlers
    finally:
        root.setLevel(level)


def test_scene_gen_writes_and_registers(tmp_path, config_file, registry):
    out = tmp_path / "data"
    args = ["scene", "gen", "--out", str(out), "--count", "4", "--identities", "2", "--seed", "5",
            "-c", str(config_file)]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    handle = read_dataset(out)
    assert len(handle) == 4
    assert handle.metadata["seed"] == 5

    db = Database(registry)
    assert [a["kind"] for a in db.get_artifacts()] == ["dataset"]
    db.close()

    again = runner.invoke(app, args)
    assert again.exit_code == 3
    assert runner.invoke(app, args + ["--overwrite"]).exit_code == 0


def test_scene_gen_repeats_bitwise(tmp_path, config_file):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(app, ["scene", "gen", "--out", str(out), "--count", "3", "--identities", "1",
                                     "--seed", "9", "-c", str(config_file)])
        assert result.exit_code == 0, result.output
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix == ".png"})
    assert outputs[0] == outputs[1]
    assert len(outputs[0]) == 3


def test_unknown_config_key_exits_with_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"seed": 1, "colour": "red"}))
    result = runner.invoke(app, ["scene", "gen", "--out", str(tmp_path / "x"), "--count", "1", "-c", str(bad)])
    assert result.exit_code == 2


def test_missing_checkpoint_exits_with_three(tmp_path, config_file):
    result = runner.invoke(app, ["flow", "edit", "--image", str(tmp_path / "in.png"),
                                 "--gen-ckpt", str(tmp_path / "none.pt"), "--enc-ckpt", str(tmp_path / "enc.pt"),
                                 "--out", str(tmp_path / "out.png"), "-c", str(config_file)])
    assert result.exit_code == 3


def test_malformed_edit_exits_with_two(tmp_path, config_file):
    result = runner.invoke(app, ["flow", "edit", "--image", str(tmp_path / "in.png"), "--set", "hue",
                                 "--gen-ckpt", str(tmp_path / "gen.pt"), "--enc-ckpt", str(tmp_path / "enc.pt"),
                                 "--out", str(tmp_path / "out.png"), "-c", str(config_file)])
    assert result.exit_code == 2


def test_video_strip_grid_from_a_toy_video(tmp_path, config_file):
    video = tmp_path / "clip"
    made = runner.invoke(app, ["video", "make", "--out", str(video), "--frames", "3", "-c", str(config_file)])
    assert made.exit_code == 0, made.output

    out = tmp_path / "strip.png"
    result = runner.invoke(app, ["eval", "grid", "--kind", "video-strip", "--video", str(video),
                                 "--out", str(out), "-c", str(config_file)])
    assert result.exit_code == 0, result.output
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert (sidecar["rows"], sidecar["cols"]) == (1, 3)
    assert sidecar["row_labels"] == ["clip"]


def test_grid_needs_checkpoints(tmp_path):
    result = runner.invoke(app, ["eval", "grid", "--kind", "multiview", "--out", str(tmp_path / "g.png")])
    assert result.exit_code == 2


def test_artifacts_listing(tmp_path, config_file):
    runner.invoke(app, ["scene", "gen", "--out", str(tmp_path / "data"), "--count", "2", "--identities", "1",
                        "-c", str(config_file)])
    result = runner.invoke(app, ["eval", "artifacts"])
    assert result.exit_code == 0
    assert "dataset" in result.output
    empty = runner.invoke(app, ["eval", "artifacts", "--kind", "flow"])
    assert "No artifacts" in empty.output


@pytest.mark.slow
def test_end_to_end_pipeline(tmp_path, config_file):
    cfg = ["-c", str(config_file)]
    data, corpus = tmp_path / "data", tmp_path / "corpus"
    gen, reg, enc, flow = (tmp_path / name for name in ("gen.pt", "reg.pt", "enc.pt", "flow.pt"))
    steps = [
        ["scene", "gen", "--out", str(data), "--count", "12", "--identities", "4", "--seed", "1"],
        ["gen", "pretrain", "--dataset", str(data), "--out", str(gen), "--steps", "2"],
        ["gen", "sample-corpus", "--gen-ckpt", str(gen), "--out", str(corpus), "--count", "6", "--verify"],
        ["enc", "train-regressor", "--dataset", str(data), "--out", str(reg), "--steps", "2"],
        ["train", "encoder", "--corpus", str(corpus), "--gen-ckpt", str(gen), "--out", str(enc),
         "--regressor", str(reg), "--steps", "2"],
        ["flow", "train", "--out", str(flow), "--dataset", str(data), "--enc-ckpt", str(enc),
         "--regressor", str(reg), "--steps", "2"],
        ["flow", "edit", "--image", str(data / "000000.png"), "--set", "hue=0.9", "--gen-ckpt", str(gen),
         "--enc-ckpt", str(enc), "--flow-ckpt", str(flow), "--dataset", str(data),
         "--out", str(tmp_path / "edited.png")],
        ["eval", "quality", "--dataset", str(data), "--gen-ckpt", str(gen), "--enc-ckpt", str(enc),
         "--regressor", str(reg), "--limit", "4", "--out", str(tmp_path / "quality.json")],
    ]
    for args in steps:
        result = runner.invoke(app, args + cfg)
        assert result.exit_code == 0, f"{' '.join(args[:2])}: {result.output}"

    assert (tmp_path / "edited.png").exists()
    report = json.loads((tmp_path / "quality.json").read_text())
    assert report["metadata"]["count"] == 4
    assert len(report["per_sample"]["psnr"]) == 4
