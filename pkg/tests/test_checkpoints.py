"""
Tests for checkpoint files, training logs and divergence guards
"""

import json

import pytest
import torch

from portrait_lab.checkpoints import (
    TrainingLog, guard_finite, load_checkpoint, save_checkpoint, snapshot, state_digest,
)
from portrait_lab.errors import CheckpointError, NumericalError


def test_save_and_load(tmp_path):
    state = {"weight": torch.arange(4.0)}
    path = save_checkpoint(tmp_path / "nested" / "flow.pt", "flow", {"dim": 4}, state, {"seed": 1})
    payload = load_checkpoint(path, "flow")
    assert payload["arch"] == {"dim": 4}
    assert payload["metadata"] == {"seed": 1}
    assert torch.equal(payload["state_dict"]["weight"], state["weight"])
    assert not list((tmp_path / "nested").glob("*.tmp"))


def test_unknown_kind_and_mismatch(tmp_path):
    with pytest.raises(CheckpointError, match="Unknown checkpoint kind"):
        save_checkpoint(tmp_path / "x.pt", "critic", {}, {})
    save_checkpoint(tmp_path / "x.pt", "predictor", {}, {})
    with pytest.raises(CheckpointError, match="expected 'generator'"):
        load_checkpoint(tmp_path / "x.pt", "generator")


def test_missing_and_foreign_files(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "none.pt", "flow")
    torch.save({"weights": 1}, str(tmp_path / "foreign.pt"))
    with pytest.raises(CheckpointError, match="not a portrait-lab"):
        load_checkpoint(tmp_path / "foreign.pt", "flow")
    (tmp_path / "garbage.pt").write_bytes(b"\x00\x01")
    with pytest.raises(CheckpointError, match="unreadable"):
        load_checkpoint(tmp_path / "garbage.pt", "flow")


def test_finite_values_pass():
    guard_finite({"loss": torch.tensor(1.0), "aux": 0.5}, 1, None, None, "encoder")


def test_nonfinite_loss_writes_diagnostics(tmp_path):
    last_good = {"w": torch.ones(2)}
    with pytest.raises(NumericalError) as info:
        guard_finite({"loss": torch.tensor(float("nan")), "aux": torch.tensor(2.0)}, 7, last_good,
                     tmp_path / "encoder", "encoder")
    assert info.value.diagnostics["step"] == 7
    assert info.value.diagnostics["nonfinite"] == ["loss"]
    assert info.value.exit_code == 4

    diagnostics = json.loads((tmp_path / "encoder.diagnostics.json").read_text())
    assert diagnostics["kind"] == "encoder"
    saved = torch.load(str(tmp_path / "encoder.last-good.pt"))
    assert torch.equal(saved["w"], last_good["w"])


def test_state_digest_tracks_values():
    module = torch.nn.Linear(2, 2)
    before = state_digest(snapshot(module))
    assert state_digest(snapshot(module)) == before
    with torch.no_grad():
        module.bias.add_(1e-6)
    assert state_digest(snapshot(module)) != before


def test_training_log_appends_json_lines(tmp_path):
    log = TrainingLog(tmp_path / "logs" / "run.jsonl")
    log.append(1, loss=torch.tensor(0.5), note="warmup")
    log.append(2, loss=0.25)
    assert log.series("loss") == [0.5, 0.25]
    assert TrainingLog.read(tmp_path / "logs" / "run.jsonl") == log.records
    assert TrainingLog().append(3, loss=1.0) == {"step": 3, "loss": 1.0}
