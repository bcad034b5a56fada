"""
Tests for video inversion, fine-tuning and sequence editing
"""

import json

import numpy as np
import pytest
import torch

from portrait_lab.encoder import EncoderBundle
from portrait_lab.errors import ArgumentError, CorruptIndexError
from portrait_lab.generator import generator_digest, render_batch
from portrait_lab.models import StyleCode, ViewCode
from portrait_lab.video import (
    SequenceCodes, codes_digest, edit_sequence, extract_frame_irrelevant, finetune_generator,
    invert_sequence, make_toy_video, read_sequence_codes, smooth_codes, video_lookup,
    write_sequence_codes,
)


def _sequence(values):
    column = torch.tensor(values, dtype=torch.float32).unsqueeze(1)
    return StyleCode(column.clone(), column.clone()), ViewCode(column.clone())


def test_two_frame_smoothing():
    style, view = _sequence([0.0, 1.0, 0.0, 1.0])
    smoothed, smoothed_view = smooth_codes(style, view, 0.5)
    assert smoothed.w_geo.squeeze(1).tolist() == [0.0, 0.5, 0.5, 0.5]
    assert smoothed.w_tex.squeeze(1).tolist() == [0.0, 0.5, 0.5, 0.5]
    assert smoothed_view is view


def test_smoothing_view_codes_on_request():
    style, view = _sequence([0.0, 1.0, 0.0, 1.0])
    _, smoothed_view = smooth_codes(style, view, 0.5, smooth_view=True)
    assert smoothed_view.d.squeeze(1).tolist() == [0.0, 0.5, 0.5, 0.5]


def test_unit_weight_is_the_identity_and_range_is_checked():
    style, view = _sequence([0.0, 1.0, 2.0])
    same, _ = smooth_codes(style, view, 1.0)
    assert torch.equal(same.w_geo, style.w_geo)
    with pytest.raises(ArgumentError, match=r"\[0, 1\]"):
        smooth_codes(style, view, 1.5)
    with pytest.raises(ArgumentError):
        smooth_codes(style, view, -0.1)


def test_frame_irrelevant_blocks_are_averaged(dataset):
    base = dataset.specs[0].coeffs
    coeffs = [base.replace(beta=np.zeros(8)), base.replace(beta=np.ones(8))]
    beta, albedo = extract_frame_irrelevant(coeffs)
    assert np.allclose(beta, 0.5)
    assert np.array_equal(albedo, base.albedo)
    with pytest.raises(ArgumentError):
        extract_frame_irrelevant([])


def test_averaged_beta_beats_every_noisy_frame(dataset):
    rng = np.random.default_rng(11)
    base = dataset.specs[0].coeffs
    wins = 0
    trials = 100
    for _ in range(trials):
        truth = rng.uniform(-1.0, 1.0, size=8)
        noisy = [truth + rng.normal(scale=0.1, size=8) for _ in range(10)]
        beta, _ = extract_frame_irrelevant([base.replace(beta=b) for b in noisy])
        averaged_error = np.linalg.norm(beta - truth)
        wins += all(averaged_error < np.linalg.norm(b - truth) for b in noisy)
    assert wins >= 0.8 * trials


def test_toy_video_turns_one_head(experiment):
    sequence, specs = make_toy_video(5, frames=4, yaw_amplitude=0.5, scene_config=experiment.scene)
    assert sequence.frames.shape == (4, 3, 32, 32)
    yaws = [s.coeffs.pose[0] for s in specs]
    assert yaws[0] == 0.0
    assert yaws[1] == pytest.approx(0.5)
    assert yaws[3] == pytest.approx(-0.5)
    assert all(np.array_equal(s.coeffs.beta, specs[0].coeffs.beta) for s in specs)
    assert len({s.identity_id for s in specs}) == 1
    with pytest.raises(ArgumentError):
        make_toy_video(5, frames=0, scene_config=experiment.scene)


def test_toy_video_is_reproducible(experiment):
    a, _ = make_toy_video(8, frames=3, scene_config=experiment.scene)
    b, _ = make_toy_video(8, frames=3, scene_config=experiment.scene)
    assert torch.equal(a.frames, b.frames)


@pytest.fixture
def toy(experiment, encoder):
    sequence, specs = make_toy_video(6, frames=4, scene_config=experiment.scene)
    bundle = EncoderBundle(encoder, None, video_lookup(sequence.frames, specs), experiment.scene)
    return sequence, bundle


def test_invert_sequence_shares_coefficients(toy, experiment):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    assert len(codes) == 4
    assert codes.attributes.shape == (4, 4)
    assert codes.metadata["shared_coefficients"] is True
    assert all(np.array_equal(c.beta, codes.coeffs[0].beta) for c in codes.coeffs)

    raw = invert_sequence(bundle, sequence.frames, experiment, share_coefficients=False, smoothing=False)
    assert raw.metadata["smoothing_weight"] == 1.0
    assert torch.equal(codes.style.w_geo[0], raw.style.w_geo[0])


def test_zero_step_finetune_leaves_everything_unchanged(toy, experiment, generator):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    before = generator_digest(generator)
    result = finetune_generator(generator, sequence.frames, codes.style, codes.view, experiment.video, steps=0)
    assert result.steps_run == 0
    assert generator_digest(result.generator) == before
    assert result.psnr_after == pytest.approx(result.psnr_before)
    assert result.codes_digest == codes_digest(codes.style, codes.view)


def test_finetune_updates_a_copy(toy, experiment, generator, tmp_path):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    before = generator_digest(generator)
    result = finetune_generator(generator, sequence.frames, codes.style, codes.view, experiment.video,
                                steps=2, out_dir=tmp_path)
    assert result.steps_run == 2 and len(result.losses) == 2
    assert generator_digest(generator) == before
    assert generator_digest(result.generator) != before
    assert (tmp_path / "finetune_log.jsonl").exists()


def test_finetune_rejects_mismatched_codes(toy, experiment, generator):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    with pytest.raises(ArgumentError):
        finetune_generator(generator, sequence.frames[:2], codes.style, codes.view, experiment.video, steps=0)


def test_empty_edit_rerenders_the_sequence(toy, experiment, generator, flow):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    frames = edit_sequence(generator, flow, codes.style, codes.view, codes.attributes, {})
    assert torch.equal(frames, render_batch(generator, codes.style, codes.view))

    edited = edit_sequence(generator, flow, codes.style, codes.view, codes.attributes, {"hue": 0.9})
    assert edited.shape == (4, 3, 32, 32)
    with pytest.raises(ArgumentError, match="flow"):
        edit_sequence(generator, None, codes.style, codes.view, codes.attributes, {"hue": 0.9})


def test_manifest_round_trip(toy, experiment, tmp_path):
    sequence, bundle = toy
    codes = invert_sequence(bundle, sequence.frames, experiment)
    path = write_sequence_codes(codes, tmp_path / "codes.json")
    loaded = read_sequence_codes(path)
    assert isinstance(loaded, SequenceCodes)
    assert torch.equal(loaded.style.w_geo, codes.style.w_geo)
    assert torch.equal(loaded.view.d, codes.view.d)
    assert loaded.attribute_names == codes.attribute_names
    assert loaded.metadata["coefficient_mode"] == "oracle"
    assert len(loaded.coeffs) == 4


def test_corrupt_manifests(tmp_path):
    path = tmp_path / "codes.json"
    path.write_text("not json")
    with pytest.raises(CorruptIndexError):
        read_sequence_codes(path)
    path.write_text(json.dumps({"format": "portrait-lab-video", "version": 1, "records": [{"frame": 0}]}))
    with pytest.raises(CorruptIndexError, match="malformed"):
        read_sequence_codes(path)
    with pytest.raises(CorruptIndexError):
        read_sequence_codes(tmp_path / "missing.json")
