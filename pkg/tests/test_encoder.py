"""
Tests for the 3D-aware encoder and the coefficient regressor
"""

import numpy as np
import pytest
import torch

from portrait_lab.encoder import (
    EncoderBundle, MappingMLP, PortraitEncoder, coeffs_from_normalized, coeffs_to_inputs, encode,
    extract_morph_coeffs, load_encoder, load_regressor, map_morph_to_codes, normalized_coeff_vector,
    save_encoder, save_regressor, train_regressor,
)
from portrait_lab.errors import ArgumentError, CheckpointError, UnknownImageError, UntrainedModelError
from portrait_lab.scene import make_oracle_lookup


def test_default_mapping_layer_counts(experiment):
    experiment.encoder.mapping_layers = 5
    experiment.encoder.camera_layers = 3
    encoder = PortraitEncoder.from_config(experiment.encoder, experiment.generator, experiment.scene)
    assert (encoder.m_geo.num_layers, encoder.m_tex.num_layers, encoder.m_cam.num_layers) == (5, 5, 3)


def test_mapping_rejects_wrong_width():
    mlp = MappingMLP(4, 8, hidden=8, num_layers=2)
    with pytest.raises(ArgumentError, match="expected 4"):
        mlp(torch.zeros(1, 5))


def test_inputs_are_normalized_blocks(dataset, experiment):
    coeffs = dataset.specs[0].coeffs
    g, t, c = coeffs_to_inputs(coeffs, experiment.scene)
    assert g.shape == (16,) and t.shape == (9,) and c.shape == (5,)
    assert float(g.abs().max()) <= 1.0 and float(t.abs().max()) <= 1.0
    batch = coeffs_to_inputs([s.coeffs for s in dataset.specs[:3]], experiment.scene)
    assert batch[0].shape == (3, 16)


def test_normalized_vector_round_trip(dataset, experiment):
    coeffs = dataset.specs[4].coeffs
    back = coeffs_from_normalized(normalized_coeff_vector(coeffs, experiment.scene), experiment.scene)
    assert np.allclose(back.to_vector(), coeffs.to_vector())


def test_oracle_mode_returns_exact_coefficients(dataset):
    lookup = make_oracle_lookup(dataset)
    coeffs = extract_morph_coeffs(dataset.image(3), "oracle", lookup)
    assert np.array_equal(coeffs.to_vector(), dataset.specs[3].coeffs.to_vector())
    assert coeffs is not dataset.specs[3].coeffs


def test_overrides_replace_blocks(dataset):
    lookup = make_oracle_lookup(dataset)
    coeffs = extract_morph_coeffs(dataset.image(0), "oracle", lookup, overrides={"beta": np.zeros(8)})
    assert np.array_equal(coeffs.beta, np.zeros(8))
    with pytest.raises(ArgumentError, match="Unknown coefficient blocks"):
        extract_morph_coeffs(dataset.image(0), "oracle", lookup, overrides={"hair": np.zeros(2)})


def test_extraction_errors(dataset):
    with pytest.raises(ArgumentError, match="oracle lookup"):
        extract_morph_coeffs(dataset.image(0), "oracle")
    with pytest.raises(UntrainedModelError):
        extract_morph_coeffs(dataset.image(0), "regressor")
    with pytest.raises(ArgumentError, match="Unknown coefficient mode"):
        extract_morph_coeffs(dataset.image(0), "guess")
    with pytest.raises(UnknownImageError):
        extract_morph_coeffs(torch.zeros(3, 32, 32), "oracle", make_oracle_lookup(dataset))


def test_encode_sums_morph_and_detail_codes(encoder, dataset, experiment):
    lookup = make_oracle_lookup(dataset)
    image = dataset.image(1)
    with torch.no_grad():
        style, view = encode(encoder, image, "oracle", lookup, scene_config=experiment.scene)
        morph = map_morph_to_codes(encoder, dataset.specs[1].coeffs, experiment.scene)
        detail = encoder.details(image.unsqueeze(0))
    assert style.w_geo.shape == (16,) and view.d.shape == (16,)
    assert torch.allclose(style.w_geo, morph.w_geo_morph + detail.delta_geo[0], atol=1e-6)
    assert torch.allclose(view.d, morph.d.d)


def test_zero_details_leave_morph_codes(encoder, dataset, experiment):
    encoder.zero_details()
    bundle = EncoderBundle(encoder, None, make_oracle_lookup(dataset), experiment.scene)
    style, _ = bundle.encode(dataset.image(2), "oracle")
    morph = map_morph_to_codes(encoder, dataset.specs[2].coeffs, experiment.scene)
    assert torch.allclose(style.w_geo, morph.w_geo_morph.detach())


def test_morph_only_disables_details(experiment, dataset):
    encoder = PortraitEncoder.from_config(experiment.encoder, experiment.generator, experiment.scene, morph_only=True)
    detail = encoder.details(dataset.images([0, 1]))
    assert torch.equal(detail.delta_geo, torch.zeros(2, 16))


def test_encoder_rejects_wrong_resolution(encoder):
    with pytest.raises(ArgumentError, match="32x32"):
        encoder.details(torch.zeros(1, 3, 16, 16))


def test_block_length_mismatch_is_rejected(encoder, dataset, experiment):
    coeffs = dataset.specs[0].coeffs.replace(psi=np.zeros(6))
    with pytest.raises(ArgumentError, match="psi"):
        map_morph_to_codes(encoder, coeffs, experiment.scene)


def test_regressor_trains_and_round_trips(dataset, experiment, tmp_path):
    regressor, metrics = train_regressor(dataset, experiment, steps=3, out_dir=tmp_path)
    assert regressor.trained
    assert set(metrics) >= {"beta_mae", "coeff_mae"}
    assert (tmp_path / "regressor_log.jsonl").exists()

    coeffs = regressor.predict_coeffs(dataset.image(0), experiment.scene)
    assert np.all(np.abs(coeffs.pose) <= np.pi)

    save_regressor(regressor, tmp_path / "reg.pt")
    loaded = load_regressor(tmp_path / "reg.pt")
    assert loaded.trained
    assert torch.allclose(loaded.predict_normalized(dataset.image(0)), regressor.predict_normalized(dataset.image(0)))


def test_encoder_checkpoint_round_trip(encoder, tmp_path, dataset):
    save_encoder(encoder, tmp_path / "enc.pt", {"steps_run": 0})
    loaded = load_encoder(tmp_path / "enc.pt")
    image = dataset.images([0])
    with torch.no_grad():
        assert torch.equal(loaded.details(image).delta_tex, encoder.details(image).delta_tex)


def test_kind_mismatch_is_a_checkpoint_error(encoder, tmp_path):
    save_encoder(encoder, tmp_path / "enc.pt")
    with pytest.raises(CheckpointError, match="expected 'regressor'"):
        load_regressor(tmp_path / "enc.pt")


def test_mapping_gradients_in_float64():
    torch.manual_seed(0)
    mlp = MappingMLP(4, 3, hidden=5, num_layers=3).double()
    x = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(mlp, (x,))
