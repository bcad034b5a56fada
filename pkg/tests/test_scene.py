"""
Tests for the procedural portrait world
"""

import numpy as np
import pytest
import torch

from portrait_lab.config import SceneConfig
from portrait_lab.errors import ArgumentError, UnknownImageError
from portrait_lab.imaging import quantize
from portrait_lab.models import MorphCoeffs, SceneSpec
from portrait_lab.scene import (
    OracleLookup, attribute_oracle, attribute_oracle_batch, denormalize_block, normalize_block,
    render_reference, rotation_matrix, sample_scene_coeffs,
)


@pytest.fixture
def scene_config():
    config = SceneConfig()
    config.render_samples = 16
    return config


def test_sampling_is_deterministic(scene_config):
    a = sample_scene_coeffs(4, 6, 3, scene_config)
    b = sample_scene_coeffs(4, 6, 3, scene_config)
    for x, y in zip(a, b):
        assert np.array_equal(x.coeffs.to_vector(), y.coeffs.to_vector())
        assert x.identity_id == y.identity_id


def test_identities_share_beta_and_albedo(scene_config):
    specs = sample_scene_coeffs(0, 20, 3, scene_config)
    assert [s.identity_id for s in specs[:3]] == [0, 1, 2]
    for spec in specs:
        first = specs[spec.identity_id]
        assert np.array_equal(spec.coeffs.beta, first.coeffs.beta)
        assert np.array_equal(spec.coeffs.albedo, first.coeffs.albedo)


def test_samples_stay_in_range(scene_config):
    for spec in sample_scene_coeffs(1, 30, 5, scene_config):
        for block in ("beta", "psi", "albedo", "camera", "pose"):
            normalized = normalize_block(getattr(spec.coeffs, block), scene_config, block)
            assert np.all(normalized >= -1.0) and np.all(normalized <= 1.0)


def test_sampling_rejects_bad_counts(scene_config):
    with pytest.raises(ArgumentError):
        sample_scene_coeffs(0, 0, 1, scene_config)
    with pytest.raises(ArgumentError):
        sample_scene_coeffs(0, 3, 4, scene_config)


def test_normalize_round_trip(scene_config):
    values = np.array([0.6, 2.8])
    back = denormalize_block(normalize_block(values, scene_config, "camera"), scene_config, "camera")
    assert np.allclose(back, values)


def test_rotation_is_orthonormal_and_yaw_pi_faces_away():
    r = rotation_matrix(0.3, -0.2, 0.05)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)
    flipped = rotation_matrix(np.pi, 0.0, 0.0)
    assert np.allclose(flipped @ np.array([0.0, 0.0, 1.0]), [0.0, 0.0, -1.0], atol=1e-12)


def test_render_is_pure_and_in_range(scene_config):
    spec = sample_scene_coeffs(2, 1, 1, scene_config)[0]
    a = render_reference(spec, 32, scene_config)
    b = render_reference(spec, 32, scene_config)
    assert a.shape == (3, 32, 32)
    assert a.dtype == torch.float32
    assert torch.equal(a, b)
    assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0


def test_head_covers_the_image_centre(scene_config):
    spec = sample_scene_coeffs(5, 1, 1, scene_config)[0]
    _, coverage = render_reference(spec, 32, scene_config, return_alpha=True)
    assert float(coverage[16, 16]) > 0.9
    assert float(coverage[0, 0]) < 0.1


def test_render_rejects_unsupported_resolution(scene_config):
    spec = sample_scene_coeffs(2, 1, 1, scene_config)[0]
    with pytest.raises(ArgumentError, match="resolution"):
        render_reference(spec, 48, scene_config)


def test_render_rejects_wrong_block_length(scene_config):
    spec = sample_scene_coeffs(2, 1, 1, scene_config)[0]
    broken = SceneSpec(coeffs=spec.coeffs.replace(beta=np.zeros(3)))
    with pytest.raises(ArgumentError, match="beta"):
        render_reference(broken, 32, scene_config)


def test_small_perturbation_changes_few_pixel_values(scene_config):
    spec = sample_scene_coeffs(8, 1, 1, scene_config)[0]
    beta = spec.coeffs.beta.copy()
    beta[1] += 1e-3
    nudged = SceneSpec(coeffs=spec.coeffs.replace(beta=beta))
    delta = (render_reference(spec, 32, scene_config) - render_reference(nudged, 32, scene_config)).abs().max()
    assert float(delta) <= scene_config.smoothness_max_delta


def test_oracle_matches_its_formulas(scene_config):
    spec = sample_scene_coeffs(9, 1, 1, scene_config)[0]
    attrs = attribute_oracle(spec, scene_config)
    b = normalize_block(spec.coeffs.beta, scene_config, "beta")
    n = normalize_block(spec.coeffs.albedo, scene_config, "albedo")
    ln = normalize_block(spec.coeffs.light, scene_config, "light")
    assert attrs["elongation"] == pytest.approx(np.clip(0.5 + 0.5 * (0.7 * b[1] - 0.3 * b[0]), 0, 1))
    assert attrs["feature_size"] == pytest.approx(np.clip(0.5 + 0.5 * (0.6 * b[4] + 0.4 * b[5]), 0, 1))
    assert attrs["hue"] == pytest.approx(np.clip(0.5 + 0.25 * (n[0] - n[2]), 0, 1))
    assert attrs["light_elevation"] == pytest.approx(np.clip(0.5 + 0.5 * ln[1], 0, 1))


def test_geometry_attributes_ignore_texture(scene_config):
    spec = sample_scene_coeffs(9, 1, 1, scene_config)[0]
    recoloured = SceneSpec(coeffs=spec.coeffs.replace(albedo=np.full(6, 0.5), light=np.zeros(3)))
    a, b = attribute_oracle(spec, scene_config), attribute_oracle(recoloured, scene_config)
    assert a["elongation"] == b["elongation"]
    assert a["feature_size"] == b["feature_size"]


def test_oracle_batch_stacks_rows(scene_config):
    specs = sample_scene_coeffs(3, 4, 2, scene_config)
    batch = attribute_oracle_batch([s.coeffs for s in specs], scene_config)
    assert batch.shape == (4, 4)
    assert torch.allclose(batch[2], attribute_oracle(specs[2], scene_config).to_tensor())


def test_lookup_finds_registered_images(scene_config):
    spec = sample_scene_coeffs(6, 1, 1, scene_config)[0]
    image = quantize(render_reference(spec, 32, scene_config))
    lookup = OracleLookup()
    lookup.register(image, spec)
    assert image in lookup
    assert lookup.lookup(image) is spec
    with pytest.raises(UnknownImageError):
        lookup.lookup(torch.zeros(3, 32, 32))


def test_pose_outside_pi_is_rejected():
    coeffs = MorphCoeffs(beta=np.zeros(8), psi=np.zeros(4), delta=np.zeros(4), albedo=np.full(6, 0.5),
                         light=np.zeros(3), camera=np.array([0.6, 2.8]), pose=np.array([4.0, 0.0, 0.0]))
    with pytest.raises(ArgumentError, match="pi"):
        coeffs.validate(SceneConfig().dims)
