"""
Tests for the style-conditioned NeRF generator
"""

import math

import pytest
import torch

from portrait_lab.errors import ArgumentError, CheckpointError
from portrait_lab.generator import (
    assemble_style_tensor, camera_from_view, collapse_style_tensor, embed_view, generator_digest,
    load_generator, pretrain_generator, read_corpus, render, render_batch, sample_training_corpus,
    sample_w, save_generator, verify_corpus, volume_render_ray, write_corpus,
)
from portrait_lab.layers import ModulatedConv2d, ModulatedLinear, positional_encoding
from portrait_lab.models import StyleCode, ViewCode


def _codes(generator, count=2, seed=0):
    rng = torch.Generator().manual_seed(seed)
    style = sample_w(generator, count, rng)
    camera = torch.tensor([[0.65, 2.8]] * count)
    pose = torch.zeros(count, 3)
    return style, embed_view(camera, pose, generator.arch["d_dim"])


def test_single_slab_transmittance():
    feature, transmittance = volume_render_ray(torch.tensor([1.0]), torch.tensor([[1.0, 2.0]]), torch.tensor([1.0]))
    assert float(transmittance) == pytest.approx(math.exp(-1.0))
    assert torch.allclose(feature, (1.0 - math.exp(-1.0)) * torch.tensor([1.0, 2.0]))


def test_weights_and_transmittance_sum_to_one():
    densities = torch.tensor([0.3, 2.0, 0.0, 5.0], dtype=torch.float64)
    deltas = torch.full((4,), 0.25, dtype=torch.float64)
    ones = torch.ones(4, 1, dtype=torch.float64)
    coverage, transmittance = volume_render_ray(densities, ones, deltas)
    assert float(coverage[0] + transmittance) == pytest.approx(1.0, abs=1e-12)


def test_weights_sum_to_one_over_many_random_rays():
    rng = torch.Generator().manual_seed(3)
    densities = torch.rand(10000, 24, generator=rng, dtype=torch.float64) * 5.0
    deltas = torch.rand(10000, 24, generator=rng, dtype=torch.float64) * 0.2 + 1e-3
    coverage, transmittance = volume_render_ray(densities, torch.ones(10000, 24, 1, dtype=torch.float64), deltas)
    assert torch.allclose(coverage[:, 0] + transmittance, torch.ones(10000, dtype=torch.float64), atol=1e-6)


def test_volume_render_validates_inputs():
    with pytest.raises(ArgumentError, match="nonnegative"):
        volume_render_ray(torch.tensor([-1.0]), torch.ones(1, 1), torch.ones(1))
    with pytest.raises(ArgumentError, match="positive"):
        volume_render_ray(torch.ones(1), torch.ones(1, 1), torch.zeros(1))
    with pytest.raises(ArgumentError, match="at least one sample"):
        volume_render_ray(torch.ones(0), torch.ones(0, 1), torch.ones(0))


def test_volume_render_gradients_in_float64():
    densities = torch.tensor([0.4, 1.3, 0.7], dtype=torch.float64, requires_grad=True)
    features = torch.rand(3, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(1), requires_grad=True)
    deltas = torch.full((3,), 0.3, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda s, f: volume_render_ray(s, f, deltas)[0], (densities, features))


def test_modulated_layers_gradients_in_float64():
    torch.manual_seed(0)
    linear = ModulatedLinear(4, 3, 5).double()
    conv = ModulatedConv2d(2, 3, 5).double()
    w = torch.randn(2, 5, dtype=torch.float64, requires_grad=True)
    x = torch.randn(2, 6, 4, dtype=torch.float64, requires_grad=True)
    image = torch.randn(2, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(linear, (x, w))
    assert torch.autograd.gradcheck(conv, (image, w))


def test_positional_encoding_width():
    assert positional_encoding(torch.zeros(5, 3), 4).shape == (5, 3 * (1 + 2 * 4))


def test_style_tensor_layout_and_collapse():
    w = StyleCode(torch.randn(2, 16), torch.randn(2, 16))
    ws = assemble_style_tensor(w, 21, 7)
    assert ws.shape == (2, 21, 16)
    assert torch.equal(ws[:, 6], w.w_geo) and torch.equal(ws[:, 7], w.w_tex)
    back = collapse_style_tensor(ws, 7)
    assert torch.equal(back.w_geo, w.w_geo) and torch.equal(back.w_tex, w.w_tex)


def test_view_code_carries_the_camera():
    d = embed_view(torch.tensor([0.6, 2.7]), torch.tensor([0.2, -0.1, 0.05]))
    assert d.d.shape == (16,)
    assert torch.allclose(d.d[:5], torch.tensor([0.6, 2.7, 0.2, -0.1, 0.05]))
    assert float(d.d[15]) == 1.0


def test_camera_at_yaw_pi_sits_behind_the_head():
    d = embed_view(torch.tensor([0.6, 3.0], dtype=torch.float64), torch.tensor([math.pi, 0.0, 0.0],
                                                                              dtype=torch.float64))
    origin, _, _ = camera_from_view(d.d)
    assert torch.allclose(origin[0], torch.tensor([0.0, 0.0, -3.0], dtype=torch.float64), atol=1e-12)


def test_render_shapes_and_range(generator):
    style, view = _codes(generator)
    with torch.no_grad():
        images = render(generator, style, view)
        single = render(generator, style[0], view[0])
    assert images.shape == (2, 3, 32, 32)
    assert single.shape == (3, 32, 32)
    assert float(images.min()) >= 0.0 and float(images.max()) <= 1.0
    assert torch.allclose(single, images[0], atol=1e-5)


def test_render_at_lower_resolution(generator):
    style, view = _codes(generator)
    with torch.no_grad():
        assert render(generator, style, view, resolution=16).shape == (2, 3, 16, 16)
    with pytest.raises(ArgumentError, match="power-of-two"):
        render(generator, style, view, resolution=24)


def test_render_rejects_missing_generator_and_nan_codes(generator):
    style, view = _codes(generator)
    with pytest.raises(CheckpointError):
        render(None, style, view)
    bad = StyleCode(style.w_geo.clone(), style.w_tex.clone())
    bad.w_geo[0, 0] = float("nan")
    with pytest.raises(ArgumentError, match="finite"):
        render(generator, bad, view)


def test_geometry_code_controls_density_only(generator):
    style, view = _codes(generator)
    other = StyleCode(style.w_geo, torch.randn_like(style.w_tex))
    with torch.no_grad():
        a = render(generator, style, view, return_output=True)
        b = render(generator, other, view, return_output=True)
    assert torch.equal(a.densities, b.densities)
    assert not torch.equal(a.image, b.image)


def test_render_batch_is_chunk_independent(generator):
    style, view = _codes(generator, count=5)
    a = render_batch(generator, style, view, chunk=2)
    b = render_batch(generator, style, view, chunk=5)
    assert torch.allclose(a, b, atol=1e-5)


def test_checkpoint_round_trip(generator, tmp_path):
    path = save_generator(generator, tmp_path / "gen.pt", {"seed": 3})
    loaded = load_generator(path)
    assert generator_digest(loaded) == generator_digest(generator)
    assert loaded.metadata["seed"] == 3
    assert not any(p.requires_grad for p in loaded.parameters())


def test_corpus_re_renders_bitwise(generator, experiment, tmp_path):
    corpus = sample_training_corpus(generator, 6, 5, experiment.scene, render_chunk=4)
    assert corpus.images.shape == (6, 3, 32, 32)
    assert torch.equal(corpus.images, torch.round(corpus.images * 255) / 255)
    assert verify_corpus(generator, corpus) == 0

    write_corpus(corpus, tmp_path / "corpus", metadata={"seed": 5})
    loaded = read_corpus(tmp_path / "corpus")
    assert torch.equal(loaded.images, corpus.images)
    assert torch.equal(loaded.w_geo, corpus.w_geo)
    assert loaded.render_batch == 4
    assert verify_corpus(generator, loaded) == 0


def test_corpus_codes_are_style_mixed(generator, experiment):
    corpus = sample_training_corpus(generator, 4, 1, experiment.scene)
    assert not torch.equal(corpus.w_geo, corpus.w_tex)


def test_pretraining_runs_and_logs(dataset, experiment, tmp_path):
    result = pretrain_generator(dataset, experiment, steps=2, out_dir=tmp_path)
    assert result.steps_run == 2
    assert len(result.fid_history) == 1
    assert (tmp_path / "generator_log.jsonl").exists()
    assert result.metadata()["steps_run"] == 2


def test_pretraining_rejects_resolution_mismatch(dataset, experiment):
    experiment.generator.output_resolution = 16
    with pytest.raises(ArgumentError, match="resolution"):
        pretrain_generator(dataset, experiment, steps=1)
