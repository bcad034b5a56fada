"""
Tests for the latent adversarial and reconstruction losses
"""

import math

import pytest
import torch

from portrait_lab.errors import ArgumentError
from portrait_lab.losses import (
    LatentDiscriminator, adv_losses, get_perceptual_extractor, perceptual_distance, rec_loss,
)
from portrait_lab.models import LossWeights, StyleCode, ViewCode


def test_zero_logit_discriminator_gives_two_log_two():
    def critic(w):
        return torch.zeros(w.shape[0])

    loss_d, loss_e = adv_losses(critic, torch.randn(4, 8), torch.randn(4, 8))
    assert float(loss_d) == pytest.approx(2.0 * math.log(2.0))
    assert float(loss_e) == pytest.approx(math.log(2.0))


def test_latent_discriminator_accepts_style_codes():
    critic = LatentDiscriminator(8, hidden=16, num_layers=3)
    style = StyleCode(torch.randn(5, 8), torch.randn(5, 8))
    assert critic(style).shape == (5,)
    assert torch.equal(critic(style), critic(style.concat()))


def test_perceptual_distance_is_zero_on_identical_images():
    x = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    assert float(perceptual_distance(x, x)) == 0.0
    assert float(perceptual_distance(x, 1.0 - x)) > 0.0


def test_perceptual_distance_is_symmetric():
    rng = torch.Generator().manual_seed(1)
    x = torch.rand(3, 3, 32, 32, generator=rng)
    y = torch.rand(3, 3, 32, 32, generator=rng)
    assert torch.equal(perceptual_distance(x, y, reduction="none"), perceptual_distance(y, x, reduction="none"))


def test_perceptual_distance_grows_with_noise():
    rng = torch.Generator().manual_seed(2)
    x = torch.rand(3, 32, 32, generator=rng)
    noise = torch.randn(3, 32, 32, generator=rng)
    distances = [float(perceptual_distance(x, x + scale * noise)) for scale in (0.01, 0.05, 0.1, 0.2, 0.4)]
    assert all(a < b for a, b in zip(distances, distances[1:])), distances


def test_perceptual_extractor_is_seeded_and_frozen():
    a = get_perceptual_extractor(7, (4, 8))
    b = get_perceptual_extractor(7, (4, 8))
    assert a is b
    assert not any(p.requires_grad for p in a.parameters())
    fresh = type(a)((4, 8), 7)
    assert torch.equal(fresh.weight0, a.weight0)


def test_perceptual_distance_rejects_shape_mismatch():
    with pytest.raises(ArgumentError):
        perceptual_distance(torch.zeros(3, 8, 8), torch.zeros(3, 4, 4))


def _constant_renderer(value):
    def render(style, view):
        return torch.full((style.w_geo.shape[0], 3, 4, 4), value)
    return render


def test_rec_loss_by_hand():
    weights = LossWeights(lambda_style=0.5, lambda_view=5.0, lambda_adv=0.1)
    x = torch.zeros(1, 3, 4, 4)
    encoded = (StyleCode(torch.tensor([[1.0, 2.0]]), torch.tensor([[0.0, -1.0]])), ViewCode(torch.tensor([[0.5]])))
    target = (StyleCode(torch.zeros(1, 2), torch.zeros(1, 2)), ViewCode(torch.zeros(1, 1)))
    extractor = get_perceptual_extractor(1234, (4, 8))

    total, parts = rec_loss(x, encoded, _constant_renderer(0.5), weights, target, extractor=extractor)

    # ||x - G||_2 over 48 values of 0.5
    assert float(parts["l2"]) == pytest.approx(math.sqrt(48 * 0.25))
    assert float(parts["style"]) == pytest.approx(4.0)
    assert float(parts["view"]) == pytest.approx(0.5)
    expected = float(parts["l2"] + parts["perceptual"]) + 0.5 * 4.0 + 5.0 * 0.5
    assert float(total) == pytest.approx(expected)


def test_rec_loss_real_data_only_drops_code_terms():
    weights = LossWeights()
    x = torch.zeros(2, 3, 4, 4)
    encoded = (StyleCode(torch.ones(2, 2), torch.ones(2, 2)), ViewCode(torch.ones(2, 1)))
    total, parts = rec_loss(x, encoded, _constant_renderer(0.0), weights, None, real_data_only=True)
    assert float(parts["style"]) == 0.0 and float(parts["view"]) == 0.0
    assert float(total) == 0.0


def test_rec_loss_needs_targets_for_supervised_training():
    encoded = (StyleCode(torch.ones(1, 2), torch.ones(1, 2)), ViewCode(torch.ones(1, 1)))
    with pytest.raises(ArgumentError, match="Ground-truth"):
        rec_loss(torch.zeros(1, 3, 4, 4), encoded, _constant_renderer(0.0), LossWeights())


def test_negative_weights_are_rejected():
    with pytest.raises(ArgumentError):
        LossWeights(lambda_style=-1.0)
