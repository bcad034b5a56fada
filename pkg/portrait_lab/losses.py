"""
Losses for encoder training: latent adversarial terms, reconstruction
objective and a fixed perceptual feature distance
"""

import math
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArgumentError
from .models import LossWeights, StyleCode, ViewCode


class PerceptualFeatures(nn.Module):
    """
    Frozen, seeded, randomly initialized conv feature pyramid

    Stands in for a pretrained perceptual network: the distance between two
    images is measured on its multi-layer feature maps.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 32), seed: int = 1234):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        in_channels = 3
        for i, out_channels in enumerate(channels):
            fan_in = in_channels * 9
            weight = torch.randn(out_channels, in_channels, 3, 3, generator=generator) * math.sqrt(2.0 / fan_in)
            self.register_buffer(f"weight{i}", weight)
            in_channels = out_channels
        self.num_layers = len(channels)

    def forward(self, x: torch.Tensor):
        features = []
        h = x * 2.0 - 1.0
        for i in range(self.num_layers):
            weight = getattr(self, f"weight{i}").to(dtype=h.dtype, device=h.device)
            stride = 1 if i == 0 else 2
            h = torch.tanh(F.conv2d(h, weight, stride=stride, padding=1))
            features.append(h)
        return features


@lru_cache(maxsize=8)
def get_perceptual_extractor(seed: int = 1234, channels: Tuple[int, ...] = (8, 16, 32)) -> PerceptualFeatures:
    extractor = PerceptualFeatures(channels, seed)
    extractor.requires_grad_(False)
    return extractor


def perceptual_distance(x: torch.Tensor, y: torch.Tensor,
                        extractor: Optional[PerceptualFeatures] = None,
                        reduction: str = "mean") -> torch.Tensor:
    """
    Sum over layers of the L2 distance between feature maps, each divided by
    the square root of the layer size

    Args:
        x, y: (3, H, W) or (B, 3, H, W) images in [0, 1]
        extractor: Feature pyramid (default: the seeded shared one)
        reduction: "mean" over the batch or "none" for per-sample values
    """
    if x.shape != y.shape:
        raise ArgumentError(f"Shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.ndim == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    extractor = extractor or get_perceptual_extractor()
    distance = x.new_zeros(x.shape[0])
    for fx, fy in zip(extractor(x), extractor(y)):
        diff = (fx - fy).flatten(1)
        distance = distance + torch.linalg.vector_norm(diff, dim=1) / math.sqrt(diff.shape[1])
    return distance.mean() if reduction == "mean" else distance


class LatentDiscriminator(nn.Module):
    """Fully connected critic on concatenated (w_geo, w_tex)"""

    def __init__(self, w_dim: int, hidden: int = 128, num_layers: int = 3, slope: float = 0.2):
        super().__init__()
        layers = []
        in_dim = 2 * w_dim
        for i in range(num_layers - 1):
            layers += [nn.Linear(in_dim, hidden), nn.LeakyReLU(slope)]
            in_dim = hidden
        layers.append(nn.Linear(in_dim, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, w) -> torch.Tensor:
        if isinstance(w, StyleCode):
            w = w.concat()
        return self.net(w).squeeze(-1)


def adv_losses(discriminator: Callable, real_w, fake_w) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Non-saturating latent adversarial losses

    loss_D = -mean log D(real) - mean log(1 - D(fake))
    loss_E = -mean log D(fake)

    with D = sigmoid(logit), evaluated as softplus of the logits.
    """
    real_logits = discriminator(real_w)
    fake_logits = discriminator(fake_w)
    loss_d = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    loss_e = F.softplus(-fake_logits).mean()
    return loss_d, loss_e


def rec_loss(x: torch.Tensor, encoded: Tuple[StyleCode, ViewCode], generator: Callable,
             weights: LossWeights, target: Optional[Tuple[StyleCode, ViewCode]] = None,
             real_data_only: bool = False,
             extractor: Optional[PerceptualFeatures] = None) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    Reconstruction objective of the encoder

        L_sim   = ||x - G(w, d)||_2 + perceptual(x, G(w, d))
        L_style = ||w_geo - w_geo_gt||_1 + ||w_tex - w_tex_gt||_1
        L_view  = ||d - d_gt||_1
        total   = L_sim + lambda_style * L_style + lambda_view * L_view

    Every norm is per sample, then averaged over the batch.

    Args:
        x: (B, 3, H, W) target images
        encoded: Encoder outputs (StyleCode, ViewCode)
        generator: Callable (StyleCode, ViewCode) -> (B, 3, H, W)
        weights: Loss weights
        target: Ground-truth (StyleCode, ViewCode); required unless real_data_only
        real_data_only: Supervise with L_sim only

    Returns:
        total, dict of components (l2, perceptual, sim, style, view, total)
    """
    style, view = encoded
    reconstruction = generator(style, view)
    l2 = torch.linalg.vector_norm((x - reconstruction).flatten(1), dim=1).mean()
    perceptual = perceptual_distance(x, reconstruction, extractor)
    sim = l2 + perceptual

    if real_data_only:
        zero = sim.new_zeros(())
        style_term, view_term = zero, zero
    else:
        if target is None:
            raise ArgumentError("Ground-truth codes are required unless training on real data only")
        gt_style, gt_view = target
        style_term = ((style.w_geo - gt_style.w_geo).abs().sum(-1)
                      + (style.w_tex - gt_style.w_tex).abs().sum(-1)).mean()
        view_term = (view.d - gt_view.d).abs().sum(-1).mean()

    total = sim + weights.lambda_style * style_term + weights.lambda_view * view_term
    components = {
        "l2": l2,
        "perceptual": perceptual,
        "sim": sim,
        "style": style_term,
        "view": view_term,
        "total": total,
    }
    return total, components
