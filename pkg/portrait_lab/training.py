"""
Adversarial training of the encoder against the frozen generator
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch

from .checkpoints import TrainingLog, guard_finite, snapshot
from .config import ExperimentConfig
from .encoder import CoefficientRegressor, PortraitEncoder, coeffs_to_inputs, extract_morph_coeffs
from .errors import ArgumentError
from .generator import NeRFGenerator, render_batch, sample_w
from .imaging import seed_everything
from .losses import LatentDiscriminator, adv_losses, get_perceptual_extractor, rec_loss
from .metrics import psnr
from .models import InversionCorpus, LossWeights, StyleCode, ViewCode
from .scene import OracleLookup


@dataclass
class EncoderTrainingResult:
    encoder: PortraitEncoder
    discriminator: Optional[LatentDiscriminator]
    log: TrainingLog
    variance_ratios: List[float] = field(default_factory=list)
    steps_run: int = 0


def corpus_inputs(images: torch.Tensor, mode: str, regressor: Optional[CoefficientRegressor] = None,
                  lookup: Optional[OracleLookup] = None,
                  scene_config=None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Coefficient inputs (g, t, c) of every image, extracted once up front"""
    coeffs = [extract_morph_coeffs(image, mode, lookup, regressor, scene_config=scene_config) for image in images]
    return coeffs_to_inputs(coeffs, scene_config)


def style_variance(w: StyleCode) -> torch.Tensor:
    """Per-dimension variance over the batch of (w_geo, w_tex), averaged"""
    return w.concat().detach().var(dim=0, unbiased=False).mean()


def train_encoder(corpus: InversionCorpus, generator: NeRFGenerator,
                  experiment: Optional[ExperimentConfig] = None,
                  regressor: Optional[CoefficientRegressor] = None,
                  lookup: Optional[OracleLookup] = None,
                  steps: Optional[int] = None,
                  use_discriminator: Optional[bool] = None,
                  real_data_only: Optional[bool] = None,
                  morph_only: Optional[bool] = None,
                  real_data: Optional[InversionCorpus] = None,
                  real_lookup: Optional[OracleLookup] = None,
                  encoder: Optional[PortraitEncoder] = None,
                  out_dir=None) -> EncoderTrainingResult:
    """
    Alternate latent-discriminator and encoder updates

    Each step: one D_w update on (style-mixed prior w, encoded w), then one
    encoder update on rec_loss + lambda_adv * loss_E. Every loss component
    and the encoded/prior variance ratio are appended to the step log.

    Args:
        corpus: Style-mixed generator samples (codes unused with real_data_only)
        generator: Frozen generator
        experiment: Experiment config
        regressor: Coefficient regressor for regressor-mode coefficients
        lookup: Oracle lookup for oracle-mode coefficients
        steps, use_discriminator, real_data_only, morph_only: Overrides of
            the inversion config section
        real_data: Extra renders without codes mixed into each batch
            (reconstruction term only)
        real_lookup: Oracle lookup for ``real_data``
        encoder: Start from this encoder instead of a fresh one
        out_dir: Where the step log and failure diagnostics go
    """
    experiment = experiment or ExperimentConfig()
    inv = experiment.inversion
    steps = inv.steps if steps is None else steps
    use_discriminator = inv.use_discriminator if use_discriminator is None else use_discriminator
    real_data_only = inv.real_data_only if real_data_only is None else real_data_only
    morph_only = inv.morph_only if morph_only is None else morph_only
    if not real_data_only and not corpus.has_codes:
        raise ArgumentError("Corpus has no ground-truth codes; train with real_data_only")

    mode = experiment.encoder.coefficient_mode
    scene_cfg = experiment.scene
    weights = LossWeights(inv.lambda_style, inv.lambda_view, inv.lambda_adv)
    extractor = get_perceptual_extractor(inv.perceptual_seed, tuple(inv.perceptual_channels))

    rng = seed_everything(experiment.seed)
    if encoder is None:
        encoder = PortraitEncoder.from_config(experiment.encoder, experiment.generator, scene_cfg, morph_only)
    encoder.morph_only = morph_only
    encoder.arch["morph_only"] = morph_only
    encoder.train()
    generator.eval()
    generator.requires_grad_(False)
    discriminator = LatentDiscriminator(experiment.generator.w_dim, inv.discriminator_hidden,
                                        inv.discriminator_layers) if use_discriminator else None

    g_all, t_all, c_all = corpus_inputs(corpus.images, mode, regressor, lookup, scene_cfg)
    real_inputs = None
    real_count = 0
    if real_data is not None and inv.real_data_fraction > 0:
        real_inputs = corpus_inputs(real_data.images, mode, regressor, real_lookup, scene_cfg)
        real_count = max(1, int(round(inv.real_data_fraction * inv.batch_size)))

    prior_rng = torch.Generator().manual_seed(experiment.seed + 7)
    prior_variance = style_variance(sample_w(generator, inv.prior_samples, prior_rng)).clamp_min(1e-12)

    def render(style: StyleCode, view: ViewCode) -> torch.Tensor:
        return generator(style, view)

    opt_e = torch.optim.Adam(encoder.parameters(), lr=inv.lr_encoder)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=inv.lr_discriminator) if discriminator else None

    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "encoder_log.jsonl" if out_dir else None)
    diagnostics_path = out_dir / "encoder" if out_dir else None
    result = EncoderTrainingResult(encoder, discriminator, log)
    last_good = snapshot(encoder)
    batch = min(inv.batch_size, len(corpus))

    for step in range(1, steps + 1):
        idx = torch.randint(0, len(corpus), (batch,), generator=rng)
        x = corpus.images[idx]
        target = None if real_data_only else (corpus.style(idx), corpus.view(idx))

        real_w = None
        loss_d = torch.zeros(())
        if discriminator is not None:
            real_w = sample_w(generator, batch, rng)
            with torch.no_grad():
                fake_w, _ = encoder(x, g_all[idx], t_all[idx], c_all[idx])
            loss_d, _ = adv_losses(discriminator, real_w, fake_w.detach())
            guard_finite({"loss_d": loss_d}, step, last_good, diagnostics_path, "encoder")
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

        encoded = encoder(x, g_all[idx], t_all[idx], c_all[idx])
        total, components = rec_loss(x, encoded, render, weights, target, real_data_only, extractor)
        loss_e = torch.zeros(())
        if discriminator is not None:
            _, loss_e = adv_losses(discriminator, real_w, encoded[0])
            total = total + weights.lambda_adv * loss_e

        if real_inputs is not None:
            ridx = torch.randint(0, len(real_data), (real_count,), generator=rng)
            rx = real_data.images[ridx]
            real_encoded = encoder(rx, real_inputs[0][ridx], real_inputs[1][ridx], real_inputs[2][ridx])
            real_total, _ = rec_loss(rx, real_encoded, render, weights, None, True, extractor)
            components["real_sim"] = real_total
            total = total + real_total

        ratio = float(style_variance(encoded[0]) / prior_variance)
        guard_finite(dict(components, total=total, loss_e=loss_e), step, last_good, diagnostics_path, "encoder")

        opt_e.zero_grad()
        total.backward()
        opt_e.step()

        result.variance_ratios.append(ratio)
        result.steps_run = step
        log.append(step, **{k: v for k, v in components.items() if k != "total"},
                   total=total, loss_d=loss_d, loss_e=loss_e, variance_ratio=ratio)

        if step % inv.log_every == 0:
            last_good = snapshot(encoder)
            logging.info(f"enc step {step}/{steps}: total={total.item():.4f} sim={components['sim'].item():.4f} "
                         f"style={components['style'].item():.4f} view={components['view'].item():.4f} "
                         f"var_ratio={ratio:.3f}")
            if discriminator is not None and ratio < inv.collapse_warn_ratio:
                logging.warning(f"Encoded style variance is {ratio:.3f} of the prior variance "
                                f"(below {inv.collapse_warn_ratio}); codes may be collapsing")

    encoder.eval()
    return result


def encode_images(encoder: PortraitEncoder, images: torch.Tensor,
                  inputs: Tuple[torch.Tensor, torch.Tensor, torch.Tensor],
                  chunk: int = 64) -> Tuple[StyleCode, ViewCode]:
    """Batched E(x) over a stack of images with pre-extracted coefficient inputs"""
    geo, tex, views = [], [], []
    with torch.no_grad():
        for start in range(0, images.shape[0], chunk):
            sl = slice(start, start + chunk)
            style, view = encoder(images[sl], inputs[0][sl], inputs[1][sl], inputs[2][sl])
            geo.append(style.w_geo)
            tex.append(style.w_tex)
            views.append(view.d)
    return StyleCode(torch.cat(geo), torch.cat(tex)), ViewCode(torch.cat(views))


def reconstruction_psnr(encoder: PortraitEncoder, generator: NeRFGenerator, images: torch.Tensor,
                        inputs: Tuple[torch.Tensor, torch.Tensor, torch.Tensor], chunk: int = 64) -> torch.Tensor:
    """Per-image PSNR of G(E(x)) against x"""
    style, view = encode_images(encoder, images, inputs, chunk)
    return psnr(images, render_batch(generator, style, view, chunk))


def encoded_variance_ratio(encoder: PortraitEncoder, generator: NeRFGenerator, images: torch.Tensor,
                           inputs: Tuple[torch.Tensor, torch.Tensor, torch.Tensor],
                           prior_samples: int = 1024, seed: int = 0) -> float:
    """Variance of encoded w over a batch relative to the prior W variance"""
    with torch.no_grad():
        style, _ = encoder(images, *inputs)
    prior = sample_w(generator, prior_samples, torch.Generator().manual_seed(seed))
    return float(style_variance(style) / style_variance(prior).clamp_min(1e-12))


def summarize_log(log: TrainingLog, keys=("sim", "style", "view", "total")) -> Dict[str, Dict[str, float]]:
    """First and last value of each loss component"""
    summary = {}
    for key in keys:
        series = log.series(key)
        if series:
            summary[key] = {"first": series[0], "last": series[-1]}
    return summary
