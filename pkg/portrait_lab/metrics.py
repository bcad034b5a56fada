"""
Quality, identity and attribute-consistency metrics
"""

import math
from typing import Any, Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg

from . import __version__
from .errors import ArgumentError, UntrainedModelError
from .losses import PerceptualFeatures, get_perceptual_extractor
from .models import MetricReport
from .predictor import predict_attributes

PSNR_CAP = 99.0


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ArgumentError(f"Shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def psnr(x: torch.Tensor, y: torch.Tensor, cap: float = PSNR_CAP):
    """
    Peak signal-to-noise ratio at unit data range

    Identical images score ``cap``. A (3, H, W) pair returns a float, a
    batch returns a (B,) tensor.
    """
    _check_pair(x, y)
    single = x.ndim == 3
    if single:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    mse = (x.double() - y.double()).pow(2).flatten(1).mean(dim=1)
    values = torch.where(mse > 0, -10.0 * torch.log10(mse.clamp_min(1e-300)), torch.full_like(mse, cap))
    values = values.clamp(max=cap)
    return float(values[0]) if single else values


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(x: torch.Tensor, y: torch.Tensor, window: int = 7, sigma: float = 1.5):
    """
    Structural similarity with a Gaussian window, computed per channel over
    valid positions and averaged; stabilizers C1 = 0.01^2, C2 = 0.03^2
    """
    _check_pair(x, y)
    single = x.ndim == 3
    if single:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if x.shape[-1] < window or x.shape[-2] < window:
        raise ArgumentError(f"Images of size {tuple(x.shape[-2:])} are smaller than the {window}x{window} window")

    x, y = x.double(), y.double()
    channels = x.shape[1]
    kernel = _gaussian_window(window, sigma, x.dtype).to(x.device)
    kernel = kernel.expand(channels, 1, window, window).contiguous()

    def blur(t):
        return F.conv2d(t, kernel, groups=channels)

    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_x, mu_y = blur(x), blur(y)
    sigma_xx = blur(x * x) - mu_x * mu_x
    sigma_yy = blur(y * y) - mu_y * mu_y
    sigma_xy = blur(x * y) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_xx + sigma_yy + c2)
    values = (numerator / denominator).flatten(1).mean(dim=1)
    return float(values[0]) if single else values


def identity_score(regressor, img1: torch.Tensor, img2: torch.Tensor):
    """
    Cosine similarity of the shape coefficients a trained regressor predicts
    for two images (a proxy for a face-recognition embedding)
    """
    if regressor is None or not getattr(regressor, "trained", False):
        raise UntrainedModelError("identity_score needs a trained coefficient regressor")
    _check_pair(img1, img2)
    single = img1.ndim == 3
    if single:
        img1, img2 = img1.unsqueeze(0), img2.unsqueeze(0)
    with torch.no_grad():
        a = regressor.predict_normalized(img1)[:, :regressor.dims["beta"]].double()
        b = regressor.predict_normalized(img2)[:, :regressor.dims["beta"]].double()
    cosine = (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(1e-12)
    cosine = cosine.clamp(-1.0, 1.0)
    return float(cosine[0]) if single else cosine


def attribute_inconsistency_from_predictions(predictions: torch.Tensor) -> float:
    """Mean over frames i >= 2 and components of |a_i - a_1|"""
    if predictions.ndim != 2 or predictions.shape[0] < 2:
        raise ArgumentError("Attribute inconsistency needs predictions for at least two frames")
    predictions = predictions.double()
    return float((predictions[1:] - predictions[0:1]).abs().mean())


def attribute_inconsistency(frames: torch.Tensor, predictor) -> float:
    """
    Temporal attribute inconsistency of a frame sequence, anchored to the
    first frame

    Args:
        frames: (T, 3, H, W) with T >= 2
        predictor: Trained attribute predictor
    """
    if frames.shape[0] < 2:
        raise ArgumentError("Attribute inconsistency needs at least two frames")
    return attribute_inconsistency_from_predictions(predict_attributes(predictor, frames))


def pooled_features(images: torch.Tensor, extractor: Optional[PerceptualFeatures] = None) -> np.ndarray:
    extractor = extractor or get_perceptual_extractor()
    with torch.no_grad():
        pooled = [f.mean(dim=(2, 3)) for f in extractor(images.float())]
    return torch.cat(pooled, dim=1).double().cpu().numpy()


def fid_proxy(real: torch.Tensor, fake: torch.Tensor,
              extractor: Optional[PerceptualFeatures] = None) -> float:
    """Frechet distance between pooled perceptual features of two image batches"""
    f_real = pooled_features(real, extractor)
    f_fake = pooled_features(fake, extractor)
    mu_r, mu_f = f_real.mean(axis=0), f_fake.mean(axis=0)
    cov_r = np.cov(f_real, rowvar=False)
    cov_f = np.cov(f_fake, rowvar=False)
    covmean, _ = linalg.sqrtm(cov_r @ cov_f, disp=False)
    covmean = np.real(covmean)
    distance = float(np.sum((mu_r - mu_f) ** 2) + np.trace(cov_r + cov_f - 2.0 * covmean))
    return max(distance, 0.0)


def build_report(per_sample: Dict[str, List[float]], config_hash: str,
                 checkpoint_hashes: Dict[str, str], seed: int,
                 extra: Optional[Dict[str, Any]] = None) -> MetricReport:
    """Assemble a self-describing MetricReport"""
    report = MetricReport()
    for metric in sorted(per_sample):
        report.add(metric, per_sample[metric])
    report.metadata = {
        "config_hash": config_hash,
        "checkpoint_hashes": dict(sorted(checkpoint_hashes.items())),
        "seed": seed,
        "code_version": __version__,
    }
    report.metadata.update(extra or {})
    return report


def summarize_psnr_gain(before: List[float], after: List[float]) -> float:
    """Mean dB improvement, used by the fine-tuning report"""
    return float(np.mean(after) - np.mean(before)) if before else math.nan
