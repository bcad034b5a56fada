"""
Style-conditioned NeRF generator

Rays are cast under a view code, a style-modulated MLP predicts density and
features at 3D samples, volume rendering produces a low-resolution feature
map and a modulated 2D upsampler turns it into the output image. The first
``geometry_layers`` style rows feed the 3D path (w_geo), the remaining rows
the 2D path (w_tex).
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoints import (TrainingLog, guard_finite, load_checkpoint, save_checkpoint,
                          snapshot, state_digest)
from .config import ExperimentConfig, GeneratorConfig, SceneConfig
from .dataset import read_index, write_records
from .errors import ArgumentError, CheckpointError, CorruptIndexError
from .imaging import load_png, quantize, seed_everything
from .layers import MappingNetwork, ModulatedConv2d, ModulatedLinear, positional_encoding
from .models import InversionCorpus, StyleCode, ViewCode

ARCH_FIELDS = (
    "z_dim", "w_dim", "d_dim", "mapping_layers", "num_style_layers", "geometry_layers",
    "nerf_resolution", "output_resolution", "samples_per_ray", "ray_half_depth", "hidden",
    "feature_channels", "upsample_channels", "positional_freqs", "density_scale",
)

VIEW_FEATURES = 16


def generator_arch(gen_config: GeneratorConfig) -> Dict[str, Any]:
    return {name: getattr(gen_config, name) for name in ARCH_FIELDS}


# ---------------------------------------------------------------------------
# Style tensor layout
# ---------------------------------------------------------------------------

def assemble_style_tensor(w: StyleCode, num_layers: int = 21, geometry_layers: int = 7) -> torch.Tensor:
    """
    Expand (w_geo, w_tex) to the per-layer style tensor

    Rows ``0 .. geometry_layers-1`` are w_geo and the rest are w_tex.

    Returns:
        (num_layers, D_w) for unbatched codes, (B, num_layers, D_w) otherwise
    """
    if not 0 < geometry_layers < num_layers:
        raise ArgumentError(f"geometry_layers must lie in (0, {num_layers})")
    geo = w.w_geo.unsqueeze(-2).expand(*w.w_geo.shape[:-1], geometry_layers, w.w_geo.shape[-1])
    tex = w.w_tex.unsqueeze(-2).expand(*w.w_tex.shape[:-1], num_layers - geometry_layers, w.w_tex.shape[-1])
    return torch.cat([geo, tex], dim=-2)


def collapse_style_tensor(ws: torch.Tensor, geometry_layers: int = 7) -> StyleCode:
    """Inverse of assemble_style_tensor: take the first geometry and first texture row"""
    return StyleCode(ws[..., 0, :], ws[..., geometry_layers, :])


def check_layer_sharing(ws: torch.Tensor, geometry_layers: int) -> None:
    geo = ws[:, :geometry_layers]
    tex = ws[:, geometry_layers:]
    if not (torch.equal(geo, geo[:, :1].expand_as(geo)) and torch.equal(tex, tex[:, :1].expand_as(tex))):
        raise ArgumentError("Style tensor violates layer sharing: geometry rows and texture rows must each be equal")


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

def embed_view(camera, pose, d_dim: int = VIEW_FEATURES) -> ViewCode:
    """
    View code from camera intrinsics C = (fov, distance) and pose (yaw, pitch, roll)

    Layout: [fov, dist, yaw, pitch, roll, sin/cos of yaw, 2 yaw, pitch, 2 pitch,
    sin/cos roll, 1], truncated or zero-padded to ``d_dim``. The first five
    entries are read back by ``camera_from_view``.
    """
    if d_dim < 5:
        raise ArgumentError(f"d_dim must be at least 5 to carry the camera (got {d_dim})")
    camera = torch.as_tensor(camera)
    if not camera.is_floating_point():
        camera = camera.to(torch.float32)
    pose = torch.as_tensor(pose, dtype=camera.dtype)
    single = camera.ndim == 1
    if single:
        camera, pose = camera.unsqueeze(0), pose.unsqueeze(0)

    fov, dist = camera[:, 0], camera[:, 1]
    yaw, pitch, roll = pose[:, 0], pose[:, 1], pose[:, 2]
    parts = [
        fov, dist, yaw, pitch, roll,
        torch.sin(yaw), torch.cos(yaw), torch.sin(2 * yaw), torch.cos(2 * yaw),
        torch.sin(pitch), torch.cos(pitch), torch.sin(2 * pitch), torch.cos(2 * pitch),
        torch.sin(roll), torch.cos(roll), torch.ones_like(fov),
    ]
    d = torch.stack(parts, dim=-1)
    if d_dim <= VIEW_FEATURES:
        d = d[:, :d_dim]
    else:
        d = torch.cat([d, d.new_zeros(d.shape[0], d_dim - VIEW_FEATURES)], dim=-1)
    return ViewCode(d[0] if single else d)


def rotation_matrices(yaw: torch.Tensor, pitch: torch.Tensor, roll: torch.Tensor) -> torch.Tensor:
    """Batched R = Rz(roll) Ry(yaw) Rx(pitch), same convention as the scene renderer"""
    zero, one = torch.zeros_like(yaw), torch.ones_like(yaw)
    cy, sy = torch.cos(yaw), torch.sin(yaw)
    cp, sp = torch.cos(pitch), torch.sin(pitch)
    cr, sr = torch.cos(roll), torch.sin(roll)
    ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], dim=-1).view(-1, 3, 3)
    rx = torch.stack([one, zero, zero, zero, cp, -sp, zero, sp, cp], dim=-1).view(-1, 3, 3)
    rz = torch.stack([cr, -sr, zero, sr, cr, zero, zero, zero, one], dim=-1).view(-1, 3, 3)
    return rz @ ry @ rx


def camera_from_view(d: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Extrinsics in the head frame

    The camera sits at distance ``dist`` on the +z axis of the world and the
    head is rotated by R; in head coordinates the camera origin is
    R^T (0, 0, dist) and ray directions are R^T applied to camera-space rays.

    Returns:
        origin (B, 3), rotation R (B, 3, 3), fov (B,)
    """
    if d.ndim == 1:
        d = d.unsqueeze(0)
    fov, dist = d[:, 0], d[:, 1]
    rotation = rotation_matrices(d[:, 2], d[:, 3], d[:, 4])
    origin = dist.unsqueeze(-1) * rotation[:, 2, :]
    return origin, rotation, fov


def generate_rays(d: torch.Tensor, resolution: int, samples: int,
                  half_depth: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Sample points along pinhole rays through pixel centres

    Returns:
        points (B, R, R, S, 3) in the head frame, deltas (B, R, R, S)
    """
    if d.ndim == 1:
        d = d.unsqueeze(0)
    origin, rotation, fov = camera_from_view(d)
    dist = d[:, 1]
    dtype, device = origin.dtype, origin.device
    pixel = (torch.arange(resolution, dtype=dtype, device=device) + 0.5) / resolution
    u = 2.0 * pixel - 1.0
    v = 1.0 - 2.0 * pixel
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    half = torch.tan(0.5 * fov)[:, None, None]
    x, y = uu * half, vv * half
    directions = torch.stack([x, y, -torch.ones_like(x)], dim=-1)
    directions = directions / directions.norm(dim=-1, keepdim=True)
    directions = torch.einsum("bhwi,bij->bhwj", directions, rotation)

    step = 2.0 * half_depth / samples
    offsets = (torch.arange(samples, dtype=dtype, device=device) + 0.5) * step
    t_values = dist.unsqueeze(-1) - half_depth + offsets
    points = origin[:, None, None, None, :] + directions[:, :, :, None, :] * t_values[:, None, None, :, None]
    deltas = torch.full(points.shape[:-1], step, dtype=dtype, device=device)
    return points, deltas


def sample_camera_prior(count: int, rng: torch.Generator,
                        scene_config: Optional[SceneConfig] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Uniform draws of (camera, pose) over the procedural scene ranges"""
    scene_config = scene_config or SceneConfig()
    draws = []
    for block in ("camera", "pose"):
        ranges = torch.as_tensor(scene_config.ranges[block], dtype=torch.float64)
        u = torch.rand(count, ranges.shape[0], generator=rng, dtype=torch.float64)
        draws.append((ranges[:, 0] + u * (ranges[:, 1] - ranges[:, 0])).to(torch.float32))
    return draws[0], draws[1]


# ---------------------------------------------------------------------------
# Volume rendering
# ---------------------------------------------------------------------------

def volume_render_ray(densities: torch.Tensor, features: torch.Tensor,
                      deltas: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Front-to-back quadrature along rays

        T_i = exp(-sum_{j<i} sigma_j delta_j)
        out = sum_i T_i (1 - exp(-sigma_i delta_i)) f_i

    Works on a single ray (S,) / (S, F) or any batch of rays (..., S) /
    (..., S, F).

    Returns:
        feature (..., F), transmittance T_{S+1} (...)
    """
    if densities.shape[-1] < 1:
        raise ArgumentError("A ray needs at least one sample")
    if densities.shape != deltas.shape or features.shape[:-1] != densities.shape:
        raise ArgumentError(f"Inconsistent ray shapes: densities {tuple(densities.shape)}, "
                            f"features {tuple(features.shape)}, deltas {tuple(deltas.shape)}")
    if torch.any(densities < 0):
        raise ArgumentError("Densities must be nonnegative")
    if torch.any(deltas <= 0):
        raise ArgumentError("Sample spacings must be positive")

    optical = densities * deltas
    accumulated = torch.cumsum(optical, dim=-1)
    transmittance = torch.exp(-(accumulated - optical))
    weights = transmittance * (1.0 - torch.exp(-optical))
    feature = torch.sum(weights.unsqueeze(-1) * features, dim=-2)
    return feature, torch.exp(-accumulated[..., -1])


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

@dataclass
class RenderOutput:
    """Images plus the intermediate NeRF quantities"""
    image: torch.Tensor          # (B, 3, H, W)
    alpha: torch.Tensor          # (B, R, R) coverage, 1 - final transmittance
    features: torch.Tensor       # (B, F, R, R)
    densities: torch.Tensor      # (B, R, R, S)


class NeRFGenerator(nn.Module):
    """Mapping network, modulated NeRF trunk and modulated 2D upsampler"""

    def __init__(self, arch: Dict[str, Any]):
        super().__init__()
        unknown = sorted(set(arch) - set(ARCH_FIELDS))
        if unknown:
            raise CheckpointError(f"Unknown generator architecture fields: {', '.join(unknown)}")
        self.arch = {name: arch.get(name, getattr(GeneratorConfig, name)) for name in ARCH_FIELDS}
        a = self.arch
        self.num_layers = a["num_style_layers"]
        self.geometry_layers = a["geometry_layers"]
        texture_layers = self.num_layers - self.geometry_layers
        if self.geometry_layers < 2 or texture_layers < 4:
            raise ArgumentError("Need at least 2 geometry and 4 texture style layers")
        if a["output_resolution"] % a["nerf_resolution"]:
            raise ArgumentError("output_resolution must be a multiple of nerf_resolution")

        w_dim, hidden = a["w_dim"], a["hidden"]
        self.mapping = MappingNetwork(a["z_dim"], w_dim, a["mapping_layers"])

        in_features = 3 * (1 + 2 * a["positional_freqs"])
        self.trunk = nn.ModuleList()
        for i in range(self.geometry_layers - 1):
            self.trunk.append(ModulatedLinear(in_features if i == 0 else hidden, hidden, w_dim))
        self.density_head = nn.Linear(hidden, 1)
        nn.init.constant_(self.density_head.bias, -2.0)
        self.feature_layer = ModulatedLinear(hidden + a["d_dim"], a["feature_channels"], w_dim)

        channels = a["upsample_channels"]
        self.low_count = texture_layers // 2
        self.high_count = texture_layers - self.low_count
        self.low_convs = nn.ModuleList([
            ModulatedConv2d(a["feature_channels"] if i == 0 else channels, channels, w_dim)
            for i in range(self.low_count - 1)
        ])
        self.low_rgb = ModulatedConv2d(channels, 3, w_dim, kernel_size=1, activation=False, demodulate=False)
        self.high_convs = nn.ModuleList([
            ModulatedConv2d(channels, channels, w_dim) for _ in range(self.high_count - 1)
        ])
        self.high_rgb = ModulatedConv2d(channels, 3, w_dim, kernel_size=1, activation=False, demodulate=False)

    @classmethod
    def from_config(cls, gen_config: GeneratorConfig) -> 'NeRFGenerator':
        return cls(generator_arch(gen_config))

    @property
    def output_resolution(self) -> int:
        return self.arch["output_resolution"]

    @property
    def nerf_resolution(self) -> int:
        return self.arch["nerf_resolution"]

    def check_resolution(self, resolution: Optional[int]) -> int:
        resolution = resolution or self.output_resolution
        factor = resolution / self.nerf_resolution
        if factor < 1 or factor != int(factor) or int(factor) & (int(factor) - 1):
            raise ArgumentError(f"Resolution {resolution} is not a power-of-two multiple of the "
                                f"NeRF resolution {self.nerf_resolution}")
        return resolution

    def style_tensor(self, w: StyleCode) -> torch.Tensor:
        return assemble_style_tensor(w, self.num_layers, self.geometry_layers)

    def density_field(self, ws: torch.Tensor, d: torch.Tensor):
        """Densities and per-sample trunk activations; reads geometry rows only"""
        a = self.arch
        batch = ws.shape[0]
        points, deltas = generate_rays(d, self.nerf_resolution, a["samples_per_ray"], a["ray_half_depth"])
        h = positional_encoding(points.reshape(batch, -1, 3), a["positional_freqs"])
        for i, layer in enumerate(self.trunk):
            h = layer(h, ws[:, i])
        sigma = F.softplus(self.density_head(h)).squeeze(-1) * a["density_scale"]
        return sigma, h, deltas

    def synthesize(self, ws: torch.Tensor, d: torch.Tensor, resolution: Optional[int] = None) -> RenderOutput:
        """
        Render from an expanded style tensor

        Args:
            ws: (B, num_layers, D_w), obeying layer sharing
            d: (B, D_d) view codes
            resolution: Output size (defaults to the trained one)
        """
        resolution = self.check_resolution(resolution)
        if ws.ndim != 3 or ws.shape[1] != self.num_layers:
            raise ArgumentError(f"Style tensor must be (B, {self.num_layers}, D_w), got {tuple(ws.shape)}")
        check_layer_sharing(ws, self.geometry_layers)

        a = self.arch
        batch, res, samples = ws.shape[0], self.nerf_resolution, a["samples_per_ray"]
        sigma, h, deltas = self.density_field(ws, d)
        view = d[:, None, :].expand(-1, h.shape[1], -1)
        feats = self.feature_layer(torch.cat([h, view], dim=-1), ws[:, self.geometry_layers - 1])

        sigma = sigma.view(batch, res, res, samples)
        feats = feats.view(batch, res, res, samples, -1)
        feature, transmittance = volume_render_ray(sigma, feats, deltas)
        x = feature.permute(0, 3, 1, 2)

        index = self.geometry_layers
        for conv in self.low_convs:
            x = conv(x, ws[:, index])
            index += 1
        rgb = self.low_rgb(x, ws[:, index])
        index += 1
        if resolution != res:
            x = F.interpolate(x, size=(resolution, resolution), mode="bilinear", align_corners=False)
            rgb = F.interpolate(rgb, size=(resolution, resolution), mode="bilinear", align_corners=False)
        for conv in self.high_convs:
            x = conv(x, ws[:, index])
            index += 1
        rgb = rgb + self.high_rgb(x, ws[:, index])

        return RenderOutput(image=torch.sigmoid(rgb), alpha=1.0 - transmittance,
                            features=feature.permute(0, 3, 1, 2), densities=sigma)

    def forward(self, w: StyleCode, d: ViewCode, resolution: Optional[int] = None) -> torch.Tensor:
        return self.synthesize(self.style_tensor(w), d.d, resolution).image


class ImageDiscriminator(nn.Module):
    """Strided conv critic on images, used only for pretraining"""

    def __init__(self, resolution: int, base_channels: int = 16, slope: float = 0.2):
        super().__init__()
        layers = []
        in_channels, channels, size = 3, base_channels, resolution
        while size > 4:
            layers += [nn.Conv2d(in_channels, channels, 3, stride=2, padding=1), nn.LeakyReLU(slope)]
            in_channels, channels, size = channels, channels * 2, size // 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x * 2.0 - 1.0).mean(dim=(2, 3))).squeeze(-1)


# ---------------------------------------------------------------------------
# Rendering entry points
# ---------------------------------------------------------------------------

def render(generator: Optional[NeRFGenerator], w: StyleCode, d: ViewCode,
           resolution: Optional[int] = None, return_output: bool = False):
    """
    Render style and view codes with a loaded generator

    Accepts unbatched (D_w,) / (D_d,) codes, returning a (3, H, W) image, or
    batched codes returning (B, 3, H, W).
    """
    if generator is None:
        raise CheckpointError("No generator checkpoint loaded")
    single = w.w_geo.ndim == 1
    if single:
        w = StyleCode(w.w_geo.unsqueeze(0), w.w_tex.unsqueeze(0))
        d = ViewCode(d.d.unsqueeze(0))
    if not (torch.isfinite(w.w_geo).all() and torch.isfinite(w.w_tex).all() and torch.isfinite(d.d).all()):
        raise ArgumentError("Style and view codes must be finite")
    output = generator.synthesize(generator.style_tensor(w), d.d, resolution)
    if return_output:
        return output
    return output.image[0] if single else output.image


def render_batch(generator: NeRFGenerator, w: StyleCode, d: ViewCode,
                 chunk: int = 64, resolution: Optional[int] = None) -> torch.Tensor:
    """Render many codes without gradients in fixed-size chunks"""
    images = []
    with torch.no_grad():
        for start in range(0, w.w_geo.shape[0], chunk):
            sl = slice(start, start + chunk)
            images.append(render(generator, w[sl], d[sl], resolution))
    return torch.cat(images)


def sample_w(generator: NeRFGenerator, count: int, rng: torch.Generator, mix: bool = True) -> StyleCode:
    """
    Draw style codes from the mapping network

    With ``mix`` the geometry and texture codes come from independent
    latent draws.
    """
    z_dim = generator.arch["z_dim"]
    z_geo = torch.randn(count, z_dim, generator=rng)
    z_tex = torch.randn(count, z_dim, generator=rng) if mix else z_geo
    with torch.no_grad():
        return StyleCode(generator.mapping(z_geo), generator.mapping(z_tex))


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------

@dataclass
class PretrainResult:
    generator: NeRFGenerator
    steps_run: int
    fid_history: List[Tuple[int, float]]
    holdout_accuracy: List[Tuple[int, float]]
    stopped_early: bool = False

    def metadata(self) -> Dict[str, Any]:
        return {
            "steps_run": self.steps_run,
            "fid_history": self.fid_history,
            "holdout_accuracy": self.holdout_accuracy,
            "stopped_early": self.stopped_early,
        }


def pretrain_generator(dataset, experiment: Optional[ExperimentConfig] = None, steps: Optional[int] = None,
                       out_dir=None) -> PretrainResult:
    """
    Adversarial pretraining of the generator on procedural renders

    Non-saturating logistic losses with an R1 penalty on real images. Fake
    images are rendered under view codes of the training scenes with
    style-mixed codes. Stops when the FID proxy falls under the configured
    threshold or after ``steps`` updates.

    Args:
        dataset: DatasetHandle of procedural renders
        experiment: Experiment config (generator section and seed are used)
        steps: Override of generator.steps
        out_dir: Where the step log and failure diagnostics go

    Returns:
        PretrainResult with the trained generator
    """
    from .metrics import fid_proxy

    experiment = experiment or ExperimentConfig()
    gen_cfg = experiment.generator
    steps = gen_cfg.steps if steps is None else steps
    if steps < 0:
        raise ArgumentError("steps must be nonnegative")

    rng = seed_everything(experiment.seed)
    generator = NeRFGenerator.from_config(gen_cfg)
    discriminator = ImageDiscriminator(gen_cfg.output_resolution)

    images = dataset.images()
    if images.shape[-1] != gen_cfg.output_resolution:
        raise ArgumentError(f"Dataset resolution {images.shape[-1]} does not match generator output "
                            f"resolution {gen_cfg.output_resolution}")
    holdout_count = max(1, len(dataset) // 10) if len(dataset) > 1 else 0
    train_images = images[:len(dataset) - holdout_count]
    holdout = images[len(dataset) - holdout_count:]
    cameras = torch.as_tensor(np.stack([s.coeffs.camera for s in dataset.specs]), dtype=torch.float32)
    poses = torch.as_tensor(np.stack([s.coeffs.pose for s in dataset.specs]), dtype=torch.float32)
    views = embed_view(cameras, poses, gen_cfg.d_dim).d

    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "generator_log.jsonl" if out_dir else None)
    diagnostics_path = out_dir / "generator" if out_dir else None

    def holdout_accuracy() -> float:
        if holdout.shape[0] == 0:
            return float("nan")
        with torch.no_grad():
            return float((discriminator(holdout) > 0).float().mean())

    eval_rng = torch.Generator().manual_seed(experiment.seed + 1)
    eval_count = min(train_images.shape[0], 128)
    eval_z = torch.randn(2, eval_count, gen_cfg.z_dim, generator=eval_rng)
    eval_views = views[torch.randint(0, views.shape[0], (eval_count,), generator=eval_rng)]

    def current_fid() -> float:
        with torch.no_grad():
            eval_w = StyleCode(generator.mapping(eval_z[0]), generator.mapping(eval_z[1]))
        fakes = render_batch(generator, eval_w, ViewCode(eval_views), gen_cfg.render_chunk)
        return fid_proxy(train_images[:eval_count], fakes)

    result = PretrainResult(generator, 0, [], [(0, holdout_accuracy())])
    if steps == 0:
        return result

    opt_g = torch.optim.Adam(generator.parameters(), lr=gen_cfg.lr, betas=(0.0, 0.99))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=gen_cfg.lr, betas=(0.0, 0.99))
    last_good = snapshot(generator)
    batch = min(gen_cfg.batch_size, train_images.shape[0])
    z_dim = gen_cfg.z_dim

    for step in range(1, steps + 1):
        real = train_images[torch.randint(0, train_images.shape[0], (batch,), generator=rng)]
        d = views[torch.randint(0, views.shape[0], (batch,), generator=rng)]
        z_geo = torch.randn(batch, z_dim, generator=rng)
        z_tex = torch.randn(batch, z_dim, generator=rng)

        # discriminator step
        with torch.no_grad():
            fake = generator(StyleCode(generator.mapping(z_geo), generator.mapping(z_tex)), ViewCode(d))
        real = real.detach().requires_grad_(True)
        real_logits = discriminator(real)
        loss_d = F.softplus(-real_logits).mean() + F.softplus(discriminator(fake)).mean()
        (grad_real,) = torch.autograd.grad(real_logits.sum(), real, create_graph=True)
        r1 = grad_real.pow(2).sum(dim=(1, 2, 3)).mean()
        guard_finite({"loss_d": loss_d, "r1": r1}, step, last_good, diagnostics_path, "generator")
        opt_d.zero_grad()
        (loss_d + 0.5 * gen_cfg.r1_gamma * r1).backward()
        opt_d.step()

        # generator step
        w = StyleCode(generator.mapping(z_geo), generator.mapping(z_tex))
        loss_g = F.softplus(-discriminator(generator(w, ViewCode(d)))).mean()
        opt_g.zero_grad()
        loss_g.backward()

        guard_finite({"loss_g": loss_g}, step, last_good, diagnostics_path, "generator")
        opt_g.step()
        log.append(step, loss_d=loss_d, loss_g=loss_g, r1=r1)
        result.steps_run = step

        if step % gen_cfg.log_every == 0:
            logging.info(f"gen step {step}/{steps}: loss_d={loss_d.item():.4f} loss_g={loss_g.item():.4f} "
                         f"r1={r1.item():.4f}")
        if step % gen_cfg.eval_every == 0 or step == steps:
            last_good = snapshot(generator)
            fid = current_fid()
            result.fid_history.append((step, fid))
            result.holdout_accuracy.append((step, holdout_accuracy()))
            logging.info(f"gen step {step}: fid_proxy={fid:.4f}")
            if fid <= gen_cfg.fid_threshold:
                result.stopped_early = step < steps
                break

    generator.eval()
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_generator(generator: NeRFGenerator, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, "generator", generator.arch, generator.state_dict(), metadata)


def load_generator(path) -> NeRFGenerator:
    """Rebuild a frozen generator from its checkpoint"""
    payload = load_checkpoint(path, "generator")
    generator = NeRFGenerator(payload["arch"])
    try:
        generator.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        logging.error(f"Generator checkpoint {path} does not match its architecture: {str(e)}")
        raise CheckpointError(f"Generator checkpoint {path} does not match its architecture")
    generator.eval()
    generator.requires_grad_(False)
    generator.metadata = payload.get("metadata", {})
    return generator


def frozen_copy(generator: NeRFGenerator) -> NeRFGenerator:
    clone = copy.deepcopy(generator)
    clone.eval()
    clone.requires_grad_(False)
    return clone


# ---------------------------------------------------------------------------
# Inversion corpus
# ---------------------------------------------------------------------------

def sample_training_corpus(generator: NeRFGenerator, count: int, seed: int,
                           scene_config: Optional[SceneConfig] = None,
                           render_chunk: int = 64) -> InversionCorpus:
    """
    Style-mixed generator samples with ground-truth codes

    w_geo and w_tex come from independent latent draws, the view from the
    camera prior. Images are quantized to 8 bits; re-rendering the stored
    codes with the same chunking reproduces them bitwise.
    """
    if generator is None:
        raise CheckpointError("No generator checkpoint loaded")
    if count < 1:
        raise ArgumentError(f"count must be positive (got {count})")
    rng = torch.Generator().manual_seed(seed)
    style = sample_w(generator, count, rng, mix=True)
    camera, pose = sample_camera_prior(count, rng, scene_config)
    view = embed_view(camera, pose, generator.arch["d_dim"])
    images = quantize(render_batch(generator, style, view, render_chunk))
    logging.info(f"Sampled a corpus of {count} style-mixed renders")
    return InversionCorpus(
        images=images, w_geo=style.w_geo, w_tex=style.w_tex, d=view.d,
        camera=torch.cat([camera, pose], dim=-1), render_batch=render_chunk,
    )


def verify_corpus(generator: NeRFGenerator, corpus: InversionCorpus) -> int:
    """Re-render every record; returns the number of images that differ"""
    if not corpus.has_codes:
        raise ArgumentError("Corpus has no stored codes to re-render")
    rendered = quantize(render_batch(generator, corpus.style(), corpus.view(), corpus.render_batch))
    return int((rendered != corpus.images).flatten(1).any(dim=1).sum())


def write_corpus(corpus: InversionCorpus, path, metadata: Optional[Dict[str, Any]] = None,
                 overwrite: bool = False) -> Path:
    records = []
    for i in range(len(corpus)):
        records.append({
            "identity_id": -1,
            "w_geo": corpus.w_geo[i].tolist(),
            "w_tex": corpus.w_tex[i].tolist(),
            "d": corpus.d[i].tolist(),
            "camera": corpus.camera[i].tolist(),
        })
    extra = {"kind": "corpus", "render_batch": corpus.render_batch}
    extra.update(metadata or {})
    return write_records(path, records, corpus.images, metadata=extra, overwrite=overwrite)


def read_corpus(path) -> InversionCorpus:
    """Load a corpus written by write_corpus"""
    path = Path(path)
    payload = read_index(path)
    if payload.get("kind") != "corpus":
        raise CorruptIndexError(f"{path} is a dataset, not a generator corpus")
    try:
        samples = payload["samples"]
        images = torch.stack([load_png(path / s["image"]) for s in samples])
        columns = {key: torch.tensor([s[key] for s in samples], dtype=torch.float32)
                   for key in ("w_geo", "w_tex", "d", "camera")}
    except (KeyError, TypeError, ValueError) as e:
        logging.error(f"Malformed corpus record in {path}: {str(e)}")
        raise CorruptIndexError(f"Corpus at {path} has a malformed record: {e}")
    return InversionCorpus(images=images, render_batch=int(payload.get("render_batch", 64)), **columns)


def corpus_from_dataset(dataset) -> InversionCorpus:
    """Wrap procedural renders as a corpus without codes (real-data training)"""
    images = dataset.images()
    n = images.shape[0]
    empty = torch.zeros(n, 0)
    return InversionCorpus(images=images, w_geo=empty, w_tex=empty, d=empty, camera=empty, has_codes=False)


def generator_digest(generator: NeRFGenerator) -> str:
    return state_digest(generator.state_dict())
