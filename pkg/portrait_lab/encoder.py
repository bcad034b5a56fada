"""
The 3D-aware encoder

Morphable coefficients (g, t, c) are mapped by fully connected networks to
morphable codes, two CNNs add detail residuals from the image:

    w_geo = M_geo(g) + E_geo(x)
    w_tex = M_tex(t) + E_tex(x)
    d     = M_cam(c)

Coefficients come either from the scene oracle or from a coefficient
regressor trained on procedural renders.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoints import TrainingLog, guard_finite, load_checkpoint, save_checkpoint, snapshot
from .config import COEFFICIENT_BLOCKS, EncoderConfig, ExperimentConfig, GeneratorConfig, SceneConfig
from .errors import ArgumentError, CheckpointError, UntrainedModelError
from .generator import assemble_style_tensor, collapse_style_tensor
from .imaging import seed_everything
from .models import DetailCodes, MorphCodes, MorphCoeffs, StyleCode, ViewCode
from .scene import OracleLookup, denormalize_block, normalize_block

__all__ = [
    "MappingMLP", "DetailEncoder", "CoefficientRegressor", "PortraitEncoder", "EncoderBundle",
    "extract_morph_coeffs", "map_morph_to_codes", "encode_details", "encode",
    "assemble_style_tensor", "collapse_style_tensor", "coeffs_to_inputs", "train_regressor",
    "save_encoder", "load_encoder", "save_regressor", "load_regressor",
]

GEOMETRY_BLOCKS = ("beta", "psi", "delta")
TEXTURE_BLOCKS = ("albedo", "light")
VIEW_BLOCKS = ("camera", "pose")


# ---------------------------------------------------------------------------
# Coefficient normalization
# ---------------------------------------------------------------------------

def _normalized(coeffs: MorphCoeffs, blocks: Sequence[str], scene_config: SceneConfig) -> np.ndarray:
    return np.concatenate([normalize_block(getattr(coeffs, b), scene_config, b) for b in blocks])


def coeffs_to_inputs(coeffs: Union[MorphCoeffs, List[MorphCoeffs]], scene_config: Optional[SceneConfig] = None,
                     dtype=torch.float32) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Mapping-network inputs (g, t, c), each block rescaled from its sampling
    range to [-1, 1]

    Returns:
        g, t, c of shape (D,) for one bundle or (B, D) for a list
    """
    scene_config = scene_config or SceneConfig()
    single = isinstance(coeffs, MorphCoeffs)
    bundles = [coeffs] if single else list(coeffs)
    for bundle in bundles:
        bundle.validate(scene_config.dims)
    parts = []
    for blocks in (GEOMETRY_BLOCKS, TEXTURE_BLOCKS, VIEW_BLOCKS):
        rows = np.stack([_normalized(b, blocks, scene_config) for b in bundles])
        tensor = torch.as_tensor(rows, dtype=dtype)
        parts.append(tensor[0] if single else tensor)
    return parts[0], parts[1], parts[2]


def normalized_coeff_vector(coeffs: MorphCoeffs, scene_config: SceneConfig) -> np.ndarray:
    return _normalized(coeffs, COEFFICIENT_BLOCKS, scene_config)


def coeffs_from_normalized(vector: np.ndarray, scene_config: SceneConfig) -> MorphCoeffs:
    blocks = {}
    offset = 0
    for name in COEFFICIENT_BLOCKS:
        size = scene_config.dims[name]
        blocks[name] = denormalize_block(vector[offset:offset + size], scene_config, name)
        offset += size
    blocks["pose"] = np.clip(blocks["pose"], -np.pi, np.pi)
    return MorphCoeffs(**blocks)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------

class MappingMLP(nn.Module):
    """Fully connected mapping network with LeakyReLU between layers"""

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 128, num_layers: int = 5, slope: float = 0.2):
        super().__init__()
        if num_layers < 1:
            raise ArgumentError("A mapping network needs at least one layer")
        layers = []
        for i in range(num_layers):
            layers.append(nn.Linear(in_dim if i == 0 else hidden, out_dim if i == num_layers - 1 else hidden))
            if i < num_layers - 1:
                layers.append(nn.LeakyReLU(slope))
        self.net = nn.Sequential(*layers)
        self.in_dim = in_dim

    @property
    def num_layers(self) -> int:
        return sum(isinstance(m, nn.Linear) for m in self.net)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ArgumentError(f"Mapping input has {x.shape[-1]} features, expected {self.in_dim}")
        return self.net(x)


def conv_backbone(base_channels: int, blocks: int, slope: float) -> Tuple[nn.Sequential, int]:
    """Stride-2 conv blocks with channel doubling"""
    layers = []
    in_channels, channels = 3, base_channels
    for _ in range(blocks):
        layers += [nn.Conv2d(in_channels, channels, 3, stride=2, padding=1), nn.LeakyReLU(slope)]
        in_channels, channels = channels, channels * 2
    return nn.Sequential(*layers), in_channels


class DetailEncoder(nn.Module):
    """Conv blocks, global average pool and a linear head to one D_w residual"""

    def __init__(self, w_dim: int, base_channels: int = 16, blocks: int = 4, slope: float = 0.2):
        super().__init__()
        self.backbone, channels = conv_backbone(base_channels, blocks, slope)
        self.head = nn.Linear(channels, w_dim)

    def zero_head(self) -> None:
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x * 2.0 - 1.0).mean(dim=(2, 3)))


class CoefficientRegressor(nn.Module):
    """Predicts the normalized coefficient vector of a render"""

    def __init__(self, arch: Dict[str, Any]):
        super().__init__()
        self.arch = dict(arch)
        self.dims = dict(arch["dims"])
        total = sum(self.dims[name] for name in COEFFICIENT_BLOCKS)
        self.backbone, channels = conv_backbone(arch["base_channels"], arch["blocks"], arch["slope"])
        self.head = nn.Sequential(nn.Linear(channels, arch["hidden"]), nn.LeakyReLU(arch["slope"]),
                                  nn.Linear(arch["hidden"], total))
        self.trained = False

    def predict_normalized(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim == 3:
            images = images.unsqueeze(0)
        if images.shape[-1] != self.arch["resolution"] or images.shape[-2] != self.arch["resolution"]:
            raise ArgumentError(f"Regressor expects {self.arch['resolution']}px images, got {tuple(images.shape[-2:])}")
        return self.head(self.backbone(images * 2.0 - 1.0).mean(dim=(2, 3)))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.predict_normalized(images)

    def predict_coeffs(self, image: torch.Tensor, scene_config: Optional[SceneConfig] = None) -> MorphCoeffs:
        scene_config = scene_config or SceneConfig()
        with torch.no_grad():
            vector = self.predict_normalized(image)[0].double().cpu().numpy()
        vector = np.nan_to_num(vector, nan=0.0, posinf=1.0, neginf=-1.0)
        return coeffs_from_normalized(vector, scene_config)


class PortraitEncoder(nn.Module):
    """M_geo, M_tex, M_cam plus the detail encoders E_geo, E_tex"""

    def __init__(self, arch: Dict[str, Any]):
        super().__init__()
        self.arch = dict(arch)
        dims = arch["dims"]
        g_dim = sum(dims[b] for b in GEOMETRY_BLOCKS)
        t_dim = sum(dims[b] for b in TEXTURE_BLOCKS)
        c_dim = sum(dims[b] for b in VIEW_BLOCKS)
        hidden, slope = arch["hidden"], arch["slope"]
        self.m_geo = MappingMLP(g_dim, arch["w_dim"], hidden, arch["mapping_layers"], slope)
        self.m_tex = MappingMLP(t_dim, arch["w_dim"], hidden, arch["mapping_layers"], slope)
        self.m_cam = MappingMLP(c_dim, arch["d_dim"], hidden, arch["camera_layers"], slope)
        self.e_geo = DetailEncoder(arch["w_dim"], arch["base_channels"], arch["blocks"], slope)
        self.e_tex = DetailEncoder(arch["w_dim"], arch["base_channels"], arch["blocks"], slope)
        self.morph_only = bool(arch.get("morph_only", False))
        self.resolution = arch["resolution"]

    @classmethod
    def from_config(cls, enc_config: EncoderConfig, gen_config: GeneratorConfig,
                    scene_config: SceneConfig, morph_only: bool = False) -> 'PortraitEncoder':
        return cls(encoder_arch(enc_config, gen_config, scene_config, morph_only))

    def zero_details(self) -> None:
        self.e_geo.zero_head()
        self.e_tex.zero_head()

    def map_morph(self, g: torch.Tensor, t: torch.Tensor, c: torch.Tensor) -> MorphCodes:
        return MorphCodes(self.m_geo(g), self.m_tex(t), ViewCode(self.m_cam(c)))

    def details(self, images: torch.Tensor) -> DetailCodes:
        if images.shape[-1] != self.resolution or images.shape[-2] != self.resolution:
            raise ArgumentError(f"Encoder expects {self.resolution}x{self.resolution} images, "
                                f"got {tuple(images.shape[-2:])}")
        if self.morph_only:
            zero = images.new_zeros(*images.shape[:-3], self.arch["w_dim"])
            return DetailCodes(zero, zero.clone())
        return DetailCodes(self.e_geo(images), self.e_tex(images))

    def forward(self, images: torch.Tensor, g: torch.Tensor, t: torch.Tensor,
                c: torch.Tensor) -> Tuple[StyleCode, ViewCode]:
        morph = self.map_morph(g, t, c)
        detail = self.details(images)
        return StyleCode(morph.w_geo_morph + detail.delta_geo, morph.w_tex_morph + detail.delta_tex), morph.d


def encoder_arch(enc_config: EncoderConfig, gen_config: GeneratorConfig, scene_config: SceneConfig,
                 morph_only: bool = False) -> Dict[str, Any]:
    return {
        "dims": dict(scene_config.dims),
        "w_dim": gen_config.w_dim,
        "d_dim": gen_config.d_dim,
        "hidden": enc_config.hidden,
        "mapping_layers": enc_config.mapping_layers,
        "camera_layers": enc_config.camera_layers,
        "slope": enc_config.leaky_slope,
        "base_channels": enc_config.detail_base_channels,
        "blocks": enc_config.detail_blocks,
        "resolution": gen_config.output_resolution,
        "morph_only": morph_only,
    }


def regressor_arch(enc_config: EncoderConfig, scene_config: SceneConfig, resolution: int) -> Dict[str, Any]:
    return {
        "dims": dict(scene_config.dims),
        "hidden": enc_config.hidden,
        "slope": enc_config.leaky_slope,
        "base_channels": enc_config.detail_base_channels,
        "blocks": enc_config.detail_blocks,
        "resolution": resolution,
    }


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def extract_morph_coeffs(image: torch.Tensor, mode: str = "oracle", lookup: Optional[OracleLookup] = None,
                         regressor: Optional[CoefficientRegressor] = None,
                         overrides: Optional[Dict[str, np.ndarray]] = None,
                         scene_config: Optional[SceneConfig] = None) -> MorphCoeffs:
    """
    Morphable coefficients of an image

    Args:
        image: (3, H, W) image
        mode: "oracle" (exact coefficients of a known scene) or "regressor"
        lookup: Oracle lookup, required in oracle mode
        regressor: Trained coefficient regressor, required in regressor mode
        overrides: Blocks replacing the extracted ones (shared beta/albedo in videos)
    """
    if mode == "oracle":
        if lookup is None:
            raise ArgumentError("Oracle mode needs an oracle lookup built from the source dataset")
        coeffs = lookup.lookup(image).coeffs.replace()
    elif mode == "regressor":
        if regressor is None or not regressor.trained:
            raise UntrainedModelError("Regressor mode needs a trained coefficient regressor")
        coeffs = regressor.predict_coeffs(image, scene_config)
    else:
        raise ArgumentError(f"Unknown coefficient mode '{mode}' (expected oracle or regressor)")
    if overrides:
        unknown = sorted(set(overrides) - set(COEFFICIENT_BLOCKS))
        if unknown:
            raise ArgumentError(f"Unknown coefficient blocks in overrides: {', '.join(unknown)}")
        coeffs = coeffs.replace(**overrides)
    return coeffs


def map_morph_to_codes(encoder: PortraitEncoder, coeffs: MorphCoeffs,
                       scene_config: Optional[SceneConfig] = None) -> MorphCodes:
    """w_geo_morph = M_geo(g), w_tex_morph = M_tex(t), d = M_cam(c)"""
    scene_config = scene_config or SceneConfig()
    for name in COEFFICIENT_BLOCKS:
        expected = encoder.arch["dims"][name]
        if getattr(coeffs, name).shape != (expected,):
            raise ArgumentError(f"Coefficient block '{name}' has length {getattr(coeffs, name).shape[0]}, "
                                f"the encoder expects {expected}")
    dtype = next(encoder.parameters()).dtype
    g, t, c = coeffs_to_inputs(coeffs, scene_config, dtype=dtype)
    return encoder.map_morph(g, t, c)


def encode_details(encoder: PortraitEncoder, image: torch.Tensor) -> DetailCodes:
    """Detail residuals of one (3, H, W) image"""
    detail = encoder.details(image.unsqueeze(0))
    return DetailCodes(detail.delta_geo[0], detail.delta_tex[0])


def encode(encoder: PortraitEncoder, image: torch.Tensor, mode: str = "oracle",
           lookup: Optional[OracleLookup] = None, regressor: Optional[CoefficientRegressor] = None,
           overrides: Optional[Dict[str, np.ndarray]] = None,
           scene_config: Optional[SceneConfig] = None) -> Tuple[StyleCode, ViewCode]:
    """E_w(x), E_d(x): morphable codes plus detail residuals"""
    coeffs = extract_morph_coeffs(image, mode, lookup, regressor, overrides, scene_config)
    morph = map_morph_to_codes(encoder, coeffs, scene_config)
    detail = encode_details(encoder, image)
    return StyleCode(morph.w_geo_morph + detail.delta_geo, morph.w_tex_morph + detail.delta_tex), morph.d


@dataclass
class EncoderBundle:
    """An encoder with the coefficient sources it reads from"""
    encoder: PortraitEncoder
    regressor: Optional[CoefficientRegressor] = None
    lookup: Optional[OracleLookup] = None
    scene_config: Optional[SceneConfig] = None

    def extract(self, image: torch.Tensor, mode: str = "oracle",
                overrides: Optional[Dict[str, np.ndarray]] = None) -> MorphCoeffs:
        return extract_morph_coeffs(image, mode, self.lookup, self.regressor, overrides, self.scene_config)

    def encode(self, image: torch.Tensor, mode: str = "oracle",
               overrides: Optional[Dict[str, np.ndarray]] = None) -> Tuple[StyleCode, ViewCode]:
        with torch.no_grad():
            return encode(self.encoder, image, mode, self.lookup, self.regressor, overrides, self.scene_config)

    def encode_coeffs(self, image: torch.Tensor, coeffs: MorphCoeffs) -> Tuple[StyleCode, ViewCode]:
        """Encode with coefficients already in hand"""
        with torch.no_grad():
            morph = map_morph_to_codes(self.encoder, coeffs, self.scene_config)
            detail = encode_details(self.encoder, image)
        return StyleCode(morph.w_geo_morph + detail.delta_geo, morph.w_tex_morph + detail.delta_tex), morph.d


# ---------------------------------------------------------------------------
# Regressor training
# ---------------------------------------------------------------------------

def train_regressor(dataset, experiment: Optional[ExperimentConfig] = None, steps: Optional[int] = None,
                    out_dir=None) -> Tuple[CoefficientRegressor, Dict[str, float]]:
    """
    Fit the coefficient regressor on procedural renders with an L2 loss on
    normalized coefficients

    Returns:
        The trained regressor and validation metrics (mean absolute error of
        beta and of the whole vector, in coefficient units)
    """
    experiment = experiment or ExperimentConfig()
    enc_cfg, scene_cfg = experiment.encoder, experiment.scene
    steps = enc_cfg.regressor_steps if steps is None else steps

    rng = seed_everything(experiment.seed)
    images = dataset.images()
    regressor = CoefficientRegressor(regressor_arch(enc_cfg, scene_cfg, images.shape[-1]))
    targets = torch.as_tensor(np.stack([normalized_coeff_vector(s.coeffs, scene_cfg) for s in dataset.specs]),
                              dtype=torch.float32)

    n = images.shape[0]
    val_count = 0
    if n > 1:
        val_count = min(max(1, int(round(n * enc_cfg.regressor_validation_fraction))), n - 1)
    train_x, train_y = images[:n - val_count], targets[:n - val_count]
    val_x, val_y = images[n - val_count:], targets[n - val_count:]

    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "regressor_log.jsonl" if out_dir else None)
    optimizer = torch.optim.Adam(regressor.parameters(), lr=enc_cfg.regressor_lr)
    batch = min(enc_cfg.regressor_batch_size, train_x.shape[0])
    last_good = snapshot(regressor)

    for step in range(1, steps + 1):
        idx = torch.randint(0, train_x.shape[0], (batch,), generator=rng)
        loss = F.mse_loss(regressor(train_x[idx]), train_y[idx])
        guard_finite({"loss": loss}, step, last_good, out_dir / "regressor" if out_dir else None, "regressor")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        log.append(step, loss=loss)
        if step % 50 == 0:
            last_good = snapshot(regressor)
        if step % 250 == 0:
            logging.info(f"regressor step {step}/{steps}: loss={loss.item():.5f}")

    regressor.eval()
    regressor.trained = True
    metrics = evaluate_regressor(regressor, val_x if val_count else train_x,
                                 [dataset.specs[i].coeffs for i in range(n - val_count, n)] if val_count
                                 else [s.coeffs for s in dataset.specs], scene_cfg)
    if metrics["beta_mae"] > enc_cfg.regressor_beta_mae_threshold:
        logging.warning(f"Regressor validation beta MAE {metrics['beta_mae']:.4f} is above "
                        f"the threshold {enc_cfg.regressor_beta_mae_threshold}")
    return regressor, metrics


def evaluate_regressor(regressor: CoefficientRegressor, images: torch.Tensor, coeffs: List[MorphCoeffs],
                       scene_config: SceneConfig) -> Dict[str, float]:
    beta_errors, all_errors = [], []
    for image, truth in zip(images, coeffs):
        predicted = regressor.predict_coeffs(image, scene_config)
        beta_errors.append(np.mean(np.abs(predicted.beta - truth.beta)))
        all_errors.append(np.mean(np.abs(predicted.to_vector() - truth.to_vector())))
    return {"beta_mae": float(np.mean(beta_errors)), "coeff_mae": float(np.mean(all_errors)),
            "count": len(beta_errors)}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_encoder(encoder: PortraitEncoder, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, "encoder", encoder.arch, encoder.state_dict(), metadata)


def load_encoder(path) -> PortraitEncoder:
    payload = load_checkpoint(path, "encoder")
    encoder = PortraitEncoder(payload["arch"])
    try:
        encoder.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        logging.error(f"Encoder checkpoint {path} does not match its architecture: {str(e)}")
        raise CheckpointError(f"Encoder checkpoint {path} does not match its architecture")
    encoder.eval()
    encoder.metadata = payload.get("metadata", {})
    return encoder


def save_regressor(regressor: CoefficientRegressor, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    metadata = dict(metadata or {})
    metadata["trained"] = regressor.trained
    return save_checkpoint(path, "regressor", regressor.arch, regressor.state_dict(), metadata)


def load_regressor(path) -> CoefficientRegressor:
    payload = load_checkpoint(path, "regressor")
    regressor = CoefficientRegressor(payload["arch"])
    try:
        regressor.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        logging.error(f"Regressor checkpoint {path} does not match its architecture: {str(e)}")
        raise CheckpointError(f"Regressor checkpoint {path} does not match its architecture")
    regressor.eval()
    regressor.trained = bool(payload.get("metadata", {}).get("trained", False))
    return regressor
