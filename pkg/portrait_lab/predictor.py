"""
Attribute predictor: a small conv regressor trained on oracle labels
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoints import TrainingLog, guard_finite, load_checkpoint, save_checkpoint, snapshot
from .config import ExperimentConfig
from .encoder import conv_backbone
from .errors import ArgumentError, CheckpointError, UntrainedModelError
from .imaging import seed_everything
from .models import AttributeVector


class AttributePredictor(nn.Module):
    """Image -> K attribute values"""

    def __init__(self, arch: Dict[str, Any]):
        super().__init__()
        self.arch = dict(arch)
        self.attribute_names = list(arch["attribute_names"])
        self.backbone, channels = conv_backbone(arch["base_channels"], arch["blocks"], arch["slope"])
        self.head = nn.Sequential(nn.Linear(channels, arch["hidden"]), nn.LeakyReLU(arch["slope"]),
                                  nn.Linear(arch["hidden"], len(self.attribute_names)))
        self.trained = False

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-1] != self.arch["resolution"] or images.shape[-2] != self.arch["resolution"]:
            raise ArgumentError(f"Predictor expects {self.arch['resolution']}px images, "
                                f"got {tuple(images.shape[-2:])}")
        return self.head(self.backbone(images * 2.0 - 1.0).mean(dim=(2, 3)))


def predictor_arch(experiment: ExperimentConfig, resolution: int,
                   attribute_names: Optional[List[str]] = None) -> Dict[str, Any]:
    enc = experiment.encoder
    return {
        "attribute_names": list(attribute_names or experiment.scene.attribute_names),
        "base_channels": enc.detail_base_channels,
        "blocks": enc.detail_blocks,
        "hidden": enc.hidden,
        "slope": enc.leaky_slope,
        "resolution": resolution,
    }


def predict_attributes(predictor: Optional[AttributePredictor], images: torch.Tensor,
                       chunk: int = 256) -> torch.Tensor:
    """
    Attribute predictions clipped to [0, 1]

    Args:
        images: (3, H, W) or (B, 3, H, W)

    Returns:
        (K,) or (B, K)
    """
    if predictor is None or not predictor.trained:
        raise UntrainedModelError("Attribute prediction needs a trained predictor checkpoint")
    single = images.ndim == 3
    if single:
        images = images.unsqueeze(0)
    with torch.no_grad():
        out = torch.cat([predictor(images[i:i + chunk]) for i in range(0, images.shape[0], chunk)])
    out = torch.nan_to_num(out, nan=0.5).clamp(0.0, 1.0)
    return out[0] if single else out


def predict_attribute_vector(predictor: AttributePredictor, image: torch.Tensor) -> AttributeVector:
    values = predict_attributes(predictor, image).double().cpu().numpy()
    return AttributeVector(values, list(predictor.attribute_names))


def train_attribute_predictor(dataset, experiment: Optional[ExperimentConfig] = None,
                              steps: Optional[int] = None,
                              out_dir=None) -> Tuple[AttributePredictor, Dict[str, float]]:
    """
    Fit the predictor to the oracle labels of a procedural dataset

    The last ``predictor_validation_fraction`` of samples is held out.

    Returns:
        The trained predictor and {"train_mae", "val_mae"}
    """
    experiment = experiment or ExperimentConfig()
    ev = experiment.eval
    steps = ev.predictor_steps if steps is None else steps

    rng = seed_everything(experiment.seed)
    images = dataset.images()
    labels = dataset.attribute_tensor()
    names = list(dataset.attributes[0].names) if dataset.attributes else None
    predictor = AttributePredictor(predictor_arch(experiment, images.shape[-1], names))

    n = images.shape[0]
    val_count = 0
    if n > 1:
        val_count = min(max(1, int(round(n * ev.predictor_validation_fraction))), n - 1)
    train_x, train_y = images[:n - val_count], labels[:n - val_count]
    val_x, val_y = images[n - val_count:], labels[n - val_count:]

    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "predictor_log.jsonl" if out_dir else None)
    optimizer = torch.optim.Adam(predictor.parameters(), lr=ev.predictor_lr)
    batch = min(ev.predictor_batch_size, train_x.shape[0])
    last_good = snapshot(predictor)

    for step in range(1, steps + 1):
        idx = torch.randint(0, train_x.shape[0], (batch,), generator=rng)
        loss = F.mse_loss(predictor(train_x[idx]), train_y[idx])
        guard_finite({"loss": loss}, step, last_good, out_dir / "predictor" if out_dir else None, "predictor")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        log.append(step, loss=loss)
        if step % 50 == 0:
            last_good = snapshot(predictor)
        if step % 250 == 0:
            logging.info(f"predictor step {step}/{steps}: loss={loss.item():.5f}")

    predictor.eval()
    predictor.trained = True
    metrics = {"train_mae": float((predict_attributes(predictor, train_x) - train_y).abs().mean())}
    metrics["val_mae"] = (float((predict_attributes(predictor, val_x) - val_y).abs().mean())
                          if val_count else float("nan"))
    if val_count and metrics["val_mae"] > ev.predictor_mae_threshold:
        logging.warning(f"Predictor validation MAE {metrics['val_mae']:.4f} is above the threshold "
                        f"{ev.predictor_mae_threshold}")
    return predictor, metrics


def save_predictor(predictor: AttributePredictor, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    metadata = dict(metadata or {})
    metadata["trained"] = predictor.trained
    return save_checkpoint(path, "predictor", predictor.arch, predictor.state_dict(), metadata)


def load_predictor(path) -> AttributePredictor:
    payload = load_checkpoint(path, "predictor")
    predictor = AttributePredictor(payload["arch"])
    try:
        predictor.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        logging.error(f"Predictor checkpoint {path} does not match its architecture: {str(e)}")
        raise CheckpointError(f"Predictor checkpoint {path} does not match its architecture")
    predictor.eval()
    predictor.trained = bool(payload.get("metadata", {}).get("trained", False))
    return predictor
