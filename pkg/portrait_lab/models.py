"""
Data models for Portrait Lab
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from .config import COEFFICIENT_BLOCKS, ATTRIBUTE_NAMES
from .errors import ArgumentError


@dataclass
class MorphCoeffs:
    """Parametric-prior coefficient bundle of one portrait"""
    beta: np.ndarray      # shape, identity-defining geometry
    psi: np.ndarray       # expression
    delta: np.ndarray     # displacement detail
    albedo: np.ndarray    # base colours
    light: np.ndarray     # directional light
    camera: np.ndarray    # field of view, distance
    pose: np.ndarray      # yaw, pitch, roll (radians)

    def __post_init__(self):
        for name in COEFFICIENT_BLOCKS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def g(self) -> np.ndarray:
        """Geometry coefficients [beta; psi; delta]"""
        return np.concatenate([self.beta, self.psi, self.delta])

    @property
    def t(self) -> np.ndarray:
        """Texture coefficients [albedo; light]"""
        return np.concatenate([self.albedo, self.light])

    @property
    def c(self) -> np.ndarray:
        """View coefficients [camera; pose]"""
        return np.concatenate([self.camera, self.pose])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name in COEFFICIENT_BLOCKS])

    @classmethod
    def from_vector(cls, vector, dims: Dict[str, int]) -> 'MorphCoeffs':
        """Split a flat vector back into blocks using the configured dimensions"""
        vector = np.asarray(vector, dtype=np.float64)
        expected = sum(dims[name] for name in COEFFICIENT_BLOCKS)
        if vector.shape != (expected,):
            raise ArgumentError(f"Coefficient vector has shape {vector.shape}, expected ({expected},)")
        blocks = {}
        offset = 0
        for name in COEFFICIENT_BLOCKS:
            blocks[name] = vector[offset:offset + dims[name]]
            offset += dims[name]
        return cls(**blocks)

    def validate(self, dims: Dict[str, int]) -> None:
        for name in COEFFICIENT_BLOCKS:
            value = getattr(self, name)
            if value.shape != (dims[name],):
                raise ArgumentError(f"Coefficient block '{name}' has shape {value.shape}, expected ({dims[name]},)")
            if not np.all(np.isfinite(value)):
                raise ArgumentError(f"Coefficient block '{name}' is not finite")
        if np.any(np.abs(self.pose) > np.pi):
            raise ArgumentError("Pose angles must lie in [-pi, pi]")

    def replace(self, **blocks) -> 'MorphCoeffs':
        values = {name: getattr(self, name).copy() for name in COEFFICIENT_BLOCKS}
        values.update({name: np.asarray(v, dtype=np.float64) for name, v in blocks.items() if v is not None})
        return MorphCoeffs(**values)

    def to_dict(self) -> Dict[str, List[float]]:
        return {name: getattr(self, name).tolist() for name in COEFFICIENT_BLOCKS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MorphCoeffs':
        """Create a MorphCoeffs instance from a dictionary"""
        return cls(**{name: data[name] for name in COEFFICIENT_BLOCKS})


@dataclass
class SceneSpec:
    """A procedural scene: coefficients plus identity label"""
    coeffs: MorphCoeffs
    identity_id: int = 0
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"coeffs": self.coeffs.to_dict(), "identity_id": self.identity_id, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SceneSpec':
        """Create a SceneSpec instance from a dictionary"""
        return cls(
            coeffs=MorphCoeffs.from_dict(data["coeffs"]),
            identity_id=int(data.get("identity_id", 0)),
            seed=int(data.get("seed", 0)),
        )


@dataclass
class AttributeVector:
    """K attribute values, each normalized to [0, 1]"""
    values: np.ndarray
    names: List[str] = field(default_factory=lambda: list(ATTRIBUTE_NAMES))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.names),):
            raise ArgumentError(f"Attribute vector has shape {self.values.shape}, expected ({len(self.names)},)")

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def with_targets(self, targets: Dict[str, float]) -> 'AttributeVector':
        values = self.values.copy()
        for name, value in targets.items():
            values[self.names.index(name)] = value
        return AttributeVector(values, list(self.names))

    def to_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.values, dtype=dtype)


@dataclass
class StyleCode:
    """Geometry and texture style codes, shape (..., D_w)"""
    w_geo: torch.Tensor
    w_tex: torch.Tensor

    def detach(self) -> 'StyleCode':
        return StyleCode(self.w_geo.detach(), self.w_tex.detach())

    def concat(self) -> torch.Tensor:
        return torch.cat([self.w_geo, self.w_tex], dim=-1)

    def __getitem__(self, index) -> 'StyleCode':
        return StyleCode(self.w_geo[index], self.w_tex[index])


@dataclass
class ViewCode:
    """Camera conditioning code, shape (..., D_d)"""
    d: torch.Tensor

    def detach(self) -> 'ViewCode':
        return ViewCode(self.d.detach())

    def __getitem__(self, index) -> 'ViewCode':
        return ViewCode(self.d[index])


@dataclass
class DetailCodes:
    """Residual codes predicted from image content"""
    delta_geo: torch.Tensor
    delta_tex: torch.Tensor


@dataclass
class MorphCodes:
    """Codes obtained by mapping morphable coefficients"""
    w_geo_morph: torch.Tensor
    w_tex_morph: torch.Tensor
    d: ViewCode


@dataclass
class LossWeights:
    """Weights of the reconstruction and adversarial terms"""
    lambda_style: float = 0.5
    lambda_view: float = 5.0
    lambda_adv: float = 0.1

    def __post_init__(self):
        for name in ("lambda_style", "lambda_view", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be nonnegative")


@dataclass
class InversionCorpus:
    """Style-mixed generator samples with their ground-truth codes"""
    images: torch.Tensor   # (N, 3, H, W), quantized to 8 bits
    w_geo: torch.Tensor    # (N, D_w)
    w_tex: torch.Tensor    # (N, D_w)
    d: torch.Tensor        # (N, D_d)
    camera: torch.Tensor   # (N, D_C + D_theta), camera prior draw behind d
    render_batch: int = 64
    has_codes: bool = True

    def __len__(self) -> int:
        return self.images.shape[0]

    def style(self, index=slice(None)) -> StyleCode:
        return StyleCode(self.w_geo[index], self.w_tex[index])

    def view(self, index=slice(None)) -> ViewCode:
        return ViewCode(self.d[index])


@dataclass
class FrameSequence:
    """Ordered frames of one subject with per-frame codes"""
    frames: torch.Tensor                       # (T, 3, H, W)
    coeffs: List[MorphCoeffs] = field(default_factory=list)
    identity_id: int = 0
    styles: Optional[StyleCode] = None         # (T, D_w) each
    views: Optional[ViewCode] = None           # (T, D_d)

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] == 0:
            raise ArgumentError("A frame sequence needs at least one (3, H, W) frame")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class MetricReport:
    """Per-sample metric values, their aggregates and provenance"""
    per_sample: Dict[str, List[float]] = field(default_factory=dict)
    aggregates: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    REQUIRED_METADATA = ("config_hash", "checkpoint_hashes", "seed", "code_version")

    def add(self, metric: str, values) -> None:
        self.per_sample[metric] = [float(v) for v in values]
        self.aggregates[metric] = float(np.mean(self.per_sample[metric])) if self.per_sample[metric] else float("nan")

    def is_self_describing(self) -> bool:
        return all(key in self.metadata for key in self.REQUIRED_METADATA)

    def to_dict(self) -> Dict[str, Any]:
        return {"per_sample": self.per_sample, "aggregates": self.aggregates, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricReport':
        """Create a MetricReport instance from a dictionary"""
        return cls(
            per_sample={k: list(v) for k, v in data.get("per_sample", {}).items()},
            aggregates=dict(data.get("aggregates", {})),
            metadata=dict(data.get("metadata", {})),
        )
