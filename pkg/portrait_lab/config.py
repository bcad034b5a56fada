"""
Configuration settings for Portrait Lab

Two layers live here: ``AppConfig`` holds process-level settings (paths,
device) and ``ExperimentConfig`` holds every tunable of an experiment as one
versioned document whose hash is stamped on all produced artifacts.
"""

import os
import json
import hashlib
import pathlib
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List

from dotenv import load_dotenv

from .errors import ConfigError

# PORTRAIT_LAB_HOME, PORTRAIT_LAB_DEVICE and PORTRAIT_LAB_CONFIG may come from a .env file
load_dotenv()


class Colors:
    SUCCESS = "#00FF00"  # green
    WARNING = "#FFFF00"  # yellow
    ERROR = "#FF0000"    # red
    INFO = "#00FFFF"     # cyan

    GEOMETRY = "#FF9966"  # orange
    TEXTURE = "#66CCFF"   # light blue
    VIEW = "#CC99FF"      # violet

    IMPROVED = "#00FF00"
    REGRESSED = "#FF6666"


@dataclass
class AppConfig:
    """Application configuration"""
    APP_NAME: str = "Portrait Lab"
    VERSION: str = "0.1.0"

    # Paths
    HOME_DIR: pathlib.Path = pathlib.Path(os.environ.get("PORTRAIT_LAB_HOME", pathlib.Path.home()))
    APP_DIR: pathlib.Path = HOME_DIR / ".portrait-lab"
    DATA_DIR: pathlib.Path = APP_DIR / "data"

    # Artifact registry
    DB_PATH: pathlib.Path = DATA_DIR / "artifacts.db"

    # Compute
    DEVICE: str = os.environ.get("PORTRAIT_LAB_DEVICE", "cpu")

    # Experiment document used when --config is not given
    DEFAULT_CONFIG_PATH: str = os.environ.get("PORTRAIT_LAB_CONFIG", "")


# Create global config instance
config = AppConfig()


ATTRIBUTE_NAMES = ["elongation", "feature_size", "hue", "light_elevation"]

COEFFICIENT_BLOCKS = ["beta", "psi", "delta", "albedo", "light", "camera", "pose"]


def _default_dims() -> Dict[str, int]:
    return {"beta": 8, "psi": 4, "delta": 4, "albedo": 6, "light": 3, "camera": 2, "pose": 3}


def _default_ranges() -> Dict[str, List[List[float]]]:
    """Uniform sampling range of every coefficient component, [low, high]"""
    return {
        "beta": [[-1.0, 1.0]] * 8,
        "psi": [[-1.0, 1.0]] * 4,
        "delta": [[-1.0, 1.0]] * 4,
        "albedo": [[0.15, 0.95]] * 6,
        "light": [[-1.0, 1.0]] * 3,
        # field of view (radians), camera distance
        "camera": [[0.55, 0.75], [2.6, 3.0]],
        # yaw, pitch, roll (radians)
        "pose": [[-0.6, 0.6], [-0.25, 0.25], [-0.1, 0.1]],
    }


def _default_routing() -> Dict[str, str]:
    return {"elongation": "geo", "feature_size": "geo", "hue": "tex", "light_elevation": "tex"}


@dataclass
class SceneConfig:
    """Procedural portrait world"""
    dims: Dict[str, int] = field(default_factory=_default_dims)
    ranges: Dict[str, List[List[float]]] = field(default_factory=_default_ranges)
    attribute_names: List[str] = field(default_factory=lambda: list(ATTRIBUTE_NAMES))
    resolution: int = 32
    render_samples: int = 64
    ray_half_depth: float = 1.3
    sdf_temperature: float = 0.02
    density_scale: float = 40.0
    background: List[float] = field(default_factory=lambda: [0.08, 0.08, 0.1])
    ambient: float = 0.35
    # max per-pixel change for a 1e-3 coefficient perturbation
    smoothness_max_delta: float = 0.05


@dataclass
class GeneratorConfig:
    """Toy style-conditioned NeRF generator"""
    z_dim: int = 64
    w_dim: int = 64
    d_dim: int = 16
    mapping_layers: int = 4
    num_style_layers: int = 21
    geometry_layers: int = 7
    nerf_resolution: int = 16
    output_resolution: int = 32
    samples_per_ray: int = 24
    ray_half_depth: float = 1.2
    hidden: int = 64
    feature_channels: int = 32
    upsample_channels: int = 32
    positional_freqs: int = 4
    density_scale: float = 10.0
    render_chunk: int = 64
    # pretraining
    steps: int = 3000
    batch_size: int = 16
    lr: float = 1e-3
    r1_gamma: float = 1.0
    fid_threshold: float = 0.05
    eval_every: int = 250
    log_every: int = 50
    corpus_size: int = 2000


@dataclass
class EncoderConfig:
    """Morphable mapping networks, detail encoders, coefficient regressor"""
    hidden: int = 128
    mapping_layers: int = 5
    camera_layers: int = 3
    leaky_slope: float = 0.2
    detail_base_channels: int = 16
    detail_blocks: int = 4
    coefficient_mode: str = "regressor"
    regressor_steps: int = 3000
    regressor_lr: float = 1e-3
    regressor_batch_size: int = 32
    regressor_validation_fraction: float = 0.1
    regressor_beta_mae_threshold: float = 0.15


@dataclass
class InversionConfig:
    """Adversarial encoder training"""
    lambda_style: float = 0.5
    lambda_view: float = 5.0
    lambda_adv: float = 0.1
    lr_encoder: float = 1e-4
    lr_discriminator: float = 1e-4
    batch_size: int = 16
    steps: int = 2000
    discriminator_hidden: int = 128
    discriminator_layers: int = 3
    use_discriminator: bool = True
    real_data_only: bool = False
    morph_only: bool = False
    real_data_fraction: float = 0.0
    prior_samples: int = 1024
    collapse_warn_ratio: float = 0.5
    perceptual_seed: int = 1234
    perceptual_channels: List[int] = field(default_factory=lambda: [8, 16, 32])
    psnr_floor: float = 22.0
    log_every: int = 50


@dataclass
class FlowConfig:
    """Dual-branch conditional continuous normalizing flows"""
    hidden: int = 128
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 40
    train_solver_steps: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    train_steps: int = 500
    attribute_source: str = "oracle"
    routing: Dict[str, str] = field(default_factory=_default_routing)
    log_every: int = 50


@dataclass
class VideoConfig:
    """Video inversion, fine-tuning and editing"""
    frames: int = 32
    yaw_amplitude: float = 0.5
    expression_drift: float = 0.0
    light_drift: float = 0.0
    smoothing_weight: float = 0.5
    smooth_view: bool = False
    finetune_lr: float = 1e-4
    finetune_steps: int = 300
    finetune_max_steps: int = 500
    perceptual_weight: float = 1.0
    coefficient_mode: str = "oracle"
    log_every: int = 50


@dataclass
class EvalConfig:
    """Metrics, attribute predictor and figure grids"""
    psnr_cap: float = 99.0
    ssim_window: int = 7
    ssim_sigma: float = 1.5
    identity_threshold: float = 0.9
    predictor_steps: int = 3000
    predictor_lr: float = 1e-3
    predictor_batch_size: int = 32
    predictor_validation_fraction: float = 0.1
    predictor_mae_threshold: float = 0.05
    grid_yaws: List[float] = field(default_factory=lambda: [-0.5, -0.25, 0.0, 0.25, 0.5])
    sweep_values: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])


_SECTIONS = {
    "scene": SceneConfig,
    "generator": GeneratorConfig,
    "encoder": EncoderConfig,
    "inversion": InversionConfig,
    "flow": FlowConfig,
    "video": VideoConfig,
    "eval": EvalConfig,
}

CONFIG_VERSION = 1


@dataclass
class ExperimentConfig:
    """Every experiment default as one versioned document"""
    config_version: int = CONFIG_VERSION
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Create an ExperimentConfig from a dictionary, rejecting unknown keys"""
        if not isinstance(data, dict):
            raise ConfigError("Experiment config must be a mapping")

        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

        version = data.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"Unsupported config_version {version} (expected {CONFIG_VERSION})")

        experiment = cls()
        experiment.seed = int(data.get("seed", experiment.seed))
        for name, section_cls in _SECTIONS.items():
            if name in data:
                setattr(experiment, name, _section_from_dict(section_cls, data[name], name))
        return experiment

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _section_from_dict(section_cls, data: Any, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"Config section '{name}' must be a mapping")

    known = {f.name: f for f in fields(section_cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown keys in config section '{name}': {', '.join(unknown)}")

    section = section_cls()
    for key, value in data.items():
        default = getattr(section, key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be a number")
            value = type(default)(value)
        setattr(section, key, value)
    return section


def load_config(path) -> ExperimentConfig:
    """
    Load an experiment config from a JSON document

    Args:
        path: Path to the JSON file

    Returns:
        The parsed ExperimentConfig
    """
    path = pathlib.Path(path)
    try:
        with open(path, "r") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    return ExperimentConfig.from_dict(data)


def save_config(experiment: ExperimentConfig, path) -> None:
    """Write the experiment config as pretty-printed JSON"""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(experiment.to_dict(), handle, indent=2, sort_keys=True)
