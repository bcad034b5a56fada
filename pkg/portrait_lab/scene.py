"""
Procedural portrait world

Parametric heads built from soft signed-distance primitives, an analytic
volume renderer and a deterministic attribute oracle. Everything here is a
pure function of its inputs.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .config import SceneConfig, ATTRIBUTE_NAMES
from .errors import ArgumentError, UnknownImageError
from .imaging import image_digest, quantize
from .models import AttributeVector, MorphCoeffs, SceneSpec

SUPPORTED_RESOLUTIONS = (32, 64, 128)


def block_bounds(scene_config: SceneConfig, block: str) -> Tuple[np.ndarray, np.ndarray]:
    ranges = np.asarray(scene_config.ranges[block], dtype=np.float64)
    return ranges[:, 0], ranges[:, 1]


def normalize_block(values: np.ndarray, scene_config: SceneConfig, block: str) -> np.ndarray:
    """Map a coefficient block from its sampling range onto [-1, 1]"""
    low, high = block_bounds(scene_config, block)
    return 2.0 * (np.asarray(values, dtype=np.float64) - low) / (high - low) - 1.0


def denormalize_block(values: np.ndarray, scene_config: SceneConfig, block: str) -> np.ndarray:
    low, high = block_bounds(scene_config, block)
    return low + (np.asarray(values, dtype=np.float64) + 1.0) * 0.5 * (high - low)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Head rotation R = Rz(roll) Ry(yaw) Rx(pitch)"""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def sample_scene_coeffs(seed: int, count: int, identities: int,
                        scene_config: Optional[SceneConfig] = None) -> List[SceneSpec]:
    """
    Draw procedural scenes with a fixed number of identities

    Identity coefficients (beta, albedo) are drawn once per identity; the
    first ``identities`` samples cover every identity, the rest pick one
    uniformly. Expression, displacement, light, camera and pose are drawn
    per sample. All draws are uniform over the configured ranges.

    Args:
        seed: Sampler seed
        count: Number of scenes
        identities: Number of distinct (beta, albedo) pairs

    Returns:
        List of SceneSpec
    """
    scene_config = scene_config or SceneConfig()
    if count < 1 or identities < 1:
        raise ArgumentError(f"count and identities must be positive (got {count}, {identities})")
    if identities > count:
        raise ArgumentError(f"identities ({identities}) cannot exceed count ({count})")

    rng = np.random.default_rng(seed)

    def draw(block: str, n: int) -> np.ndarray:
        low, high = block_bounds(scene_config, block)
        return rng.uniform(low, high, size=(n, scene_config.dims[block]))

    betas = draw("beta", identities)
    albedos = draw("albedo", identities)
    identity_ids = np.concatenate([
        np.arange(identities),
        rng.integers(0, identities, size=count - identities),
    ])
    psi = draw("psi", count)
    delta = draw("delta", count)
    light = draw("light", count)
    camera = draw("camera", count)
    pose = draw("pose", count)

    specs = []
    for i in range(count):
        ident = int(identity_ids[i])
        coeffs = MorphCoeffs(
            beta=betas[ident].copy(), psi=psi[i], delta=delta[i], albedo=albedos[ident].copy(),
            light=light[i], camera=camera[i], pose=pose[i],
        )
        specs.append(SceneSpec(coeffs=coeffs, identity_id=ident, seed=seed))
    return specs


def _ellipsoid(points: np.ndarray, center, radii) -> Tuple[np.ndarray, np.ndarray]:
    """Approximate signed distance and unnormalized normal of an ellipsoid"""
    offset = points - np.asarray(center)
    radii = np.asarray(radii)
    scaled = offset / radii
    k = np.sqrt(np.sum(scaled ** 2, axis=-1))
    sdf = (k - 1.0) * np.min(radii, axis=-1)
    normal = offset / radii ** 2
    return sdf, normal


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scene_fields(points: np.ndarray, coeffs: MorphCoeffs, scene_config: SceneConfig):
    """
    Occupancy, colour and normal of the head at head-frame points

    Returns:
        occupancy (...,), colour (..., 3), normal (..., 3)
    """
    b = normalize_block(coeffs.beta, scene_config, "beta")
    p = normalize_block(coeffs.psi, scene_config, "psi")
    e = normalize_block(coeffs.delta, scene_config, "delta")
    skin = coeffs.albedo[0:3]
    feature_colour = coeffs.albedo[3:6]

    x, y = points[..., 0], points[..., 1]
    feature = 0.6 * b[4] + 0.4 * b[5]

    rx = 0.55 + 0.06 * b[0]
    ry = 0.72 + 0.10 * b[1] + 0.03 * e[3] * 0.5 * (1.0 - np.tanh(y / 0.2))
    rz = 0.55 + 0.04 * b[2] + 0.02 * e[0]
    head_radii = np.stack(np.broadcast_arrays(rx, ry, rz), axis=-1)
    head_sdf, head_normal = _ellipsoid(points, (0.0, 0.0, 0.0), head_radii)
    head_sdf = head_sdf + 0.012 * e[1] * np.cos(9.0 * y) + 0.012 * e[2] * np.cos(7.0 * x)

    eye_radius = 0.085 + 0.03 * feature + 0.008 * p[1]
    eye_x = 0.2 + 0.03 * b[3]
    eye_y = 0.12 + 0.03 * p[0]
    eye_z = 0.8 * rz
    primitives = [(head_sdf, head_normal, skin, 1.0)]
    for side in (-1.0, 1.0):
        sdf, normal = _ellipsoid(points, (side * eye_x, eye_y, eye_z), (eye_radius,) * 3)
        primitives.append((sdf, normal, 0.6 * feature_colour, 4.0))

    nose_radii = (0.07 + 0.015 * feature + 0.01 * b[6], 0.1 + 0.02 * b[6], 0.09)
    sdf, normal = _ellipsoid(points, (0.0, -0.04 + 0.02 * p[2], 0.95 * rz), nose_radii)
    primitives.append((sdf, normal, 0.9 * skin, 2.0))

    mouth_radii = (0.16 + 0.03 * p[3] + 0.02 * feature, 0.035 + 0.012 * p[2], 0.06)
    sdf, normal = _ellipsoid(points, (0.0, -0.33 + 0.03 * b[7] + 0.02 * p[3], 0.78 * rz), mouth_radii)
    primitives.append((sdf, normal, 0.9 * feature_colour, 4.0))

    tau = scene_config.sdf_temperature
    occupancy = np.zeros(points.shape[:-1])
    weight_total = np.zeros(points.shape[:-1])
    colour = np.zeros(points.shape)
    normal_sum = np.zeros(points.shape)
    for sdf, normal, rgb, priority in primitives:
        occ = _sigmoid(-sdf / tau)
        weight = occ * priority
        occupancy = occupancy + occ
        weight_total = weight_total + weight
        colour = colour + weight[..., None] * np.asarray(rgb)
        unit = normal / (np.linalg.norm(normal, axis=-1, keepdims=True) + 1e-12)
        normal_sum = normal_sum + weight[..., None] * unit

    colour = colour / (weight_total[..., None] + 1e-12)
    normal_sum = normal_sum / (np.linalg.norm(normal_sum, axis=-1, keepdims=True) + 1e-12)
    return occupancy, colour, normal_sum


def light_direction(coeffs: MorphCoeffs, scene_config: SceneConfig) -> np.ndarray:
    """Directional light in camera space; elevation grows with light[1]"""
    ln = normalize_block(coeffs.light, scene_config, "light")
    direction = np.array([0.8 * ln[0], ln[1], 1.0 + 0.3 * ln[2]])
    return direction / np.linalg.norm(direction)


def render_reference(spec: SceneSpec, resolution: int,
                     scene_config: Optional[SceneConfig] = None,
                     return_alpha: bool = False):
    """
    Analytic render of a procedural scene

    The head sits at the origin rotated by the pose; a pinhole camera at
    distance C[1] with field of view C[0] looks down -z. Density is a soft
    occupancy of the signed-distance primitives, composited front to back
    with Lambert shading under the scene light.

    Args:
        spec: Scene to render
        resolution: One of 32, 64, 128

    Returns:
        (3, H, W) float32 tensor in [0, 1]; with ``return_alpha`` also the
        (H, W) coverage mask
    """
    scene_config = scene_config or SceneConfig()
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ArgumentError(f"Unsupported resolution {resolution}; expected one of {SUPPORTED_RESOLUTIONS}")
    coeffs = spec.coeffs
    coeffs.validate(scene_config.dims)

    fov, distance = coeffs.camera[0], coeffs.camera[1]
    rotation = rotation_matrix(*coeffs.pose)

    pixel = (np.arange(resolution) + 0.5) / resolution
    u = 2.0 * pixel - 1.0
    v = 1.0 - 2.0 * pixel
    vv, uu = np.meshgrid(v, u, indexing="ij")
    half = np.tan(0.5 * fov)
    directions = np.stack([uu * half, vv * half, -np.ones_like(uu)], axis=-1)
    directions = directions / np.linalg.norm(directions, axis=-1, keepdims=True)

    samples = scene_config.render_samples
    depth = scene_config.ray_half_depth
    step = 2.0 * depth / samples
    t_values = distance - depth + (np.arange(samples) + 0.5) * step
    origin = np.array([0.0, 0.0, distance])
    points_world = origin + directions[:, :, None, :] * t_values[None, None, :, None]
    points_head = points_world @ rotation

    occupancy, colour, normal_head = _scene_fields(points_head, coeffs, scene_config)
    normal_world = normal_head @ rotation.T
    light = light_direction(coeffs, scene_config)
    lambert = np.clip(np.sum(normal_world * light, axis=-1), 0.0, None)
    shading = scene_config.ambient + (1.0 - scene_config.ambient) * lambert
    radiance = colour * shading[..., None]

    sigma = scene_config.density_scale * occupancy
    alpha = 1.0 - np.exp(-sigma * step)
    transmittance = np.cumprod(np.concatenate([np.ones_like(alpha[..., :1]), 1.0 - alpha], axis=-1), axis=-1)
    weights = transmittance[..., :-1] * alpha
    background = np.asarray(scene_config.background)
    rgb = np.sum(weights[..., None] * radiance, axis=-2) + transmittance[..., -1:] * background

    image = torch.from_numpy(np.clip(rgb, 0.0, 1.0).transpose(2, 0, 1).copy()).to(torch.float32)
    if return_alpha:
        coverage = torch.from_numpy(1.0 - transmittance[..., -1]).to(torch.float32)
        return image, coverage
    return image


def attribute_oracle(spec: SceneSpec, scene_config: Optional[SceneConfig] = None) -> AttributeVector:
    """
    Deterministic attribute annotation of a scene

    With b = beta, n = albedo, l = light each normalized from their range to
    [-1, 1]:

        elongation      = 0.5 + 0.5  * (0.7 * b[1] - 0.3 * b[0])
        feature_size    = 0.5 + 0.5  * (0.6 * b[4] + 0.4 * b[5])
        hue             = 0.5 + 0.25 * (n[0] - n[2])
        light_elevation = 0.5 + 0.5  * l[1]

    Geometry attributes read only beta, texture attributes only albedo and
    light.
    """
    scene_config = scene_config or SceneConfig()
    if list(scene_config.attribute_names) != ATTRIBUTE_NAMES:
        raise ArgumentError(f"The oracle annotates exactly {ATTRIBUTE_NAMES}")
    coeffs = spec.coeffs
    b = normalize_block(coeffs.beta, scene_config, "beta")
    n = normalize_block(coeffs.albedo, scene_config, "albedo")
    ln = normalize_block(coeffs.light, scene_config, "light")
    values = np.array([
        0.5 + 0.5 * (0.7 * b[1] - 0.3 * b[0]),
        0.5 + 0.5 * (0.6 * b[4] + 0.4 * b[5]),
        0.5 + 0.25 * (n[0] - n[2]),
        0.5 + 0.5 * ln[1],
    ])
    return AttributeVector(np.clip(values, 0.0, 1.0), list(ATTRIBUTE_NAMES))


def attribute_oracle_batch(coeff_list: List[MorphCoeffs],
                           scene_config: Optional[SceneConfig] = None) -> torch.Tensor:
    """Oracle attributes of several coefficient bundles as a (N, K) tensor"""
    rows = [attribute_oracle(SceneSpec(coeffs=c), scene_config).values for c in coeff_list]
    return torch.as_tensor(np.stack(rows), dtype=torch.float32)


def render_scenes(specs: List[SceneSpec], resolution: int,
                  scene_config: Optional[SceneConfig] = None) -> torch.Tensor:
    """Render and quantize a list of scenes into a (N, 3, H, W) tensor"""
    images = [quantize(render_reference(spec, resolution, scene_config)) for spec in specs]
    logging.info(f"Rendered {len(images)} procedural scenes at {resolution}x{resolution}")
    return torch.stack(images)


class OracleLookup:
    """Maps image content back to the scene that produced it"""

    def __init__(self):
        self._scenes: Dict[str, SceneSpec] = {}

    def register(self, image: torch.Tensor, spec: SceneSpec) -> None:
        self._scenes[image_digest(image)] = spec

    def __contains__(self, image: torch.Tensor) -> bool:
        return image_digest(image) in self._scenes

    def __len__(self) -> int:
        return len(self._scenes)

    def lookup(self, image: torch.Tensor) -> SceneSpec:
        key = image_digest(image)
        if key not in self._scenes:
            raise UnknownImageError("Image does not match any scene known to the oracle")
        return self._scenes[key]


def make_oracle_lookup(dataset) -> OracleLookup:
    """Build an oracle lookup from a DatasetHandle"""
    lookup = OracleLookup()
    for index, spec in enumerate(dataset.specs):
        lookup.register(dataset.image(index), spec)
    return lookup
