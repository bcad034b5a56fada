"""
Portrait-video pipeline

Three stages on a sequence of frames of one subject:

    1. Canonicalize: extract per-frame coefficients, average the
       frame-irrelevant blocks (beta, albedo), encode every frame with the
       shared averages and smooth the code sequence.
    2. Fine-tune a copy of the generator around the fixed codes.
    3. Edit every frame's codes with the flow under the same targets and
       render with the tuned generator.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoints import TrainingLog, guard_finite, snapshot
from .config import ExperimentConfig, SceneConfig, VideoConfig
from .editing import edit_style
from .encoder import EncoderBundle
from .errors import ArgumentError, CorruptIndexError, NumericalError
from .flows import DualBranchFlow
from .generator import NeRFGenerator, render, render_batch
from .imaging import tensor_digest, write_json_atomic
from .losses import get_perceptual_extractor, perceptual_distance
from .metrics import psnr, summarize_psnr_gain
from .models import AttributeVector, FrameSequence, MorphCoeffs, SceneSpec, StyleCode, ViewCode
from .predictor import AttributePredictor, predict_attributes
from .scene import OracleLookup, block_bounds, attribute_oracle_batch, render_scenes, sample_scene_coeffs

MANIFEST_FORMAT = "portrait-lab-video"
MANIFEST_VERSION = 1
FRAME_IRRELEVANT = ("beta", "albedo")


# ---------------------------------------------------------------------------
# Toy videos
# ---------------------------------------------------------------------------

def make_toy_video(seed: int, frames: int = 32, yaw_amplitude: float = 0.5,
                   expression_drift: float = 0.0, light_drift: float = 0.0,
                   resolution: Optional[int] = None,
                   scene_config: Optional[SceneConfig] = None) -> Tuple[FrameSequence, List[SceneSpec]]:
    """
    A procedural clip of one identity turning its head

    Identity, displacement and camera stay fixed. Frame i has yaw
    A * sin(2 pi i / T); expression and light drift along the same phase
    when their amplitudes are non-zero. Everything is clipped to the
    configured ranges.

    Returns:
        The frame sequence and the scene behind every frame
    """
    scene_config = scene_config or SceneConfig()
    resolution = resolution or scene_config.resolution
    if frames < 1:
        raise ArgumentError(f"A video needs at least one frame (got {frames})")

    base = sample_scene_coeffs(seed, 1, 1, scene_config)[0]
    pose_low, pose_high = block_bounds(scene_config, "pose")
    psi_low, psi_high = block_bounds(scene_config, "psi")
    light_low, light_high = block_bounds(scene_config, "light")
    base_pose = base.coeffs.pose.copy()
    base_pose[0] = 0.0

    specs = []
    for i in range(frames):
        phase = 2.0 * math.pi * i / frames
        pose = base_pose.copy()
        pose[0] = yaw_amplitude * math.sin(phase)
        psi = base.coeffs.psi + expression_drift * math.sin(phase) * (psi_high - psi_low) * 0.5
        light = base.coeffs.light + light_drift * math.cos(phase) * (light_high - light_low) * 0.5
        coeffs = base.coeffs.replace(
            pose=np.clip(pose, pose_low, pose_high),
            psi=np.clip(psi, psi_low, psi_high),
            light=np.clip(light, light_low, light_high),
        )
        specs.append(SceneSpec(coeffs=coeffs, identity_id=0, seed=seed))

    images = render_scenes(specs, resolution, scene_config)
    sequence = FrameSequence(frames=images, coeffs=[s.coeffs for s in specs], identity_id=0)
    logging.info(f"Made a {frames}-frame toy video (seed={seed}, yaw amplitude={yaw_amplitude})")
    return sequence, specs


def video_lookup(frames: torch.Tensor, specs: List[SceneSpec]) -> OracleLookup:
    lookup = OracleLookup()
    for image, spec in zip(frames, specs):
        lookup.register(image, spec)
    return lookup


def crop_faces(frames: torch.Tensor) -> torch.Tensor:
    """Procedural frames are already aligned; real footage would be cropped here"""
    return frames


# ---------------------------------------------------------------------------
# Stage 1: shared coefficients and code smoothing
# ---------------------------------------------------------------------------

def extract_frame_irrelevant(coeff_list: List[MorphCoeffs]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Componentwise mean of beta and albedo over all frames

    When every frame carries the same block the first frame's values are
    returned as they are.
    """
    if not coeff_list:
        raise ArgumentError("Cannot average coefficients of an empty sequence")
    averages = []
    for name in FRAME_IRRELEVANT:
        rows = np.stack([getattr(c, name) for c in coeff_list])
        same = np.all(rows == rows[0:1], axis=0)
        averages.append(np.where(same, rows[0], rows.mean(axis=0)))
    return averages[0], averages[1]


def extract_sequence_coeffs(bundle: EncoderBundle, frames: torch.Tensor, mode: str) -> List[MorphCoeffs]:
    return [bundle.extract(frame, mode) for frame in frames]


def encode_sequence(bundle: EncoderBundle, frames: torch.Tensor, coeff_list: List[MorphCoeffs],
                    beta_avg: Optional[np.ndarray] = None,
                    albedo_avg: Optional[np.ndarray] = None) -> Tuple[StyleCode, ViewCode, List[MorphCoeffs]]:
    """
    Encode every frame with its own coefficients, the frame-irrelevant
    blocks replaced by the shared averages when given

    Returns:
        (T, D_w) style codes, (T, D_d) view codes and the coefficients used
    """
    if len(coeff_list) != frames.shape[0]:
        raise ArgumentError(f"{frames.shape[0]} frames but {len(coeff_list)} coefficient sets")
    used, geo, tex, views = [], [], [], []
    for frame, coeffs in zip(frames, coeff_list):
        coeffs = coeffs.replace(beta=beta_avg, albedo=albedo_avg)
        style, view = bundle.encode_coeffs(frame, coeffs)
        used.append(coeffs)
        geo.append(style.w_geo)
        tex.append(style.w_tex)
        views.append(view.d)
    return StyleCode(torch.stack(geo), torch.stack(tex)), ViewCode(torch.stack(views)), used


def _smooth(sequence: torch.Tensor, weight: float) -> torch.Tensor:
    smoothed = sequence.clone()
    smoothed[1:] = weight * sequence[1:] + (1.0 - weight) * sequence[:-1]
    return smoothed


def smooth_codes(style: StyleCode, view: ViewCode, weight: float = 0.5,
                 smooth_view: bool = False) -> Tuple[StyleCode, ViewCode]:
    """
    Two-frame weighted smoothing of a code sequence

    w~_1 = w_1 and w~_i = weight * w_i + (1 - weight) * w_{i-1}, with
    w_{i-1} taken from the unsmoothed sequence.
    """
    if not 0.0 <= weight <= 1.0:
        raise ArgumentError(f"Smoothing weight must lie in [0, 1] (got {weight})")
    if style.w_geo.shape[0] < 1:
        raise ArgumentError("Cannot smooth an empty code sequence")
    if weight == 1.0:
        return style, view
    smoothed_view = ViewCode(_smooth(view.d, weight)) if smooth_view else view
    return StyleCode(_smooth(style.w_geo, weight), _smooth(style.w_tex, weight)), smoothed_view


def codes_digest(style: StyleCode, view: ViewCode) -> str:
    return tensor_digest(style.w_geo, style.w_tex, view.d)


def sequence_attributes(coeff_list: List[MorphCoeffs], frames: Optional[torch.Tensor] = None,
                        predictor: Optional[AttributePredictor] = None,
                        scene_config: Optional[SceneConfig] = None) -> torch.Tensor:
    """Per-frame attributes: the oracle on the coefficients used, or a predictor on the frames"""
    if predictor is not None and frames is not None:
        return predict_attributes(predictor, frames).float()
    return attribute_oracle_batch(coeff_list, scene_config)


# ---------------------------------------------------------------------------
# Stage 2: fine-tuning around fixed codes
# ---------------------------------------------------------------------------

@dataclass
class FinetuneResult:
    generator: NeRFGenerator
    steps_run: int
    losses: List[float] = field(default_factory=list)
    psnr_before: List[float] = field(default_factory=list)
    psnr_after: List[float] = field(default_factory=list)
    codes_digest: str = ""

    @property
    def psnr_gain(self) -> float:
        return summarize_psnr_gain(self.psnr_before, self.psnr_after)


def frame_psnr(generator: NeRFGenerator, frames: torch.Tensor, style: StyleCode, view: ViewCode,
               chunk: int = 64) -> List[float]:
    return psnr(frames, render_batch(generator, style, view, chunk)).tolist()


def finetune_generator(generator: NeRFGenerator, frames: torch.Tensor, style: StyleCode, view: ViewCode,
                       video_config: Optional[VideoConfig] = None, steps: Optional[int] = None,
                       perceptual_seed: int = 1234, seed: int = 0,
                       out_dir=None) -> FinetuneResult:
    """
    Optimize a copy of the generator so render(w_i, d_i) matches frame i

    The loss is the pixel MSE plus ``perceptual_weight`` times the
    perceptual distance, over every frame each step. The codes are never
    updated; their digest is checked after the last step. The input
    generator is left untouched.
    """
    video_config = video_config or VideoConfig()
    steps = video_config.finetune_steps if steps is None else steps
    if steps > video_config.finetune_max_steps:
        logging.warning(f"Capping fine-tuning at {video_config.finetune_max_steps} steps (asked for {steps})")
        steps = video_config.finetune_max_steps
    if frames.shape[0] != style.w_geo.shape[0]:
        raise ArgumentError(f"{frames.shape[0]} frames but {style.w_geo.shape[0]} codes")

    torch.manual_seed(seed)
    style = style.detach()
    view = view.detach()
    digest = codes_digest(style, view)

    tuned = copy.deepcopy(generator)
    tuned.requires_grad_(True)
    tuned.train()
    before = frame_psnr(tuned, frames, style, view)

    extractor = get_perceptual_extractor(perceptual_seed)
    optimizer = torch.optim.Adam(tuned.parameters(), lr=video_config.finetune_lr)
    out_dir = Path(out_dir) if out_dir is not None else None
    log = TrainingLog(out_dir / "finetune_log.jsonl" if out_dir else None)
    result = FinetuneResult(tuned, 0, psnr_before=before, codes_digest=digest)
    last_good = snapshot(tuned)

    for step in range(1, steps + 1):
        rendered = render(tuned, style, view)
        l2 = F.mse_loss(rendered, frames)
        perceptual = perceptual_distance(rendered, frames, extractor)
        loss = l2 + video_config.perceptual_weight * perceptual
        guard_finite({"l2": l2, "perceptual": perceptual, "loss": loss}, step, last_good,
                     out_dir / "finetune" if out_dir else None, "finetune")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        result.losses.append(float(loss))
        result.steps_run = step
        log.append(step, l2=l2, perceptual=perceptual, loss=loss)
        if step % video_config.log_every == 0:
            last_good = snapshot(tuned)
            logging.info(f"finetune step {step}/{steps}: loss={loss.item():.5f} l2={l2.item():.5f}")

    if codes_digest(style, view) != digest:
        raise NumericalError("Code sequence changed during fine-tuning", {"before": digest})

    tuned.eval()
    tuned.requires_grad_(False)
    result.psnr_after = frame_psnr(tuned, frames, style, view)
    logging.info(f"Fine-tuned {steps} steps: mean frame PSNR {np.mean(before):.2f} -> "
                 f"{np.mean(result.psnr_after):.2f} dB")
    return result


# ---------------------------------------------------------------------------
# Stage 3: sequence editing
# ---------------------------------------------------------------------------

def edit_sequence(generator: NeRFGenerator, flow: Optional[DualBranchFlow], style: StyleCode, view: ViewCode,
                  attributes: torch.Tensor, edits: Dict[str, float],
                  attribute_names: Optional[List[str]] = None, chunk: int = 64) -> torch.Tensor:
    """
    Edit each frame's codes with the same targets and render with its own view

    Args:
        attributes: (T, K) attribute vectors the codes are conditioned on
        edits: Attribute targets; empty re-renders the sequence

    Returns:
        (T, 3, H, W) edited frames
    """
    if edits:
        if flow is None:
            raise ArgumentError("Editing a sequence needs a flow checkpoint")
        names = list(attribute_names or flow.attribute_names)
        geo, tex = [], []
        for i in range(style.w_geo.shape[0]):
            edited = edit_style(flow, style[i], AttributeVector(attributes[i].double().numpy(), names), edits)
            geo.append(edited.w_geo)
            tex.append(edited.w_tex)
        style = StyleCode(torch.stack(geo), torch.stack(tex))
    return render_batch(generator, style, view, chunk)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass
class SequenceCodes:
    """Encoded (and smoothed) code sequence of one video"""
    style: StyleCode
    view: ViewCode
    attributes: torch.Tensor
    attribute_names: List[str]
    coeffs: List[MorphCoeffs] = field(default_factory=list)
    identity_id: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.style.w_geo.shape[0]


def write_sequence_codes(codes: SequenceCodes, path) -> Path:
    """Write the code manifest of a video as JSON; float32 values round-trip exactly"""
    path = Path(path)
    payload = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "frames": len(codes),
        "identity_id": codes.identity_id,
        "attribute_names": list(codes.attribute_names),
        "records": [
            {
                "frame": i,
                "w_geo": codes.style.w_geo[i].tolist(),
                "w_tex": codes.style.w_tex[i].tolist(),
                "d": codes.view.d[i].tolist(),
                "attributes": codes.attributes[i].tolist(),
                "coeffs": codes.coeffs[i].to_dict() if codes.coeffs else None,
            }
            for i in range(len(codes))
        ],
    }
    payload.update(codes.metadata)
    write_json_atomic(payload, path)
    return path


def read_sequence_codes(path) -> SequenceCodes:
    path = Path(path)
    try:
        with open(path, "r") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        logging.error(f"Error reading video manifest {path}: {str(e)}")
        raise CorruptIndexError(f"Video manifest {path} is unreadable: {e}")
    if not isinstance(payload, dict) or payload.get("format") != MANIFEST_FORMAT:
        raise CorruptIndexError(f"{path} is not a portrait-lab video manifest")
    if payload.get("version") != MANIFEST_VERSION:
        raise CorruptIndexError(f"Unsupported video manifest version {payload.get('version')}")
    try:
        records = sorted(payload["records"], key=lambda r: r["frame"])
        columns = {key: torch.tensor([r[key] for r in records], dtype=torch.float32)
                   for key in ("w_geo", "w_tex", "d", "attributes")}
        coeffs = [MorphCoeffs.from_dict(r["coeffs"]) for r in records if r.get("coeffs")]
    except (KeyError, TypeError, ValueError) as e:
        logging.error(f"Malformed video manifest {path}: {str(e)}")
        raise CorruptIndexError(f"Video manifest {path} has a malformed record: {e}")
    metadata = {k: v for k, v in payload.items()
                if k not in ("format", "version", "frames", "identity_id", "attribute_names", "records")}
    return SequenceCodes(
        style=StyleCode(columns["w_geo"], columns["w_tex"]),
        view=ViewCode(columns["d"]),
        attributes=columns["attributes"],
        attribute_names=list(payload.get("attribute_names", [])),
        coeffs=coeffs if len(coeffs) == len(records) else [],
        identity_id=int(payload.get("identity_id", 0)),
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# End-to-end runs
# ---------------------------------------------------------------------------

def invert_sequence(bundle: EncoderBundle, frames: torch.Tensor, experiment: Optional[ExperimentConfig] = None,
                    predictor: Optional[AttributePredictor] = None, share_coefficients: bool = True,
                    smoothing: bool = True) -> SequenceCodes:
    """Stage 1 on a frame tensor"""
    experiment = experiment or ExperimentConfig()
    vcfg = experiment.video
    frames = crop_faces(frames)
    coeff_list = extract_sequence_coeffs(bundle, frames, vcfg.coefficient_mode)
    beta_avg, albedo_avg = extract_frame_irrelevant(coeff_list) if share_coefficients else (None, None)
    style, view, used = encode_sequence(bundle, frames, coeff_list, beta_avg, albedo_avg)
    if smoothing:
        style, view = smooth_codes(style, view, vcfg.smoothing_weight, vcfg.smooth_view)
    attributes = sequence_attributes(used, frames, predictor, experiment.scene)
    names = list(predictor.attribute_names) if predictor is not None else list(experiment.scene.attribute_names)
    metadata = {
        "shared_coefficients": share_coefficients,
        "smoothing_weight": vcfg.smoothing_weight if smoothing else 1.0,
        "smooth_view": bool(vcfg.smooth_view and smoothing),
        "coefficient_mode": vcfg.coefficient_mode,
    }
    return SequenceCodes(style, view, attributes, names, used, metadata=metadata)


@dataclass
class PipelineResult:
    codes: SequenceCodes
    generator: NeRFGenerator
    edited: torch.Tensor
    finetune: Optional[FinetuneResult] = None


def run_pipeline(frames: torch.Tensor, bundle: EncoderBundle, generator: NeRFGenerator,
                 flow: Optional[DualBranchFlow], edits: Dict[str, float],
                 experiment: Optional[ExperimentConfig] = None,
                 predictor: Optional[AttributePredictor] = None,
                 finetune_steps: Optional[int] = None, out_dir=None) -> PipelineResult:
    """Shared coefficients, smoothing, fine-tuning and editing"""
    experiment = experiment or ExperimentConfig()
    codes = invert_sequence(bundle, frames, experiment, predictor)
    tuned = finetune_generator(generator, frames, codes.style, codes.view, experiment.video, finetune_steps,
                               experiment.inversion.perceptual_seed, experiment.seed, out_dir)
    edited = edit_sequence(tuned.generator, flow, codes.style, codes.view, codes.attributes, edits,
                           codes.attribute_names)
    return PipelineResult(codes, tuned.generator, edited, tuned)


def run_independent_baseline(frames: torch.Tensor, bundle: EncoderBundle, generator: NeRFGenerator,
                             flow: Optional[DualBranchFlow], edits: Dict[str, float],
                             experiment: Optional[ExperimentConfig] = None,
                             predictor: Optional[AttributePredictor] = None) -> PipelineResult:
    """Every frame inverted and edited on its own with the pretrained generator"""
    codes = invert_sequence(bundle, frames, experiment, predictor, share_coefficients=False, smoothing=False)
    edited = edit_sequence(generator, flow, codes.style, codes.view, codes.attributes, edits,
                           codes.attribute_names)
    return PipelineResult(codes, generator, edited)
