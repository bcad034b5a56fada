"""
Invert-then-edit on single images and texture transfer
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import torch

from .encoder import EncoderBundle, load_encoder, load_regressor, map_morph_to_codes
from .errors import ArgumentError, UntrainedModelError
from .flows import BRANCHES, DualBranchFlow, edit_code, invert_code, load_flow
from .generator import NeRFGenerator, load_generator, render
from .models import AttributeVector, MorphCoeffs, StyleCode, ViewCode
from .predictor import AttributePredictor, load_predictor, predict_attribute_vector
from .scene import OracleLookup, attribute_oracle


@dataclass
class Inversion:
    """Codes of one encoded image with the attributes they are conditioned on"""
    style: StyleCode
    view: ViewCode
    attributes: AttributeVector
    coeffs: MorphCoeffs


def parse_edits(pairs: List[str]) -> Dict[str, float]:
    """Parse ``name=value`` strings as given on the command line"""
    edits = {}
    for pair in pairs:
        if "=" not in pair:
            raise ArgumentError(f"Edit '{pair}' is not of the form attribute=value")
        name, value = pair.split("=", 1)
        try:
            edits[name.strip()] = float(value)
        except ValueError:
            raise ArgumentError(f"Edit value '{value}' for '{name}' is not a number")
    return edits


def edit_style(flow: DualBranchFlow, style: StyleCode, attributes: AttributeVector,
               edits: Dict[str, float]) -> StyleCode:
    """
    Route each edited attribute to its branch and run invert/forward once
    per touched branch, conditioned on the fully edited attribute vector

    Branches without edits return their input code object unchanged.
    """
    for name, value in edits.items():
        flow.branch_for(name)
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ArgumentError(f"Target for '{name}' must lie in [0, 1] (got {value})")
    if not edits:
        return style

    edited_attributes = attributes.with_targets(edits)
    touched = {flow.branch_for(name) for name in edits}
    codes = {"geo": style.w_geo, "tex": style.w_tex}
    with torch.no_grad():
        for s in BRANCHES:
            if s not in touched:
                continue
            a = attributes.to_tensor(codes[s].dtype)
            a_edited = edited_attributes.to_tensor(codes[s].dtype)
            z = invert_code(flow, s, codes[s], a)
            codes[s] = edit_code(flow, s, z, a_edited)
    return StyleCode(codes["geo"], codes["tex"])


class EditingSession:
    """Generator, encoder, flow and attribute sources for editing portraits"""

    def __init__(self, generator: NeRFGenerator, bundle: EncoderBundle, flow: Optional[DualBranchFlow] = None,
                 predictor: Optional[AttributePredictor] = None, mode: str = "oracle"):
        self.generator = generator
        self.bundle = bundle
        self.flow = flow
        self.predictor = predictor
        self.mode = mode

    @property
    def lookup(self) -> Optional[OracleLookup]:
        return self.bundle.lookup

    def attributes_of(self, image: torch.Tensor) -> AttributeVector:
        """Oracle attributes for known scenes, predicted ones otherwise"""
        if self.lookup is not None and image in self.lookup:
            return attribute_oracle(self.lookup.lookup(image), self.bundle.scene_config)
        if self.predictor is None:
            raise UntrainedModelError("Image is unknown to the oracle and no attribute predictor is loaded")
        return predict_attribute_vector(self.predictor, image)

    def invert(self, image: torch.Tensor, overrides: Optional[Dict[str, np.ndarray]] = None) -> Inversion:
        coeffs = self.bundle.extract(image, self.mode, overrides)
        style, view = self.bundle.encode_coeffs(image, coeffs)
        return Inversion(style, view, self.attributes_of(image), coeffs)

    def render(self, style: StyleCode, view: ViewCode) -> torch.Tensor:
        with torch.no_grad():
            return render(self.generator, style, view)

    def render_inversion(self, image: torch.Tensor) -> torch.Tensor:
        inversion = self.invert(image)
        return self.render(inversion.style, inversion.view)

    def edit_codes(self, inversion: Inversion, edits: Dict[str, float]) -> StyleCode:
        if edits and self.flow is None:
            raise UntrainedModelError("Editing needs a flow checkpoint")
        if not edits:
            return inversion.style
        return edit_style(self.flow, inversion.style, inversion.attributes, edits)

    def edit_image(self, image: torch.Tensor, edits: Dict[str, float]) -> torch.Tensor:
        """
        Encode, edit the routed branches and render with the original view

        An empty edit map renders the plain inversion.
        """
        inversion = self.invert(image)
        return self.render(self.edit_codes(inversion, edits), inversion.view)

    def texture_transfer(self, image_geo: torch.Tensor, image_tex: torch.Tensor) -> torch.Tensor:
        """Geometry code and view of the first image, texture code of the second"""
        first = self.invert(image_geo)
        second = self.invert(image_tex)
        return self.render(StyleCode(first.style.w_geo, second.style.w_tex), first.view)

    def view_for_yaw(self, coeffs: MorphCoeffs, yaw: float) -> ViewCode:
        """View code of the same camera with the head turned to ``yaw``"""
        pose = coeffs.pose.copy()
        pose[0] = yaw
        with torch.no_grad():
            return map_morph_to_codes(self.bundle.encoder, coeffs.replace(pose=pose), self.bundle.scene_config).d


def load_session(generator_path, encoder_path, flow_path=None, predictor_path=None, regressor_path=None,
                 lookup: Optional[OracleLookup] = None, mode: str = "oracle", scene_config=None) -> EditingSession:
    """Open every checkpoint an editing run needs"""
    generator = load_generator(generator_path)
    encoder = load_encoder(encoder_path)
    regressor = load_regressor(regressor_path) if regressor_path else None
    flow = load_flow(flow_path) if flow_path else None
    predictor = load_predictor(predictor_path) if predictor_path else None
    logging.info(f"Loaded editing session (mode={mode}, flow={'yes' if flow else 'no'}, "
                 f"predictor={'yes' if predictor else 'no'})")
    bundle = EncoderBundle(encoder, regressor, lookup, scene_config)
    return EditingSession(generator, bundle, flow, predictor, mode)
