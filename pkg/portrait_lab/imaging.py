"""
Image and file helpers shared by the datasets, corpora and grids
"""

import os
import json
import random
import hashlib
import logging
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
import torch
from PIL import Image

from .errors import DatasetError


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; return a dedicated torch generator"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def quantize(image: torch.Tensor) -> torch.Tensor:
    """Snap values in [0, 1] to the 8-bit grid so a PNG round trip is exact"""
    return torch.round(image.clamp(0.0, 1.0) * 255.0) / 255.0


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) float tensor -> (H, W, 3) uint8 array"""
    array = torch.round(image.detach().clamp(0.0, 1.0) * 255.0).to(torch.uint8)
    return array.permute(1, 2, 0).cpu().numpy()


def image_digest(image: torch.Tensor) -> str:
    """Content hash of an image after 8-bit quantization"""
    return hashlib.sha256(to_uint8(image).tobytes()).hexdigest()


def save_png(image: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(image)).save(str(path), format="PNG")


def load_png(path) -> torch.Tensor:
    """Load an RGB PNG as a (3, H, W) float tensor in [0, 1]"""
    try:
        with Image.open(str(path)) as handle:
            array = np.asarray(handle.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        logging.error(f"Error reading image {path}: {str(e)}")
        raise DatasetError(f"Cannot read image {path}: {e}")
    return torch.from_numpy(array.copy()).permute(2, 0, 1).to(torch.float32) / 255.0


def write_json_atomic(payload: Dict[str, Any], path) -> None:
    """Write JSON to a temp file in the target directory, then rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle, indent=1, sort_keys=True)
        os.replace(tmp_name, path)
    except OSError as e:
        logging.error(f"Error writing {path}: {str(e)}")
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tensor_digest(*tensors: torch.Tensor) -> str:
    """Hash of raw tensor bytes, used to check codes stay fixed"""
    digest = hashlib.sha256()
    for tensor in tensors:
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
