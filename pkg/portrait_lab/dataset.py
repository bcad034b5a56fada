"""
On-disk dataset layout for procedural renders and generator corpora

A dataset is a directory with ``index.json`` plus one PNG per sample. The
index records, per sample, the identity, the morphable coefficients, the
attribute vector and the image filename. Corpora add per-sample code
vectors to the same records.
"""

import json
import shutil
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from .errors import ArgumentError, CorruptIndexError, DatasetExistsError, DatasetError
from .imaging import load_png, quantize, save_png, write_json_atomic
from .models import AttributeVector, SceneSpec

INDEX_NAME = "index.json"
INDEX_FORMAT = "portrait-lab-dataset"
INDEX_VERSION = 1


@dataclass
class DatasetHandle:
    """An opened dataset directory"""
    path: Path
    specs: List[SceneSpec] = field(default_factory=list)
    attributes: List[AttributeVector] = field(default_factory=list)
    filenames: List[str] = field(default_factory=list)
    identity_index: Dict[int, List[int]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    _cache: Dict[int, torch.Tensor] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.filenames)

    def image(self, index: int) -> torch.Tensor:
        if index not in self._cache:
            self._cache[index] = load_png(self.path / self.filenames[index])
        return self._cache[index]

    def images(self, indices: Optional[List[int]] = None) -> torch.Tensor:
        indices = range(len(self)) if indices is None else indices
        return torch.stack([self.image(i) for i in indices])

    def attribute_tensor(self) -> torch.Tensor:
        return torch.as_tensor(np.stack([a.values for a in self.attributes]), dtype=torch.float32)


def _prepare_directory(path: Path, overwrite: bool) -> None:
    if path.exists():
        if not overwrite:
            raise DatasetExistsError(f"Dataset path {path} already exists (pass overwrite to replace it)")
        shutil.rmtree(path)
    path.mkdir(parents=True)


def write_records(path, records: List[Dict[str, Any]], images: torch.Tensor,
                  metadata: Optional[Dict[str, Any]] = None, overwrite: bool = False) -> Path:
    """
    Write images plus arbitrary per-sample records under the dataset layout

    Args:
        path: Target directory
        records: One JSON-serializable record per image
        images: (N, 3, H, W) tensor; quantized to 8 bits on write
        metadata: Extra top-level index fields
        overwrite: Replace an existing directory

    Returns:
        The dataset directory
    """
    path = Path(path)
    if len(records) != images.shape[0]:
        raise ArgumentError(f"{len(records)} records but {images.shape[0]} images")
    _prepare_directory(path, overwrite)

    samples = []
    identities: Dict[str, List[int]] = {}
    for i, record in enumerate(records):
        filename = f"{i:06d}.png"
        save_png(quantize(images[i]), path / filename)
        sample = dict(record)
        sample["sample_id"] = i
        sample["image"] = filename
        identity = int(sample.get("identity_id", -1))
        identities.setdefault(str(identity), []).append(i)
        samples.append(sample)

    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "count": len(samples),
        "identities": identities,
        "samples": samples,
    }
    payload.update(metadata or {})
    write_json_atomic(payload, path / INDEX_NAME)
    logging.info(f"Wrote {len(samples)} samples to {path}")
    return path


def read_index(path) -> Dict[str, Any]:
    """Load and validate ``index.json``"""
    path = Path(path)
    index_path = path / INDEX_NAME
    if not index_path.exists():
        raise DatasetError(f"No dataset index at {index_path}")
    try:
        with open(index_path, "r") as handle:
            payload = json.load(handle)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        logging.error(f"Corrupt dataset index {index_path}: {str(e)}")
        raise CorruptIndexError(f"Dataset index {index_path} is corrupt: {e}")

    if not isinstance(payload, dict) or payload.get("format") != INDEX_FORMAT:
        raise CorruptIndexError(f"{index_path} is not a portrait-lab dataset index")
    if payload.get("version") != INDEX_VERSION:
        raise CorruptIndexError(f"Unsupported dataset index version {payload.get('version')}")
    samples = payload.get("samples")
    if not isinstance(samples, list) or len(samples) != payload.get("count"):
        raise CorruptIndexError(f"Dataset index {index_path} has an inconsistent sample list")
    return payload


def write_dataset(specs: List[SceneSpec], images: torch.Tensor, attributes: List[AttributeVector],
                  path, overwrite: bool = False, metadata: Optional[Dict[str, Any]] = None) -> DatasetHandle:
    """
    Persist procedural scenes, their renders and oracle attributes

    Coefficients and attributes are stored as JSON floats, which round-trip
    float64 values exactly.
    """
    if not (len(specs) == images.shape[0] == len(attributes)):
        raise ArgumentError(f"Misaligned lengths: {len(specs)} specs, {images.shape[0]} images, "
                            f"{len(attributes)} attributes")
    records = []
    for spec, attrs in zip(specs, attributes):
        record = spec.to_dict()
        record["attributes"] = attrs.values.tolist()
        record["attribute_names"] = list(attrs.names)
        records.append(record)
    write_records(path, records, images, metadata=metadata, overwrite=overwrite)
    return read_dataset(path)


def read_dataset(path) -> DatasetHandle:
    """Open a dataset written by ``write_dataset``"""
    path = Path(path)
    payload = read_index(path)
    handle = DatasetHandle(path=path, metadata={k: v for k, v in payload.items() if k != "samples"})
    try:
        for sample in payload["samples"]:
            handle.specs.append(SceneSpec.from_dict(sample))
            handle.attributes.append(AttributeVector(sample["attributes"], list(sample["attribute_names"])))
            handle.filenames.append(sample["image"])
            handle.identity_index.setdefault(int(sample["identity_id"]), []).append(int(sample["sample_id"]))
    except (KeyError, TypeError, ValueError) as e:
        logging.error(f"Malformed sample record in {path}: {str(e)}")
        raise CorruptIndexError(f"Dataset index at {path} has a malformed sample record: {e}")
    return handle
