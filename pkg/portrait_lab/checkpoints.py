"""
Versioned checkpoint files

A checkpoint is one torch-serialized mapping with a format tag, a version,
the model kind, the architecture config and the parameter blobs. Writes go
to a temp file that is renamed over the target.
"""

import os
import json
import hashlib
import logging
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from .errors import CheckpointError, NumericalError

CHECKPOINT_FORMAT = "portrait-lab"
CHECKPOINT_VERSION = 1
KINDS = ("generator", "encoder", "regressor", "predictor", "flow")


def save_checkpoint(path, kind: str, arch: Dict[str, Any], state_dict: Dict[str, torch.Tensor],
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Atomically write a checkpoint

    Args:
        path: Target file
        kind: One of KINDS
        arch: Architecture config needed to rebuild the module
        state_dict: Parameters
        metadata: Training metadata (steps, seed, config hash, ...)

    Returns:
        The written path
    """
    if kind not in KINDS:
        raise CheckpointError(f"Unknown checkpoint kind '{kind}'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "arch": arch,
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        "metadata": metadata or {},
    }
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp_name)
        os.replace(tmp_name, path)
    except (OSError, RuntimeError) as e:
        logging.error(f"Error saving {kind} checkpoint to {path}: {str(e)}")
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise CheckpointError(f"Could not write checkpoint {path}: {e}")
    return path


def load_checkpoint(path, kind: str) -> Dict[str, Any]:
    """
    Read and validate a checkpoint

    Returns:
        The payload mapping (arch, state_dict, metadata, ...)
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
    except Exception as e:
        logging.error(f"Error loading checkpoint {path}: {str(e)}")
        raise CheckpointError(f"Checkpoint {path} is unreadable: {e}")

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a portrait-lab checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has unsupported checkpoint version {payload.get('version')}")
    if payload.get("kind") != kind:
        raise CheckpointError(f"{path} holds a '{payload.get('kind')}' checkpoint, expected '{kind}'")
    return payload


def save_diagnostics(path, state_dict: Optional[Dict[str, torch.Tensor]], diagnostics: Dict[str, Any]) -> Path:
    """Dump the last good parameters and a JSON snapshot after a numerical failure"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if state_dict is not None:
        torch.save({k: v.detach().cpu().clone() for k, v in state_dict.items()},
                   str(path.with_suffix(".last-good.pt")))
    with open(path.with_suffix(".diagnostics.json"), "w") as handle:
        json.dump(diagnostics, handle, indent=2, sort_keys=True, default=str)
    logging.error(f"Numerical failure; diagnostics written next to {path}")
    return path


def guard_finite(values: Dict[str, Any], step: int, last_good_state: Optional[Dict[str, torch.Tensor]],
                 diagnostics_path, kind: str) -> None:
    """Abort a training loop with a diagnostics snapshot when a loss is not finite"""
    bad = sorted(name for name, value in values.items()
                 if not torch.isfinite(torch.as_tensor(value)).all())
    if not bad:
        return
    diagnostics = {
        "kind": kind,
        "step": step,
        "nonfinite": bad,
        "values": {name: float(torch.as_tensor(value).detach().float().mean()) for name, value in values.items()},
    }
    if diagnostics_path is not None:
        save_diagnostics(diagnostics_path, last_good_state, diagnostics)
    raise NumericalError(f"{kind} training diverged at step {step} ({', '.join(bad)} not finite)", diagnostics)


def snapshot(module: torch.nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def state_digest(state_dict: Dict[str, torch.Tensor]) -> str:
    """Order-stable hash of a state dict's names and bytes"""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        digest.update(name.encode("utf-8"))
        digest.update(state_dict[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


class TrainingLog:
    """Append-only JSON-lines record, one line per training step"""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, step: int, **values) -> Dict[str, Any]:
        record = {"step": step}
        for name, value in values.items():
            record[name] = float(value.detach()) if isinstance(value, torch.Tensor) else value
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        return record

    def series(self, name: str):
        return [r[name] for r in self.records if name in r]

    @staticmethod
    def read(path):
        with open(path, "r") as handle:
            return [json.loads(line) for line in handle if line.strip()]
