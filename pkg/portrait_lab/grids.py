"""
Figure grids: multi-view edits, attribute sweeps, texture transfer and
video strips, tiled into one lossless PNG with a JSON sidecar
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import torch

from .editing import EditingSession
from .errors import ArgumentError
from .imaging import image_digest, quantize, save_png, write_json_atomic
from .models import StyleCode

GRID_KINDS = ("multiview", "attribute-sweep", "texture-transfer", "video-strip")


@dataclass
class Grid:
    kind: str
    tiles: torch.Tensor                 # (rows, cols, 3, H, W)
    row_labels: List[str]
    col_labels: List[str]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def shape(self):
        return self.tiles.shape[0], self.tiles.shape[1]

    def tile(self, row: int, col: int) -> torch.Tensor:
        return self.tiles[row, col]

    def compose(self) -> torch.Tensor:
        """(3, rows * H, cols * W) image, tiles placed without padding"""
        rows, cols, channels, height, width = self.tiles.shape
        return self.tiles.permute(2, 0, 3, 1, 4).reshape(channels, rows * height, cols * width)


def _edit_label(edits: Dict[str, float]) -> str:
    if not edits:
        return "inversion"
    return ",".join(f"{name}={value:g}" for name, value in sorted(edits.items()))


def multiview_grid(session: EditingSession, image: torch.Tensor, yaws: Sequence[float],
                   edits: Optional[List[Dict[str, float]]] = None) -> Grid:
    """Rows: the inversion then each edit; columns: head yaw"""
    inversion = session.invert(image)
    edit_maps = [{}] + [e for e in (edits or []) if e]
    views = [session.view_for_yaw(inversion.coeffs, yaw) for yaw in yaws]
    rows = []
    for edit_map in edit_maps:
        style = session.edit_codes(inversion, edit_map)
        rows.append(torch.stack([session.render(style, view) for view in views]))
    return Grid("multiview", torch.stack(rows), [_edit_label(e) for e in edit_maps],
                [f"yaw={yaw:g}" for yaw in yaws])


def attribute_sweep_grid(session: EditingSession, image: torch.Tensor, attributes: Sequence[str],
                         values: Sequence[float]) -> Grid:
    """Rows: attributes; columns: target values, each with the original view"""
    inversion = session.invert(image)
    rows = []
    for name in attributes:
        rows.append(torch.stack([
            session.render(session.edit_codes(inversion, {name: value}), inversion.view) for value in values
        ]))
    return Grid("attribute-sweep", torch.stack(rows), list(attributes), [f"{value:g}" for value in values])


def texture_transfer_grid(session: EditingSession, geo_sources: torch.Tensor,
                          tex_sources: torch.Tensor) -> Grid:
    """Rows: geometry sources; columns: texture sources"""
    geo = [session.invert(image) for image in geo_sources]
    tex = [session.invert(image) for image in tex_sources]
    rows = []
    for first in geo:
        rows.append(torch.stack([
            session.render(StyleCode(first.style.w_geo, second.style.w_tex), first.view) for second in tex
        ]))
    return Grid("texture-transfer", torch.stack(rows), [f"geo{i}" for i in range(len(geo))],
                [f"tex{j}" for j in range(len(tex))])


def video_strip_grid(sequences: Dict[str, torch.Tensor], stride: int = 1) -> Grid:
    """Rows: labelled frame sequences of equal length; columns: every ``stride``-th frame"""
    if not sequences:
        raise ArgumentError("A video strip needs at least one sequence")
    lengths = {frames.shape[0] for frames in sequences.values()}
    if len(lengths) != 1:
        raise ArgumentError(f"Video strip rows differ in length: {sorted(lengths)}")
    if stride < 1:
        raise ArgumentError("stride must be positive")
    indices = list(range(0, lengths.pop(), stride))
    tiles = torch.stack([frames[indices] for frames in sequences.values()])
    return Grid("video-strip", tiles, list(sequences), [f"frame{i}" for i in indices])


def build_grid(kind: str, **inputs) -> Grid:
    """
    Dispatch to the grid builder of ``kind``

    Inputs per kind:
        multiview: session, image, yaws, edits
        attribute-sweep: session, image, attributes, values
        texture-transfer: session, geo_sources, tex_sources
        video-strip: sequences, stride
    """
    builders = {
        "multiview": multiview_grid,
        "attribute-sweep": attribute_sweep_grid,
        "texture-transfer": texture_transfer_grid,
        "video-strip": video_strip_grid,
    }
    if kind not in builders:
        raise ArgumentError(f"Unknown grid kind '{kind}'; expected one of {', '.join(GRID_KINDS)}")
    return builders[kind](**inputs)


def emit_grid(grid: Grid, out_path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write the tiled PNG plus ``<name>.json`` with labels and provenance"""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    image = quantize(grid.compose())
    save_png(image, out_path)
    rows, cols = grid.shape
    sidecar = {
        "kind": grid.kind,
        "rows": rows,
        "cols": cols,
        "tile_size": list(grid.tiles.shape[-2:]),
        "row_labels": grid.row_labels,
        "col_labels": grid.col_labels,
        "image_sha256": image_digest(image),
    }
    sidecar.update(grid.metadata)
    sidecar.update(metadata or {})
    write_json_atomic(sidecar, out_path.with_suffix(".json"))
    logging.info(f"Wrote {rows}x{cols} {grid.kind} grid to {out_path}")
    return out_path
