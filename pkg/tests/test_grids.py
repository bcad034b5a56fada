"""
Tests for figure grids
"""

import json

import pytest
import torch

from portrait_lab.errors import ArgumentError
from portrait_lab.grids import Grid, build_grid, emit_grid, video_strip_grid
from portrait_lab.imaging import image_digest, load_png


def test_compose_places_tiles_row_major():
    tiles = torch.zeros(2, 3, 3, 4, 4)
    tiles[1, 2] = 1.0
    image = Grid("video-strip", tiles, ["a", "b"], ["0", "1", "2"]).compose()
    assert image.shape == (3, 8, 12)
    assert float(image[:, 4:, 8:].min()) == 1.0
    assert float(image[:, :4, :].max()) == 0.0


def test_multiview_grid(session, dataset):
    grid = build_grid("multiview", session=session, image=dataset.image(0), yaws=[-0.3, 0.0, 0.3],
                      edits=[{"hue": 0.9}])
    assert grid.shape == (2, 3)
    assert grid.row_labels == ["inversion", "hue=0.9"]
    assert grid.col_labels == ["yaw=-0.3", "yaw=0", "yaw=0.3"]
    assert grid.tiles.shape == (2, 3, 3, 32, 32)


def test_attribute_sweep_grid(session, dataset):
    grid = build_grid("attribute-sweep", session=session, image=dataset.image(1),
                      attributes=["hue", "elongation"], values=[0.0, 1.0])
    assert grid.shape == (2, 2)
    assert grid.col_labels == ["0", "1"]


def test_texture_transfer_diagonal(session, dataset):
    images = dataset.images([0, 1])
    grid = build_grid("texture-transfer", session=session, geo_sources=images, tex_sources=images)
    assert grid.shape == (2, 2)
    assert torch.equal(grid.tile(1, 1), session.render_inversion(images[1]))


def test_video_strip_stride_and_validation():
    frames = torch.rand(5, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    grid = video_strip_grid({"input": frames, "edited": frames.flip(0)}, stride=2)
    assert grid.shape == (2, 3)
    assert grid.col_labels == ["frame0", "frame2", "frame4"]
    assert torch.equal(grid.tile(1, 0), frames[4])
    with pytest.raises(ArgumentError, match="differ in length"):
        video_strip_grid({"a": frames, "b": frames[:3]})
    with pytest.raises(ArgumentError):
        video_strip_grid({})
    with pytest.raises(ArgumentError):
        video_strip_grid({"a": frames}, stride=0)


def test_unknown_kind():
    with pytest.raises(ArgumentError, match="Unknown grid kind"):
        build_grid("collage")


def test_emit_writes_png_and_sidecar(tmp_path):
    frames = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(1))
    grid = video_strip_grid({"input": frames})
    path = emit_grid(grid, tmp_path / "figs" / "strip.png", metadata={"seed": 3})
    sidecar = json.loads((tmp_path / "figs" / "strip.json").read_text())
    assert sidecar["kind"] == "video-strip"
    assert (sidecar["rows"], sidecar["cols"]) == (1, 2)
    assert sidecar["tile_size"] == [8, 8]
    assert sidecar["seed"] == 3
    assert sidecar["image_sha256"] == image_digest(load_png(path))
