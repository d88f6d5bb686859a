"""Texture ingestion and center/neighbor tile sampling.

A training example is a quintet: one center tile plus the four abutting
neighbor tiles cut at exactly one tile-size offset in each direction.
Center origins are sampled uniformly over positions that keep a full
tile margin on every side.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import imgio
from .imgio import DataError

DEFAULT_TILE_SIZE = 28


@dataclass(frozen=True)
class TextureImage:
    pixels: np.ndarray      # [H, W, 3] in [0, 1]
    path: str
    id: str

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class TileQuintet:
    center: np.ndarray
    north: np.ndarray
    south: np.ndarray
    east: np.ndarray
    west: np.ndarray
    origin: tuple[int, int]     # (row, col) of the center tile's top-left

    def neighbor(self, direction: str) -> np.ndarray:
        if direction not in ("north", "south", "east", "west"):
            raise ValueError(f"unknown direction {direction!r}")
        return getattr(self, direction)


def load_texture(path: str, tile_size: int = DEFAULT_TILE_SIZE) -> TextureImage:
    """Load a raster image, validating it can host at least one quintet."""
    pixels = imgio.load_image(path)
    if pixels.shape[0] < 3 * tile_size or pixels.shape[1] < 3 * tile_size:
        raise DataError(f"{path} is {pixels.shape[0]}x{pixels.shape[1]}, "
                        f"need at least {3 * tile_size} per side for tile size {tile_size}")
    name = os.path.splitext(os.path.basename(path))[0]
    return TextureImage(pixels=pixels, path=path, id=name)


def _crop(img: TextureImage, row: int, col: int, tile_size: int) -> np.ndarray:
    return img.pixels[row:row + tile_size, col:col + tile_size].copy()


def sample_quintet(img: TextureImage, tile_size: int, rng) -> TileQuintet:
    """Cut a center tile at a uniform valid origin plus its four neighbors."""
    max_row = img.height - 2 * tile_size
    max_col = img.width - 2 * tile_size
    if max_row < tile_size or max_col < tile_size:
        raise DataError(f"{img.path} too small for tile size {tile_size}")
    row = int(rng.integers(tile_size, max_row + 1))
    col = int(rng.integers(tile_size, max_col + 1))
    return TileQuintet(
        center=_crop(img, row, col, tile_size),
        north=_crop(img, row - tile_size, col, tile_size),
        south=_crop(img, row + tile_size, col, tile_size),
        east=_crop(img, row, col + tile_size, tile_size),
        west=_crop(img, row, col - tile_size, tile_size),
        origin=(row, col),
    )


def _sample_pairs(textures, tile_size, counts, rng):
    pairs = [(sample_quintet(tex, tile_size, rng), tex.id)
             for tex, n in zip(textures, counts) for _ in range(n)]
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def build_epoch(textures, tile_size: int, per_texture: int,
                rng) -> list[tuple[TileQuintet, str]]:
    """Sample per_texture quintets from each texture and shuffle the lot."""
    if not textures:
        raise DataError("no textures to sample from")
    return _sample_pairs(textures, tile_size, [per_texture] * len(textures), rng)


class TileDataset:
    """Epoch provider that resamples fresh quintets from source textures."""

    def __init__(self, textures, tile_size: int, per_texture):
        if not textures:
            raise DataError("dataset needs at least one texture")
        self.textures = list(textures)
        self.tile_size = tile_size
        if isinstance(per_texture, int):
            per_texture = [per_texture] * len(self.textures)
        if len(per_texture) != len(self.textures):
            raise DataError("one sample count per texture required")
        self.per_texture = list(per_texture)

    def epoch(self, rng) -> list[TileQuintet]:
        return [q for q, _ in _sample_pairs(self.textures, self.tile_size,
                                            self.per_texture, rng)]


class FixedQuintets:
    """Epoch provider over a fixed quintet list (overfit runs, tests)."""

    def __init__(self, quintets):
        if not quintets:
            raise DataError("need at least one quintet")
        self.quintets = list(quintets)

    def epoch(self, rng) -> list[TileQuintet]:
        return list(self.quintets)


def load_dataset(config_path: str) -> TileDataset:
    """Read a dataset config: tile size plus texture paths and sample counts.

    Format: {"tile_size": 28, "textures": [{"path": ..., "samples_per_epoch": ...}]}.
    Relative texture paths resolve against the config file's directory.
    """
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"dataset config not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid dataset config {config_path}: {exc}") from None

    tile_size = int(raw.get("tile_size", DEFAULT_TILE_SIZE))
    entries = raw.get("textures", [])
    if not entries:
        raise DataError(f"dataset config {config_path} lists no textures")
    base = os.path.dirname(os.path.abspath(config_path))
    textures = []
    counts = []
    for entry in entries:
        path = entry["path"]
        if not os.path.isabs(path):
            path = os.path.join(base, path)
        textures.append(load_texture(path, tile_size))
        counts.append(int(entry.get("samples_per_epoch", 64)))
    return TileDataset(textures, tile_size, counts)
