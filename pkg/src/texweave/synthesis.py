"""Grow a seed tile into a large texture with the four direction models.

The grid fills outward by Chebyshev rings from the center cell.  Within a
ring, cells are visited in row-major order; a cell is generated from the
first already-filled 4-neighbor probed in the fixed order north, south,
east, west, using the direction model that maps that neighbor onto the
cell.  Corner cells have no previous-ring 4-neighbor, so a ring is swept
repeatedly until full; they chain off a side cell filled earlier, which the
sweep order guarantees exists.  Scheduling is a pure function of the target
size, and each generation seeds its noise from (seed, row, col).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import draw, imgio
from .draw import DIRECTIONS, DrawModel


class SynthesisError(ValueError):
    """Invalid expansion target or grid occupancy."""


@dataclass
class TileGrid:
    """Tiles keyed by integer (row, col) offsets; the center sits at (0, 0)."""

    tile_size: int
    cells: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def bounds(self) -> tuple[int, int, int, int]:
        rows = [r for r, _ in self.cells]
        cols = [c for _, c in self.cells]
        return min(rows), max(rows), min(cols), max(cols)

    def put(self, cell: tuple[int, int], tile: np.ndarray) -> None:
        if tile.shape[:2] != (self.tile_size, self.tile_size):
            raise SynthesisError(f"tile for {cell} has shape {tile.shape}, "
                                 f"expected {self.tile_size} square")
        self.cells[cell] = tile


# Probe offsets in fixed N, S, E, W order; a filled probe target generates
# the empty cell via the model for the opposite direction.
_PROBES = (((-1, 0), "south"), ((1, 0), "north"), ((0, 1), "west"), ((0, -1), "east"))


def _ring_cells(radius: int):
    cells = [(r, c) for r in range(-radius, radius + 1)
             for c in range(-radius, radius + 1)
             if max(abs(r), abs(c)) == radius]
    return cells  # already row-major by construction


def _cell_rng(seed: int, row: int, col: int):
    return np.random.default_rng((seed, row % 2 ** 32, col % 2 ** 32))


def grow_grid(center: np.ndarray, models: Mapping[str, DrawModel],
              target_size: int, seed: int,
              debug_dir: str | None = None) -> TileGrid:
    """Fill the tile grid out to the target size; returns the grid itself."""
    center = np.asarray(center, dtype=np.float64)
    if center.ndim != 3 or center.shape[0] != center.shape[1]:
        raise SynthesisError(f"center tile must be square [t,t,C], got {center.shape}")
    tile = center.shape[0]
    if target_size % tile != 0:
        raise SynthesisError(f"target size {target_size} is not a multiple of "
                             f"tile size {tile}")
    span = target_size // tile
    if span % 2 == 0:
        raise SynthesisError(f"target size {target_size} must be an odd multiple "
                             f"of tile size {tile}")
    radius = (span - 1) // 2

    if radius >= 1:
        for direction in DIRECTIONS:
            if direction not in models:
                raise SynthesisError(f"missing model for direction {direction!r}")
            cfg = models[direction].config
            if cfg.tile_size != tile or cfg.channels != center.shape[2]:
                raise SynthesisError(f"{direction} model expects "
                                     f"{cfg.tile_size}x{cfg.tile_size}x{cfg.channels} "
                                     f"tiles, center is {center.shape}")

    grid = TileGrid(tile_size=tile)
    grid.put((0, 0), center)
    if debug_dir:
        os.makedirs(debug_dir, exist_ok=True)
        imgio.save_image(os.path.join(debug_dir, "cell_+0_+0_center.png"), center)

    for ring in range(1, radius + 1):
        pending = _ring_cells(ring)
        while pending:
            deferred = []
            progressed = False
            for row, col in pending:
                source = None
                for (dr, dc), direction in _PROBES:
                    neighbor = (row + dr, col + dc)
                    if neighbor in grid.cells:
                        source = (neighbor, direction)
                        break
                if source is None:
                    deferred.append((row, col))
                    continue
                neighbor, direction = source
                generated = draw.generate(models[direction], grid.cells[neighbor],
                                          _cell_rng(seed, row, col))
                grid.put((row, col), generated)
                progressed = True
                if debug_dir:
                    name = f"cell_{row:+d}_{col:+d}_{direction}.png"
                    imgio.save_image(os.path.join(debug_dir, name), generated)
            if pending and not progressed:
                raise SynthesisError(f"ring {ring} cannot progress; "
                                     f"stuck cells: {deferred}")
            pending = deferred
    return grid


def stitch(grid: TileGrid, blend: int = 0) -> np.ndarray:
    """Assemble a rectangular grid into one image by hard abutment.

    With ``blend`` > 0, a cosmetic linear cross-fade is painted over each
    internal seam (a band of that many pixels per side); default off, which
    keeps stitching lossless.
    """
    if not grid.cells:
        raise SynthesisError("empty grid")
    r0, r1, c0, c1 = grid.bounds()
    missing = [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)
               if (r, c) not in grid.cells]
    if missing:
        raise SynthesisError(f"grid is not a full rectangle; missing {missing[:4]}")
    t = grid.tile_size
    channels = next(iter(grid.cells.values())).shape[2]
    out = np.zeros(((r1 - r0 + 1) * t, (c1 - c0 + 1) * t, channels))
    for (r, c), tile in grid.cells.items():
        out[(r - r0) * t:(r - r0 + 1) * t, (c - c0) * t:(c - c0 + 1) * t] = tile

    if blend > 0:
        k = min(blend, t // 2)
        for seam in range(1, c1 - c0 + 1):
            x0 = seam * t
            left = out[:, max(x0 - k - 1, 0)].copy()
            right = out[:, min(x0 + k, out.shape[1] - 1)].copy()
            for j in range(2 * k):
                alpha = (j + 1) / (2 * k + 1)
                out[:, x0 - k + j] = (1 - alpha) * left + alpha * right
        for seam in range(1, r1 - r0 + 1):
            y0 = seam * t
            top = out[max(y0 - k - 1, 0)].copy()
            bottom = out[min(y0 + k, out.shape[0] - 1)].copy()
            for j in range(2 * k):
                alpha = (j + 1) / (2 * k + 1)
                out[y0 - k + j] = (1 - alpha) * top + alpha * bottom
    return out


def expand(center: np.ndarray, models: Mapping[str, DrawModel], target_size: int,
           seed: int, blend: int = 0, debug_dir: str | None = None) -> np.ndarray:
    """Expand a center tile to target_size x target_size; deterministic per seed."""
    grid = grow_grid(center, models, target_size, seed, debug_dir=debug_dir)
    return stitch(grid, blend=blend)
