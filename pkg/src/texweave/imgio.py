"""PNG-backed image I/O and montage assembly.

Images travel through the toolkit as float64 [H, W, 3] arrays in [0, 1];
files are 8-bit, so loading divides by 255 and saving rounds back.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


class DataError(Exception):
    """A data file is missing, undecodable, or fails validation."""


def load_image(path: str) -> np.ndarray:
    """Load a raster image as float64 [H, W, 3] in [0, 1]; grayscale is replicated."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}") from None
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr


def save_image(path: str, image: np.ndarray) -> None:
    """Write a float [H, W, 3] array in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an [H,W,3] image, got shape {arr.shape}")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def montage(rows, gutter: int = 2, gutter_value: float = 1.0) -> np.ndarray:
    """Lay out a grid of equally sized tiles with uniform gutters between cells."""
    if not rows or not rows[0]:
        raise DataError("montage needs at least one tile")
    tile_h, tile_w, channels = rows[0][0].shape
    n_cols = max(len(r) for r in rows)
    height = len(rows) * tile_h + (len(rows) - 1) * gutter
    width = n_cols * tile_w + (n_cols - 1) * gutter
    canvas = np.full((height, width, channels), gutter_value, dtype=np.float64)
    for i, row in enumerate(rows):
        for j, tile in enumerate(row):
            if tile.shape != (tile_h, tile_w, channels):
                raise DataError(f"tile ({i},{j}) shape {tile.shape} differs "
                                f"from {(tile_h, tile_w, channels)}")
            y = i * (tile_h + gutter)
            x = j * (tile_w + gutter)
            canvas[y:y + tile_h, x:x + tile_w] = tile
    return canvas
