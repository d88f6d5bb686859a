"""Texture expansion toolkit: direction-conditioned recurrent VAEs over
texture tiles, filter-bank losses, and texton-histogram evaluation."""

from .draw import DIRECTIONS, DrawConfig, DrawModel
from .filterbank import FilterBank, build_lm_bank, normalize_image, respond
from .losses import LossSpec, kl_latent, total_loss
from .ndtensor import Tensor, backward
from .synthesis import TileGrid, expand, stitch
from .textons import TextonDictionary, histogram_distance, learn_textons

__version__ = "0.1.0"

__all__ = [
    "DIRECTIONS", "DrawConfig", "DrawModel", "FilterBank", "LossSpec",
    "Tensor", "TextonDictionary", "TileGrid", "backward", "build_lm_bank",
    "expand", "histogram_distance", "kl_latent", "learn_textons",
    "normalize_image", "respond", "stitch", "total_loss", "__version__",
]
