"""Leung-Malik filter bank: construction, image normalization, responses.

The bank has 48 kernels: first- and second-derivative-of-Gaussian filters
at 6 orientations x 3 scales (36 total, 3:1 elongation), 8 Laplacian-of-
Gaussian, and 4 Gaussian kernels.  Derivative and LoG kernels are made
zero-mean and L1-normalized; Gaussians are normalized to unit sum (which
is already unit L1 norm).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .ndtensor import Tensor

SQRT2 = math.sqrt(2.0)
ORIENTED_SIGMAS = (1.0, SQRT2, 2.0)
BLOB_SIGMAS = (1.0, SQRT2, 2.0, 2.0 * SQRT2)
ORIENTATION_COUNT = 6
ELONGATION = 3.0
DEFAULT_SUPPORT = 15
WEBER_CONSTANT = 0.03

KINDS = ("edge", "bar", "log", "gauss")


@dataclass(frozen=True)
class FilterBank:
    """An ordered set of square convolution kernels plus per-kernel metadata."""

    kernels: np.ndarray                       # [K, support, support]
    kinds: tuple[str, ...]
    scales: tuple[float, ...]
    orientations: tuple[float | None, ...]    # radians; None for isotropic kernels

    @property
    def kernel_count(self) -> int:
        return self.kernels.shape[0]

    @property
    def support(self) -> int:
        return self.kernels.shape[1]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.kernels).tobytes())
        digest.update(",".join(self.kinds).encode())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class LayerSpec:
    """One conceptual feature layer: which stack channels belong to it."""

    name: str
    channel_indices: tuple[int, ...]


class FeatureMapStack:
    """Filter responses of one image: maps [H, W, L] with a layer partition.

    L is kernel-count times image-channel-count; channel c filtered by
    kernel j lands at index c*K + j.  Each layer has N_l maps, all of
    vectorized size M_l = H*W.
    """

    def __init__(self, maps: Tensor, layers: tuple[LayerSpec, ...]):
        self.maps = maps
        self.layers = layers

    @property
    def height(self) -> int:
        return self.maps.shape[0]

    @property
    def width(self) -> int:
        return self.maps.shape[1]

    @property
    def vectorized_size(self) -> int:
        return self.height * self.width

    def layer_count(self, layer: int) -> int:
        return len(self.layers[layer].channel_indices)

    def layer_matrix(self, layer: int) -> Tensor:
        """Feature maps of one layer as an [N_l, M_l] matrix (differentiable)."""
        if not 0 <= layer < len(self.layers):
            raise ValueError(f"layer {layer} out of range 0..{len(self.layers) - 1}")
        picked = nd.index_select(self.maps, 2, self.layers[layer].channel_indices)
        as_rows = nd.permute(picked, (2, 0, 1))
        return nd.reshape(as_rows, (self.layer_count(layer), self.vectorized_size))


def _gaussian_1d(sigma: float, x: np.ndarray, order: int) -> np.ndarray:
    var = sigma * sigma
    g = np.exp(-x * x / (2.0 * var)) / (sigma * math.sqrt(2.0 * math.pi))
    if order == 0:
        return g
    if order == 1:
        return -g * x / var
    return g * (x * x - var) / (var * var)


def _oriented_kernel(sigma: float, theta: float, order: int, support: int) -> np.ndarray:
    half = support // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets)        # xx: column offset, yy: row offset
    c, s = math.cos(theta), math.sin(theta)
    # Sample the upright filter on the back-rotated grid: k_theta(p) = k_0(R(-theta) p).
    xr = c * xx - s * yy
    yr = s * xx + c * yy
    # Upright filter: derivative across y, elongated along x.
    return _gaussian_1d(ELONGATION * sigma, xr, 0) * _gaussian_1d(sigma, yr, order)


def _log_kernel(sigma: float, support: int) -> np.ndarray:
    half = support // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets)
    r2 = xx * xx + yy * yy
    var = sigma * sigma
    g = np.exp(-r2 / (2.0 * var)) / (2.0 * math.pi * var)
    return g * (r2 - 2.0 * var) / (var * var)


def _gaussian_kernel(sigma: float, support: int) -> np.ndarray:
    half = support // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets)
    g = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return g / g.sum()


def _zero_mean_l1(kernel: np.ndarray) -> np.ndarray:
    kernel = kernel - kernel.mean()
    return kernel / np.abs(kernel).sum()


def build_lm_bank(support: int = DEFAULT_SUPPORT) -> FilterBank:
    """Build the 48-kernel bank at the given odd pixel support (>= 7)."""
    if support % 2 == 0 or support < 7:
        raise ValueError(f"support must be odd and >= 7, got {support}")

    kernels, kinds, scales, orientations = [], [], [], []
    for kind, order in (("edge", 1), ("bar", 2)):
        for sigma in ORIENTED_SIGMAS:
            for i in range(ORIENTATION_COUNT):
                theta = i * math.pi / ORIENTATION_COUNT
                kernels.append(_zero_mean_l1(_oriented_kernel(sigma, theta, order, support)))
                kinds.append(kind)
                scales.append(sigma)
                orientations.append(theta)
    for sigma in list(BLOB_SIGMAS) + [3.0 * s for s in BLOB_SIGMAS]:
        kernels.append(_zero_mean_l1(_log_kernel(sigma, support)))
        kinds.append("log")
        scales.append(sigma)
        orientations.append(None)
    for sigma in BLOB_SIGMAS:
        # Unit-sum already, so L1 normalization is the identity here.
        kernels.append(_gaussian_kernel(sigma, support))
        kinds.append("gauss")
        scales.append(sigma)
        orientations.append(None)

    return FilterBank(kernels=np.stack(kernels), kinds=tuple(kinds),
                      scales=tuple(scales), orientations=tuple(orientations))


def normalize_image(image) -> Tensor:
    """Standardize an image to zero mean, unit std over all pixels and channels.

    Differentiable; a constant image maps to all zeros (the variance is
    guarded so the denominator bottoms out at 1e-8).
    """
    image = nd.as_tensor(image)
    if image.size == 0:
        raise ValueError("empty image")
    centered = nd.sub(image, nd.reduce_mean(image))
    var = nd.reduce_mean(nd.square(centered))
    return nd.div(centered, nd.sqrt(nd.add(var, 1e-16)))


def _weber_rescale(maps: np.ndarray) -> np.ndarray:
    # Per-pixel response vector r -> r * log(1 + |r|/0.03) / |r|; the factor
    # tends to 1/0.03 as |r| -> 0, so the zero case is filled with the limit.
    norms = np.linalg.norm(maps, axis=2, keepdims=True)
    factor = np.where(norms > 1e-300, np.log1p(norms / WEBER_CONSTANT) / np.maximum(norms, 1e-300),
                      1.0 / WEBER_CONSTANT)
    return maps * factor


def respond(bank: FilterBank, image, weber: bool = False) -> FeatureMapStack:
    """Convolve every kernel with every image channel.

    With ``weber`` set, responses are contrast-compressed per pixel for the
    texton pipeline; that path detaches from the graph and is not meant to
    be differentiated.  With ``weber`` off the stack is differentiable in
    the image.
    """
    image = nd.as_tensor(image)
    if image.data.ndim != 3:
        raise nd.ShapeError(f"respond needs an [H,W,C] image, got {image.shape}")
    maps = nd.conv2d_same(image, bank.kernels)
    if weber:
        h, w, _ = maps.shape
        maps = Tensor(_weber_rescale(maps.data))

    channels = image.shape[2]
    k = bank.kernel_count
    layers = []
    for kind in KINDS:
        indices = tuple(c * k + j for c in range(channels)
                        for j in range(k) if bank.kinds[j] == kind)
        if indices:
            layers.append(LayerSpec(kind, indices))
    return FeatureMapStack(maps, tuple(layers))


def export_bank(bank: FilterBank, out_dir: str) -> dict:
    """Write each kernel as a grayscale PNG plus a JSON manifest; returns the manifest."""
    from . import imgio

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(bank.kernel_count):
        kernel = bank.kernels[i]
        spread = kernel.max() - kernel.min()
        visual = (kernel - kernel.min()) / (spread if spread > 0 else 1.0)
        name = f"kernel_{i:02d}_{bank.kinds[i]}.png"
        imgio.save_image(os.path.join(out_dir, name), visual[:, :, None].repeat(3, axis=2))
        entries.append({
            "index": i,
            "kind": bank.kinds[i],
            "scale": bank.scales[i],
            "orientation": bank.orientations[i],
            "support": bank.support,
            "file": name,
        })
    manifest = {"kernel_count": bank.kernel_count, "fingerprint": bank.fingerprint(),
                "kernels": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
