"""Differentiable training losses: four reconstruction variants plus the latent KL.

Reconstruction losses compare a target tile ``y`` with a generated tile
``y_hat``; all return nonnegative scalar tensors that vanish at ``y == y_hat``.
The latent loss is the closed-form KL between per-step diagonal Gaussians and
a standard normal prior.  Total training loss is their plain sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import ndtensor as nd
from .filterbank import FeatureMapStack, FilterBank, normalize_image, respond
from .ndtensor import ShapeError, Tensor

LOSS_KINDS = ("cross_entropy", "l2", "fb", "fltbnk", "gram")
PROB_CLAMP = 1e-8
DEFAULT_TV_WEIGHT = 1e-3
DEFAULT_COLOR_WEIGHT = 10.0
DEFAULT_GRAM_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


@dataclass
class LossSpec:
    """Which reconstruction loss to train with, plus its weights."""

    kind: str = "l2"
    tv_weight: float = DEFAULT_TV_WEIGHT          # fltbnk only
    color_weight: float = DEFAULT_COLOR_WEIGHT    # fltbnk only
    gram_layer_weights: tuple[float, ...] = DEFAULT_GRAM_WEIGHTS

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.tv_weight < 0 or self.color_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if any(w < 0 for w in self.gram_layer_weights):
            raise ValueError("gram layer weights must be nonnegative")


@dataclass
class LatentState:
    """Per-step posterior parameters and samples from one forward pass."""

    means: list[Tensor] = field(default_factory=list)      # each [z_dim]
    stds: list[Tensor] = field(default_factory=list)       # each [z_dim], > 0
    samples: list[Tensor] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.means)

    def append(self, mean: Tensor, std: Tensor, sample: Tensor) -> None:
        self.means.append(mean)
        self.stds.append(std)
        self.samples.append(sample)


def _check_same_shape(y, y_hat, what: str):
    if y.shape != y_hat.shape:
        raise ShapeError(f"{what} needs matching shapes, got {y.shape} and {y_hat.shape}")


def l2_loss(y, y_hat) -> Tensor:
    """Sum of squared differences."""
    y, y_hat = nd.as_tensor(y), nd.as_tensor(y_hat)
    _check_same_shape(y, y_hat, "l2_loss")
    return nd.reduce_sum(nd.square(nd.sub(y, y_hat)))


def cross_entropy_loss(y, y_hat) -> Tensor:
    """Negated binary cross entropy sum; predictions clamped to [1e-8, 1-1e-8].

    The raw per-element expression y*log(p) + (1-y)*log(1-p) is maximized at
    p == y, so the sum is negated to make a minimizable, nonnegative loss.
    """
    y, y_hat = nd.as_tensor(y), nd.as_tensor(y_hat)
    _check_same_shape(y, y_hat, "cross_entropy_loss")
    for name, t in (("y", y), ("y_hat", y_hat)):
        if t.data.min() < 0.0 or t.data.max() > 1.0:
            raise ValueError(f"cross_entropy_loss needs {name} in [0,1], "
                             f"got range [{t.data.min()}, {t.data.max()}]")
    p = nd.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    term = nd.add(nd.mul(y, nd.log(p)),
                  nd.mul(nd.sub(1.0, y), nd.log(nd.sub(1.0, p))))
    return nd.neg(nd.reduce_sum(term))


def fb_loss(y, y_hat, bank: FilterBank) -> Tensor:
    """Squared difference of bank responses on standardized images."""
    y, y_hat = nd.as_tensor(y), nd.as_tensor(y_hat)
    _check_same_shape(y, y_hat, "fb_loss")
    resp_y = respond(bank, normalize_image(y)).maps
    resp_hat = respond(bank, normalize_image(y_hat)).maps
    return nd.reduce_sum(nd.square(nd.sub(resp_y, resp_hat)))


def tv_loss(image) -> Tensor:
    """Smooth total variation: summed squared forward differences, both axes.

    Degenerate 1-pixel-wide axes contribute nothing; a 1x1 image has zero
    variation by definition.
    """
    image = nd.as_tensor(image)
    if image.data.ndim != 3:
        raise ShapeError(f"tv_loss needs an [H,W,C] image, got {image.shape}")
    h, w, _ = image.shape
    terms = []
    if w >= 2:
        dx = nd.sub(nd.narrow(image, 1, 1, w - 1), nd.narrow(image, 1, 0, w - 1))
        terms.append(nd.reduce_sum(nd.square(dx)))
    if h >= 2:
        dy = nd.sub(nd.narrow(image, 0, 1, h - 1), nd.narrow(image, 0, 0, h - 1))
        terms.append(nd.reduce_sum(nd.square(dy)))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = nd.add(total, t)
    return total


def color_reg(y, y_hat) -> Tensor:
    """Squared difference of per-channel mean colors over the whole tile."""
    y, y_hat = nd.as_tensor(y), nd.as_tensor(y_hat)
    _check_same_shape(y, y_hat, "color_reg")
    mean_y = nd.reduce_mean(y, axes=(0, 1))
    mean_hat = nd.reduce_mean(y_hat, axes=(0, 1))
    return nd.reduce_sum(nd.square(nd.sub(mean_y, mean_hat)))


def fltbnk_loss(y, y_hat, bank: FilterBank,
                tv_weight: float = DEFAULT_TV_WEIGHT,
                color_weight: float = DEFAULT_COLOR_WEIGHT) -> Tensor:
    """Filter-bank loss regularized by total variation and mean-color matching."""
    base = fb_loss(y, y_hat, bank)
    smooth = nd.mul(tv_loss(nd.as_tensor(y_hat)), tv_weight)
    color = nd.mul(color_reg(y, y_hat), color_weight)
    return nd.add(nd.add(base, smooth), color)


def gram(features, layer: int | None = None) -> Tensor:
    """Inner products between feature maps: G = F @ F.T for an [N_l, M_l] layer.

    Accepts either a FeatureMapStack with a layer index, or a feature matrix
    directly.  The result is symmetric positive-semidefinite.
    """
    if isinstance(features, FeatureMapStack):
        if layer is None:
            raise ValueError("gram on a FeatureMapStack needs a layer index")
        mat = features.layer_matrix(layer)
    else:
        mat = nd.as_tensor(features)
        if mat.data.ndim != 2:
            raise ShapeError(f"gram needs an [N,M] feature matrix, got {mat.shape}")
    return nd.matmul(mat, nd.transpose(mat))


def gram_loss(x, x_hat, extractor: Callable[[Tensor], list[Tensor]],
              weights: Sequence[float]) -> Tensor:
    """Weighted sum of normalized squared Gram differences across layers.

    Each layer contributes sum((G - G_hat)^2) / (4 * N_l^2 * M_l^2); the
    extractor maps an image to its list of [N_l, M_l] feature matrices.
    """
    x, x_hat = nd.as_tensor(x), nd.as_tensor(x_hat)
    _check_same_shape(x, x_hat, "gram_loss")
    feats_x = extractor(x)
    feats_hat = extractor(x_hat)
    if len(feats_x) == 0:
        raise ValueError("extractor produced no layers")
    if len(weights) != len(feats_x):
        raise ValueError(f"got {len(weights)} layer weights for {len(feats_x)} layers")
    total = Tensor(0.0)
    for w, fx, fh in zip(weights, feats_x, feats_hat):
        n, m = fx.shape
        diff = nd.sub(gram(fx), gram(fh))
        dist = nd.mul(nd.reduce_sum(nd.square(diff)), 1.0 / (4.0 * n * n * m * m))
        total = nd.add(total, nd.mul(dist, float(w)))
    return total


def lm_extractor(bank: FilterBank) -> Callable[[Tensor], list[Tensor]]:
    """Feature extractor over bank responses, one layer per kernel kind."""
    def extract(image: Tensor) -> list[Tensor]:
        stack = respond(bank, normalize_image(image))
        return [stack.layer_matrix(i) for i in range(len(stack.layers))]
    return extract


def kl_latent(latents: LatentState) -> Tensor:
    """Closed-form KL from per-step diagonal Gaussians to the standard normal.

    0.5 * sum over steps and latent dimensions of (mu^2 + sigma^2 - log sigma^2),
    minus half a unit per step and dimension; zero exactly at mu=0, sigma=1.
    """
    if not (len(latents.means) == len(latents.stds) > 0):
        raise ValueError("latent state needs matching, nonempty mean/std sequences")
    z_dim = latents.means[0].size
    acc = Tensor(0.0)
    for mu, sigma in zip(latents.means, latents.stds):
        if sigma.data.min() <= 0.0:
            raise ValueError(f"stds must be positive, got min {sigma.data.min()}")
        if mu.size != z_dim or sigma.size != z_dim:
            raise ShapeError("latent dimensions differ across steps")
        var = nd.square(sigma)
        step = nd.reduce_sum(nd.sub(nd.add(nd.square(mu), var), nd.log(var)))
        acc = nd.add(acc, step)
    return nd.sub(nd.mul(acc, 0.5), 0.5 * latents.steps * z_dim)


def total_loss(reconstruction: Tensor, latent: Tensor) -> Tensor:
    """Plain sum of the reconstruction and latent terms."""
    return nd.add(reconstruction, latent)


def reconstruction_loss(spec: LossSpec, y, y_hat, bank: FilterBank | None = None) -> Tensor:
    """Dispatch on a LossSpec; bank-backed kinds require a FilterBank."""
    if spec.kind == "l2":
        return l2_loss(y, y_hat)
    if spec.kind == "cross_entropy":
        return cross_entropy_loss(y, y_hat)
    if bank is None:
        raise ValueError(f"loss kind {spec.kind!r} needs a filter bank")
    if spec.kind == "fb":
        return fb_loss(y, y_hat, bank)
    if spec.kind == "fltbnk":
        return fltbnk_loss(y, y_hat, bank, spec.tv_weight, spec.color_weight)
    return gram_loss(y, y_hat, lm_extractor(bank), spec.gram_layer_weights)
