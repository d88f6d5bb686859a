"""Recurrent variational auto-encoder that paints a tile over T steps.

Each step reads the conditioning tile and the current reconstruction error,
updates a gated recurrent encoder, samples a latent code by
reparameterization, updates a gated recurrent decoder, and writes an
additive patch onto the canvas.  The output tile is the sigmoid of the
final canvas.  Training reads a center tile and reconstructs one neighbor;
four independent models cover the four directions.

Optional read/write attention extracts N x N glimpses through separable
grids of Gaussian interpolation kernels whose five parameters (center x/y,
stride, variance, intensity) are emitted from the decoder hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .losses import LatentState
from .ndtensor import ShapeError, Tensor

GATES = ("i", "f", "o", "g")
WEIGHT_STD = 0.05

DIRECTIONS = ("north", "south", "east", "west")


@dataclass(frozen=True)
class DrawConfig:
    steps: int = 10
    z_dim: int = 100
    enc_hidden: int = 256
    dec_hidden: int = 256
    tile_size: int = 28
    channels: int = 3
    attention_grid: int = 0    # 0 disables attention; N >= 2 reads/writes NxN glimpses

    def __post_init__(self):
        for name in ("steps", "z_dim", "enc_hidden", "dec_hidden", "tile_size", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.attention_grid < 0 or self.attention_grid == 1:
            raise ValueError("attention_grid must be 0 (off) or >= 2")

    @property
    def tile_values(self) -> int:
        return self.tile_size * self.tile_size * self.channels

    @property
    def read_size(self) -> int:
        if self.attention_grid:
            return 2 * self.attention_grid ** 2 * self.channels
        return 2 * self.tile_values

    @property
    def write_size(self) -> int:
        if self.attention_grid:
            return self.attention_grid ** 2 * self.channels
        return self.tile_values

    def as_dict(self) -> dict:
        return {"steps": self.steps, "z_dim": self.z_dim,
                "enc_hidden": self.enc_hidden, "dec_hidden": self.dec_hidden,
                "tile_size": self.tile_size, "channels": self.channels,
                "attention_grid": self.attention_grid}


def _cell_param_shapes(prefix: str, in_dim: int, hidden: int):
    for gate in GATES:
        yield f"{prefix}_w{gate}_x", (in_dim, hidden)
        yield f"{prefix}_w{gate}_h", (hidden, hidden)
        yield f"{prefix}_b{gate}", (1, hidden)


def parameter_spec(config: DrawConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every learnable parameter."""
    spec = []
    spec.extend(_cell_param_shapes("enc", config.read_size + config.dec_hidden,
                                   config.enc_hidden))
    spec.extend(_cell_param_shapes("dec", config.z_dim, config.dec_hidden))
    spec.append(("mu_w", (config.enc_hidden, config.z_dim)))
    spec.append(("mu_b", (1, config.z_dim)))
    spec.append(("sigma_w", (config.enc_hidden, config.z_dim)))
    spec.append(("sigma_b", (1, config.z_dim)))
    spec.append(("write_w", (config.dec_hidden, config.write_size)))
    spec.append(("write_b", (1, config.write_size)))
    if config.attention_grid:
        for head in ("attn_read", "attn_write"):
            spec.append((f"{head}_w", (config.dec_hidden, 5)))
            spec.append((f"{head}_b", (1, 5)))
    return spec


class DrawModel:
    """Config plus the named parameter tensors of one direction model."""

    def __init__(self, config: DrawConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: DrawConfig, seed: int) -> "DrawModel":
        """Weights ~ N(0, 0.05^2); biases zero except forget gates at one."""
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in parameter_spec(config):
            suffix = name.rsplit("_", 1)[-1]
            if suffix == "bf":
                params[name] = Tensor(np.ones(shape))
            elif suffix in ("b", "bi", "bo", "bg"):
                params[name] = Tensor(np.zeros(shape))
            else:
                params[name] = Tensor(rng.normal(0.0, WEIGHT_STD, size=shape))
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: DrawConfig, arrays: dict[str, np.ndarray]) -> "DrawModel":
        expected = parameter_spec(config)
        params: dict[str, Tensor] = {}
        for name, shape in expected:
            if name not in arrays:
                raise ValueError(f"missing parameter {name!r}")
            arr = arrays[name]
            if tuple(arr.shape) != tuple(shape):
                raise ValueError(f"parameter {name!r} has shape {arr.shape}, "
                                 f"expected {shape}")
            params[name] = Tensor(arr)
        return cls(config, params)

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].data for name, _ in parameter_spec(self.config)}


@dataclass
class DrawState:
    """Mutable per-pass state; the canvas accumulates additively across steps."""

    canvas: Tensor
    h_enc: Tensor
    c_enc: Tensor
    h_dec: Tensor
    c_dec: Tensor
    step: int = 0

    @classmethod
    def initial(cls, config: DrawConfig) -> "DrawState":
        return cls(canvas=Tensor(np.zeros((config.tile_size, config.tile_size,
                                           config.channels))),
                   h_enc=Tensor(np.zeros((1, config.enc_hidden))),
                   c_enc=Tensor(np.zeros((1, config.enc_hidden))),
                   h_dec=Tensor(np.zeros((1, config.dec_hidden))),
                   c_dec=Tensor(np.zeros((1, config.dec_hidden))))


def _linear(params, prefix: str, x: Tensor) -> Tensor:
    return nd.add(nd.matmul(x, params[f"{prefix}_w"]), params[f"{prefix}_b"])


def _cell_step(params, prefix: str, x: Tensor, h: Tensor, c: Tensor):
    """One gated recurrent update (input, forget, output, candidate gating)."""
    def gate(name):
        return nd.add(nd.add(nd.matmul(x, params[f"{prefix}_w{name}_x"]),
                             nd.matmul(h, params[f"{prefix}_w{name}_h"])),
                      params[f"{prefix}_b{name}"])

    i = nd.sigmoid(gate("i"))
    f = nd.sigmoid(gate("f"))
    o = nd.sigmoid(gate("o"))
    g = nd.tanh(gate("g"))
    c_new = nd.add(nd.mul(f, c), nd.mul(i, g))
    h_new = nd.mul(o, nd.tanh(c_new))
    return h_new, c_new


def attention_filters(gx, gy, sigma2, delta, grid_n: int, size: int):
    """Separable Gaussian interpolation grids Fx, Fy as [N, size] matrices.

    Filter i is a Gaussian over pixel coordinates centered at
    g + (i - N/2 - 0.5) * delta; rows are normalized to unit sum with the
    division clamped at epsilon.  Differentiable in all four parameters.
    """
    offsets = Tensor(np.array([i - grid_n / 2.0 - 0.5
                               for i in range(1, grid_n + 1)]))
    coords = Tensor(np.tile(np.arange(size, dtype=np.float64), (grid_n, 1)))
    ones_row = Tensor(np.ones((1, size)))

    def build(center):
        mu = nd.add(nd.mul(offsets, delta), center)                 # [N]
        mu_mat = nd.matmul(nd.reshape(mu, (grid_n, 1)), ones_row)   # [N, size]
        gauss = nd.exp(nd.neg(nd.div(nd.square(nd.sub(coords, mu_mat)),
                                     nd.mul(sigma2, 2.0))))
        sums = nd.reduce_sum(gauss, axes=[1])
        sums_mat = nd.matmul(nd.reshape(sums, (grid_n, 1)), ones_row)
        return nd.div(gauss, sums_mat)

    return build(gx), build(gy)


def _attention_params(model: DrawModel, head: str, h_dec: Tensor):
    """Map decoder state to (gx, gy, sigma2, delta, gamma) scalars."""
    size = model.config.tile_size
    grid_n = model.config.attention_grid
    raw = _linear(model.params, head, h_dec)    # [1, 5]

    def scalar(col):
        return nd.reshape(nd.narrow(raw, 1, col, 1), ())

    gx = nd.mul(nd.add(scalar(0), 1.0), (size + 1) / 2.0)
    gy = nd.mul(nd.add(scalar(1), 1.0), (size + 1) / 2.0)
    sigma2 = nd.exp(scalar(2))
    stride = (size - 1) / max(grid_n - 1, 1)
    delta = nd.mul(nd.exp(scalar(3)), stride)
    gamma = nd.exp(scalar(4))
    return gx, gy, sigma2, delta, gamma


def _channel_plane(image: Tensor, channel: int) -> Tensor:
    h, w, _ = image.shape
    return nd.reshape(nd.narrow(image, 2, channel, 1), (h, w))


def _glimpse(fx: Tensor, fy: Tensor, plane: Tensor) -> Tensor:
    return nd.matmul(nd.matmul(fy, plane), nd.transpose(fx))


def read(model: DrawModel, x: Tensor, err: Tensor, h_dec_prev: Tensor) -> Tensor:
    """Read vector for one step: full-tile concatenation or attended glimpses."""
    cfg = model.config
    if not cfg.attention_grid:
        return nd.concat([nd.reshape(x, (cfg.tile_values,)),
                          nd.reshape(err, (cfg.tile_values,))])
    grid_n = cfg.attention_grid
    gx, gy, sigma2, delta, gamma = _attention_params(model, "attn_read", h_dec_prev)
    fx, fy = attention_filters(gx, gy, sigma2, delta, grid_n, cfg.tile_size)
    parts = []
    for source in (x, err):
        for c in range(cfg.channels):
            patch = _glimpse(fx, fy, _channel_plane(source, c))
            parts.append(nd.reshape(nd.mul(patch, gamma), (grid_n * grid_n,)))
    return nd.concat(parts)


def encode_step(model: DrawModel, read_vec: Tensor, h_dec_prev: Tensor,
                state: DrawState) -> Tensor:
    """Advance the encoder cell; returns the new encoder hidden state."""
    x = nd.concat([nd.reshape(read_vec, (1, read_vec.size)), h_dec_prev], axis=1)
    state.h_enc, state.c_enc = _cell_step(model.params, "enc", x,
                                          state.h_enc, state.c_enc)
    return state.h_enc


def sample_z(model: DrawModel, h_enc: Tensor, rng) -> tuple[Tensor, Tensor, Tensor]:
    """Reparameterized latent draw: z = mu + sigma * eps, eps ~ N(0, I).

    Gradients flow through mu and sigma; the noise is a constant leaf.
    """
    z_dim = model.config.z_dim
    mu = nd.reshape(_linear(model.params, "mu", h_enc), (z_dim,))
    sigma = nd.exp(nd.reshape(_linear(model.params, "sigma", h_enc), (z_dim,)))
    eps = Tensor(rng.standard_normal(z_dim))
    z = nd.add(mu, nd.mul(sigma, eps))
    return mu, sigma, z


def decode_step(model: DrawModel, z: Tensor, state: DrawState) -> Tensor:
    """Advance the decoder cell on the latent sample; returns its hidden state."""
    x = nd.reshape(z, (1, z.size))
    state.h_dec, state.c_dec = _cell_step(model.params, "dec", x,
                                          state.h_dec, state.c_dec)
    return state.h_dec


def write(model: DrawModel, h_dec: Tensor) -> Tensor:
    """Canvas increment emitted from the decoder hidden state."""
    cfg = model.config
    flat = _linear(model.params, "write", h_dec)
    if not cfg.attention_grid:
        return nd.reshape(flat, (cfg.tile_size, cfg.tile_size, cfg.channels))
    grid_n = cfg.attention_grid
    gx, gy, sigma2, delta, gamma = _attention_params(model, "attn_write", h_dec)
    fx, fy = attention_filters(gx, gy, sigma2, delta, grid_n, cfg.tile_size)
    planes = []
    for c in range(cfg.channels):
        w_c = nd.reshape(nd.narrow(flat, 1, c * grid_n * grid_n, grid_n * grid_n),
                         (grid_n, grid_n))
        placed = nd.matmul(nd.matmul(nd.transpose(fy), w_c), fx)
        planes.append(nd.reshape(placed, (cfg.tile_size, cfg.tile_size, 1)))
    patch = nd.concat(planes, axis=2)
    return nd.div(patch, gamma)


def _check_tile(config: DrawConfig, tile: np.ndarray, what: str) -> None:
    expected = (config.tile_size, config.tile_size, config.channels)
    if tuple(tile.shape) != expected:
        raise ShapeError(f"{what} has shape {tile.shape}, expected {expected}")


def forward(model: DrawModel, x_input: np.ndarray, x_target: np.ndarray,
            rng) -> tuple[Tensor, LatentState]:
    """Run all steps reading the input tile, with errors against the target.

    Returns the output tile sigmoid(c_T) and the per-step latent state; a
    pure function of (parameters, inputs, rng stream).
    """
    cfg = model.config
    _check_tile(cfg, np.asarray(x_input), "x_input")
    _check_tile(cfg, np.asarray(x_target), "x_target")
    x_in = Tensor(x_input)
    x_tgt = Tensor(x_target)
    state = DrawState.initial(cfg)
    latents = LatentState()
    h_dec_prev = state.h_dec
    for _ in range(cfg.steps):
        err = nd.sub(x_tgt, nd.sigmoid(state.canvas))
        read_vec = read(model, x_in, err, h_dec_prev)
        h_enc = encode_step(model, read_vec, h_dec_prev, state)
        mu, sigma, z = sample_z(model, h_enc, rng)
        h_dec = decode_step(model, z, state)
        state.canvas = nd.add(state.canvas, write(model, h_dec))
        h_dec_prev = h_dec
        state.step += 1
        latents.append(mu, sigma, z)
    return nd.sigmoid(state.canvas), latents


def generate(model: DrawModel, x_input: np.ndarray, rng) -> np.ndarray:
    """Produce a neighbor tile from an input tile alone.

    No target exists at deployment, so the error channel sees a zero tile;
    the read pathway stays identical to training.
    """
    cfg = model.config
    zero_target = np.zeros((cfg.tile_size, cfg.tile_size, cfg.channels))
    output, _ = forward(model, x_input, zero_target, rng)
    return output.data
