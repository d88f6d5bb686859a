"""Training loop: adaptive-moment descent over tile quintets with loss logging.

Batching averages gradients over quintets processed sequentially (there is
no batched tensor axis).  Gradients are clipped by global norm each step;
checkpoints are written at every epoch end and at completion.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import draw
from . import ndtensor as nd
from .draw import DIRECTIONS, DrawModel
from .filterbank import FilterBank, build_lm_bank
from .losses import LossSpec, kl_latent, reconstruction_loss, total_loss
from .ndtensor import Tensor


class NumericError(RuntimeError):
    """Training hit a non-finite loss; the last finite checkpoint is retained."""


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    direction: str = "north"
    checkpoint_path: str | None = None
    log_path: str | None = None
    debug_checks: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("batch_size, learning_rate and clip_norm must be positive")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, "
                             f"got {self.direction!r}")


@dataclass
class LogRow:
    epoch: int
    step: int
    l_rec: float
    l_kl: float
    l_total: float
    ms: float


class LossLog:
    """Per-step loss rows; every row satisfies l_total == l_rec + l_kl."""

    HEADER = ("epoch", "step", "l_rec", "l_kl", "l_total", "ms")

    def __init__(self):
        self.rows: list[LogRow] = []

    def append(self, epoch: int, step: int, l_rec: float, l_kl: float,
               ms: float) -> None:
        self.rows.append(LogRow(epoch, step, l_rec, l_kl, l_rec + l_kl, ms))

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for row in self.rows:
                writer.writerow([row.epoch, row.step, repr(row.l_rec),
                                 repr(row.l_kl), repr(row.l_total), repr(row.ms)])


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: dict[str, Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        scale = self.learning_rate * math.sqrt(1.0 - self.beta2 ** self.t) \
            / (1.0 - self.beta1 ** self.t)
        for name, param in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            param.data = param.data - scale * self.m[name] \
                / (np.sqrt(self.v[name]) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def _loss_terms(model: DrawModel, quintet, cfg: TrainConfig,
                bank: FilterBank | None, rng):
    target = quintet.neighbor(cfg.direction)
    output, latents = draw.forward(model, quintet.center, target, rng)
    l_rec = reconstruction_loss(cfg.loss, Tensor(target), output, bank)
    l_kl = kl_latent(latents)
    return l_rec, l_kl, total_loss(l_rec, l_kl)


def _needs_bank(spec: LossSpec) -> bool:
    return spec.kind in ("fb", "fltbnk", "gram")


def train(model: DrawModel, dataset, cfg: TrainConfig,
          bank: FilterBank | None = None) -> tuple[DrawModel, LossLog]:
    """Optimize a direction model over epochs of quintets from the dataset.

    ``dataset`` is anything with an ``epoch(rng) -> list[TileQuintet]``
    method.  A non-finite loss aborts with the failing step index; the
    checkpoint from the last completed epoch stays on disk.
    """
    if bank is None and _needs_bank(cfg.loss):
        bank = build_lm_bank()
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.params, cfg.learning_rate)
    log = LossLog()
    step = 0
    for epoch in range(cfg.epochs):
        quintets = dataset.epoch(rng)
        if not quintets:
            raise ValueError("dataset produced an empty epoch")
        for start in range(0, len(quintets), cfg.batch_size):
            batch = quintets[start:start + cfg.batch_size]
            began = time.perf_counter()
            grads = {name: np.zeros_like(p.data) for name, p in model.params.items()}
            rec_sum = kl_sum = 0.0
            for quintet in batch:
                l_rec, l_kl, l_tot = _loss_terms(model, quintet, cfg, bank, rng)
                if not math.isfinite(l_tot.item()):
                    raise NumericError(f"non-finite loss at step {step} "
                                       f"(epoch {epoch})")
                nd.backward(l_tot)
                for name, param in model.params.items():
                    grads[name] += param.grad
                rec_sum += l_rec.item()
                kl_sum += l_kl.item()
            for g in grads.values():
                g /= len(batch)
            clip_global_norm(grads, cfg.clip_norm)
            optimizer.step(grads)
            if cfg.debug_checks and not model.all_finite():
                raise NumericError(f"non-finite parameter after step {step}")
            elapsed_ms = (time.perf_counter() - began) * 1000.0
            log.append(epoch, step, rec_sum / len(batch), kl_sum / len(batch),
                       elapsed_ms)
            step += 1
        if cfg.checkpoint_path:
            ckpt.save_model(cfg.checkpoint_path, model, seed=cfg.seed,
                            direction=cfg.direction)
    if cfg.checkpoint_path:
        ckpt.save_model(cfg.checkpoint_path, model, seed=cfg.seed,
                        direction=cfg.direction)
    if cfg.log_path:
        log.write_csv(cfg.log_path)
    return model, log


def evaluate(model: DrawModel, quintets, loss_spec: LossSpec,
             bank: FilterBank | None = None, direction: str = "north",
             seed: int = 0) -> tuple[float, float]:
    """Mean reconstruction and latent losses over a quintet list; no updates.

    The latent noise stream is seeded per call, so repeated calls on the
    same inputs give identical numbers.
    """
    if not quintets:
        raise ValueError("evaluate needs at least one quintet")
    if bank is None and _needs_bank(loss_spec):
        bank = build_lm_bank()
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(loss=loss_spec, epochs=0, direction=direction, seed=seed)
    rec_sum = kl_sum = 0.0
    for quintet in quintets:
        l_rec, l_kl, _ = _loss_terms(model, quintet, cfg, bank, rng)
        rec_sum += l_rec.item()
        kl_sum += l_kl.item()
    return rec_sum / len(quintets), kl_sum / len(quintets)
