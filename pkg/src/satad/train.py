"""Adversarial training of the generator and discriminator on normal windows."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import WindowSet
from .errors import ConfigError, ContractError, DivergenceError
from .model import GanModel, discriminate, generate
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``optimizer`` is ``"adam"`` (first-moment decay ``beta1``) or ``"sgd"``
    (heavy-ball with ``momentum``). Both use the scheduled learning rates.
    """

    epochs: int = 25
    batch_size: int = 64
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    decay_factor: float = 0.5
    decay_every: int = 10
    sample_average_every: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay_factor must lie in (0, 1]")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1")
        if self.sample_average_every < 0:
            raise ConfigError("sample_average_every must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")
        for name in ("momentum", "beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")


def scheduled_lr(lr0: float, epoch: int, cfg: TrainConfig) -> float:
    """Step decay: ``lr0 * decay_factor ** (epoch // decay_every)``."""
    return lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)
    d_real_mean: list[float] = field(default_factory=list)
    d_fake_mean: list[float] = field(default_factory=list)
    lr_g: list[float] = field(default_factory=list)
    lr_d: list[float] = field(default_factory=list)

    COLUMNS = ("step", "d_loss", "g_loss", "d_real_mean", "d_fake_mean", "lr_g", "lr_d")

    def __len__(self):
        return len(self.step)

    def append(self, **row) -> None:
        for key in self.COLUMNS:
            getattr(self, key).append(row[key])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.COLUMNS)
            for row in zip(*(getattr(self, k) for k in self.COLUMNS)):
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _safe_log(p: Tensor) -> Tensor:
    return T.log(T.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def _one_minus(p: Tensor) -> Tensor:
    return T.sub(Tensor._wrap(np.ones(p.shape)), p)


def _as_batch(a, what: str) -> Tensor:
    arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ContractError(f"{what} must be a non-empty (B, w, d) batch, got shape {arr.shape}")
    return a if isinstance(a, Tensor) else Tensor._wrap(arr)


def _d_terms(model: GanModel, real: Tensor, fake: Tensor):
    # -mean log D(real) - mean log(1 - D(fake))
    d_real = discriminate(model, real)
    d_fake = discriminate(model, fake)
    loss = T.add(T.scale(T.mean(_safe_log(d_real)), -1.0),
                 T.scale(T.mean(_safe_log(_one_minus(d_fake))), -1.0))
    return loss, d_real, d_fake


def _g_terms(model: GanModel, z: Tensor):
    d_fake = discriminate(model, generate(model, z))
    return T.scale(T.mean(_safe_log(d_fake)), -1.0), d_fake


def d_loss(model: GanModel, x_batch, z_batch) -> Tensor:
    """Discriminator loss, the negated objective D maximizes in the minimax game."""
    x = _as_batch(x_batch, "x_batch")
    z = _as_batch(z_batch, "z_batch")
    return _d_terms(model, x, generate(model, z))[0]


def g_loss(model: GanModel, z_batch) -> Tensor:
    """Non-saturating generator loss -mean log D(G(z))."""
    return _g_terms(model, _as_batch(z_batch, "z_batch"))[0]


class _Momentum:
    def __init__(self, params: list[Tensor], momentum: float):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, grads: dict, lr: float) -> None:
        for i, p in enumerate(self.params):
            v = self.momentum * self.velocity[i] + grads[p].data
            self.velocity[i] = v
            p.data = p.data - lr * v


class _Adam:
    def __init__(self, params: list[Tensor], beta1: float, beta2: float, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[p].data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


OPTIMIZERS = ("adam", "sgd")


def make_optimizer(params: list[Tensor], cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return _Adam(params, cfg.beta1, cfg.beta2)
    return _Momentum(params, cfg.momentum)


def discriminator_step(model: GanModel, x: np.ndarray, z: np.ndarray, lr: float,
                       opt=None) -> tuple[float, np.ndarray, np.ndarray]:
    """One gradient update of D on a fixed batch; returns (loss, D(x), D(G(z)))."""
    opt = opt or _Momentum(model.discriminator_params(), 0.0)
    fake = generate(model, Tensor._wrap(z))
    real = Tensor._wrap(x)
    with GradTape() as tape:
        loss, d_real, d_fake = _d_terms(model, real, fake)
    grads = T.backward(tape, loss, wrt=opt.params)
    value = loss.item()
    if math.isfinite(value):
        opt.step(grads, lr)
    return value, d_real.data, d_fake.data


def generator_step(model: GanModel, z: np.ndarray, lr: float,
                   opt=None) -> tuple[float, np.ndarray]:
    opt = opt or _Momentum(model.generator_params(), 0.0)
    with GradTape() as tape:
        loss, d_fake = _g_terms(model, Tensor._wrap(z))
    grads = T.backward(tape, loss, wrt=opt.params)
    value = loss.item()
    if math.isfinite(value):
        opt.step(grads, lr)
    return value, d_fake.data


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i:i + size] for i in range(0, order.size, size)]


def train(model: GanModel, windows: WindowSet, cfg: TrainConfig = TrainConfig()
          ) -> tuple[GanModel, TrainLog]:
    """Alternate one D update and one G update per batch.

    The input model is left untouched; a trained copy is returned. Shuffling
    and latent draws come from one generator seeded with ``cfg.seed``.
    """
    cfg.validate()
    model = model.copy()
    history = TrainLog()
    data = windows.windows
    if data.ndim != 3 or data.shape[1:] != (model.w, model.K):
        raise ContractError(f"windows of shape {data.shape[1:]} do not fit model ({model.w}, {model.K})")
    if cfg.epochs == 0:
        return model, history
    if len(windows) == 0:
        raise ContractError("no training windows")
    if windows.window_labels is not None and np.any(windows.window_labels == 0):
        raise ContractError("training windows must be normal (no label 0)")

    rng = np.random.default_rng(cfg.seed)
    opt_d = make_optimizer(model.discriminator_params(), cfg)
    opt_g = make_optimizer(model.generator_params(), cfg)
    n_avg = cfg.sample_average_every
    step = 0
    for epoch in range(cfg.epochs):
        lr_g = scheduled_lr(cfg.lr_g, epoch, cfg)
        lr_d = scheduled_lr(cfg.lr_d, epoch, cfg)
        raw: list[np.ndarray] = []
        for b, idx in enumerate(_batches(rng.permutation(len(windows)), cfg.batch_size)):
            xb = data[idx]
            raw.append(xb)
            if n_avg > 0 and (b + 1) % n_avg == 0:
                recent = raw[-n_avg:]
                k = min(r.shape[0] for r in recent)
                xb = np.mean([r[:k] for r in recent], axis=0)
            raw = raw[-n_avg:] if n_avg else []

            z_d = rng.standard_normal((xb.shape[0], model.w, model.L))
            dl, d_real, d_fake = discriminator_step(model, xb, z_d, lr_d, opt_d)
            z_g = rng.standard_normal((xb.shape[0], model.w, model.L))
            gl, _ = generator_step(model, z_g, lr_g, opt_g)
            if not (math.isfinite(dl) and math.isfinite(gl)):
                raise DivergenceError(
                    f"non-finite loss at step {step} (epoch {epoch}): d_loss={dl}, g_loss={gl}")
            history.append(step=step, d_loss=dl, g_loss=gl,
                           d_real_mean=float(np.mean(d_real)), d_fake_mean=float(np.mean(d_fake)),
                           lr_g=lr_g, lr_d=lr_d)
            step += 1
        log.debug("epoch %d: d_loss %.4f g_loss %.4f", epoch, history.d_loss[-1], history.g_loss[-1])
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise DivergenceError(f"parameter {name} became non-finite")
    return model, history
