"""Contrastive training of SVD and dense encoders.

Gradients are computed by hand-written reverse mode over the two layer
types.  Each optimizer step on an SVD encoder runs, in this order:

1. Adam (or plain SGD) on every parameter,
2. ``s`` and ``d`` of every layer replaced by their nearest semi-orthogonal
   matrix (``u @ v.T`` of their SVD),
3. ``v`` clipped at zero, then optionally truncated to a fixed rank.

Dense encoders only take step 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .linalg import make_rng, project_semi_orthogonal
from .network import (Encoder, SvdLayer, forward, relu, silu_grad,
                      truncate_rank)

log = logging.getLogger(__name__)

NORM_TOL = 1e-6


class StaleCacheError(RuntimeError):
    pass


class NumericalAbort(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(f"{message}; snapshot: {snapshot}")
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    lr_min: float = 1e-5
    epochs: int = 2000
    patience: int = 300
    batch_size: int = 500
    tau: float = 0.5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "cosine"
    val_fraction: float = 0.1
    views: int = 1
    optimizer: str = "adam"
    # stages 2-3 of the SVD update; off only for ablations and checks
    constrain: bool = True
    fixed_rank: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.patience < 1 or self.epochs < 1 or self.views < 1:
            raise ValueError("patience, epochs and views must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule '{self.schedule}'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.fixed_rank is not None:
            self.fixed_rank = tuple(int(r) for r in self.fixed_rank)

    def to_json(self) -> dict:
        out = asdict(self)
        if self.fixed_rank is not None:
            out["fixed_rank"] = list(self.fixed_rank)
        return out


# -- loss ------------------------------------------------------------------------


def normalize_rows(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    return h / np.maximum(norms, 1e-12), norms


def normalize_backward(z: np.ndarray, norms: np.ndarray, gz: np.ndarray) -> np.ndarray:
    return (gz - z * np.sum(z * gz, axis=1, keepdims=True)) / np.maximum(norms, 1e-12)


def infonce_loss(z: np.ndarray, z_aug: np.ndarray, tau: float):
    """NT-Xent loss over the 2N views and its gradients w.r.t. both inputs.

    Row ``i`` of ``z`` and of ``z_aug`` form a positive pair; every other view
    is a negative and self-similarities are excluded.  The loss is the mean
    over all 2N anchors.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n = z.shape[0]
    if n < 2 or z_aug.shape != z.shape:
        raise ValueError(f"need two equal batches of >= 2 rows, got {z.shape} and {z_aug.shape}")
    zz = np.vstack([z, z_aug])
    if np.max(np.abs(np.linalg.norm(zz, axis=1) - 1.0)) > NORM_TOL:
        raise ValueError("rows must be L2-normalized")
    m = 2 * n
    logits = zz @ zz.T / tau
    np.fill_diagonal(logits, -np.inf)
    pos = (np.arange(m) + n) % m
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    denom = e.sum(axis=1, keepdims=True)
    lse = np.log(denom[:, 0]) + top[:, 0]
    loss = float(np.mean(lse - logits[np.arange(m), pos]))
    g = e / denom
    g[np.arange(m), pos] -= 1.0
    g /= m
    gzz = (g + g.T) @ zz / tau
    return loss, gzz[:n], gzz[n:]


# -- reverse mode ------------------------------------------------------------------


@dataclass
class Tape:
    version: int
    entries: list
    output: np.ndarray


def forward_tape(enc: Encoder, h: np.ndarray) -> Tape:
    entries: list = []
    out = forward(enc, h, cache=entries)
    return Tape(enc.version, entries, out)


def backward(enc: Encoder, tape: Tape, grad_out: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Gradients of every parameter, one dict per layer, keyed like ``layer.params()``."""
    if tape.version != enc.version or len(tape.entries) != len(enc.layers):
        raise StaleCacheError("forward cache does not belong to the current parameters")
    grads: list[dict[str, np.ndarray]] = [{} for _ in enc.layers]
    g = np.asarray(grad_out, dtype=np.float64)
    last = len(enc.layers) - 1
    for l in range(last, -1, -1):
        layer = enc.layers[l]
        h, a, b, c = tape.entries[l]
        gc = g if l == last else g * silu_grad(c)
        out = grads[l]
        if layer.bias is not None:
            out["bias"] = gc.sum(axis=0)
        if isinstance(layer, SvdLayer):
            out["s"] = gc.T @ b
            gb = gc @ layer.s
            out["v"] = np.where(layer.v > 0, np.sum(gb * a, axis=0), 0.0)
            ga = gb * relu(layer.v)
            out["d"] = h.T @ ga
            g = ga @ layer.d.T
        else:
            out["w"] = gc.T @ h
            g = gc @ layer.w
    # same key order as layer.params()
    return [{k: grads[l][k] for k in layer.params()} for l, layer in enumerate(enc.layers)]


def loss_and_grads(enc: Encoder, x: np.ndarray, x_aug: np.ndarray, tau: float):
    """InfoNCE through normalize and encoder, with parameter gradients."""
    n = x.shape[0]
    tape = forward_tape(enc, np.vstack([x, x_aug]))
    z, norms = normalize_rows(tape.output)
    loss, gz, gza = infonce_loss(z[:n], z[n:], tau)
    gh = normalize_backward(z, norms, np.vstack([gz, gza]))
    return loss, backward(enc, tape, gh)


# -- optimizer ------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, enc: Encoder) -> "AdamState":
        m = [{k: np.zeros_like(p) for k, p in layer.params().items()} for layer in enc.layers]
        v = [{k: np.zeros_like(p) for k, p in layer.params().items()} for layer in enc.layers]
        return cls(0, m, v)


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    if cfg.schedule == "constant":
        return cfg.learning_rate
    frac = min(epoch, cfg.epochs) / cfg.epochs
    return cfg.lr_min + 0.5 * (cfg.learning_rate - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def _apply_update(enc, grads, state, cfg, lr):
    if cfg.optimizer == "sgd":
        for layer, g in zip(enc.layers, grads):
            for k, p in layer.params().items():
                p -= lr * g[k]
        return
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for layer, g, m, v in zip(enc.layers, grads, state.m, state.v):
        for k, p in layer.params().items():
            m[k] *= b1
            m[k] += (1.0 - b1) * g[k]
            v[k] *= b2
            v[k] += (1.0 - b2) * g[k] ** 2
            p -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.eps)


def three_stage_step(enc: Encoder, grads, state: AdamState, cfg: TrainConfig,
                     lr: float | None = None) -> tuple[Encoder, AdamState]:
    """Optimizer update, then projection and clipping for SVD layers (in place)."""
    lr = cfg.learning_rate if lr is None else lr
    _apply_update(enc, grads, state, cfg, lr)
    if cfg.constrain:
        for l, layer in enumerate(enc.layers):
            if not isinstance(layer, SvdLayer):
                continue
            layer.s[...] = project_semi_orthogonal(layer.s)
            layer.d[...] = project_semi_orthogonal(layer.d)
            np.maximum(layer.v, 0.0, out=layer.v)
            if cfg.fixed_rank is not None:
                layer.v[...] = truncate_rank(layer, cfg.fixed_rank[l]).v
    enc.version += 1
    return enc, state


# -- training loop ------------------------------------------------------------------------


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a new best validation loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainResult:
    encoder: Encoder
    history: list[tuple[int, float, float, float]]
    best_epoch: int
    stopped_epoch: int
    steps: int

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,lr"]
        lines += [f"{e},{tl!r},{vl!r},{lr!r}" for e, tl, vl, lr in self.history]
        return "\n".join(lines) + "\n"


def split_indices(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (train, validation) index split for a seed."""
    perm = make_rng(cfg.seed, 0).permutation(n)
    n_val = max(2, int(round(cfg.val_fraction * n)))
    if n - n_val < 2:
        raise ValueError(f"dataset of {n} samples is too small to split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _snapshot(enc, epoch, step, lr, loss):
    norms = {f"layer{l}.{k}": float(np.linalg.norm(p))
             for l, layer in enumerate(enc.layers) for k, p in layer.params().items()}
    return {"epoch": epoch, "step": step, "lr": lr, "loss": loss, "param_norms": norms}


def train(enc: Encoder, dataset: Dataset, augment: Callable, cfg: TrainConfig,
          on_step: Callable[[Encoder, int], None] | None = None) -> TrainResult:
    """Train a copy of ``enc``; returns the best-validation checkpoint.

    ``augment(batch, rng)`` returns one augmented view per row.  ``on_step``
    is called after every optimizer step with the live encoder and step index.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    x_all = dataset.features
    train_idx, val_idx = split_indices(len(dataset), cfg)
    x_val = x_all[val_idx]
    x_val_aug = augment(x_val, make_rng(cfg.seed, 1))

    enc = enc.copy()
    state = AdamState.zeros_like(enc)
    stopper = EarlyStopping(cfg.patience)
    best = enc.copy()
    history = []
    step = 0
    epoch = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        order = make_rng(cfg.seed, 2, epoch).permutation(train_idx)
        aug_rng = make_rng(cfg.seed, 3, epoch)
        total, count = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            x = x_all[idx]
            loss, grads = loss_and_grads(enc, x, augment(x, aug_rng), cfg.tau)
            for _ in range(cfg.views - 1):
                extra_loss, extra = loss_and_grads(enc, x, augment(x, aug_rng), cfg.tau)
                loss += extra_loss
                for g, e in zip(grads, extra):
                    for k in g:
                        g[k] += e[k]
            if cfg.views > 1:
                loss /= cfg.views
                for g in grads:
                    for k in g:
                        g[k] /= cfg.views
            if not math.isfinite(loss):
                raise NumericalAbort("non-finite training loss", _snapshot(enc, epoch, step, lr, loss))
            three_stage_step(enc, grads, state, cfg, lr)
            step += 1
            if on_step is not None:
                on_step(enc, step)
            total += loss * idx.size
            count += idx.size
        val_loss, _ = _eval_loss(enc, x_val, x_val_aug, cfg.tau)
        if not math.isfinite(val_loss):
            raise NumericalAbort("non-finite validation loss",
                                 _snapshot(enc, epoch, step, lr, val_loss))
        history.append((epoch, total / max(count, 1), val_loss, lr))
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = enc.copy()
        if stop:
            log.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break
    return TrainResult(best, history, stopper.best_epoch, epoch, step)


def _eval_loss(enc, x, x_aug, tau):
    n = x.shape[0]
    z, _ = normalize_rows(forward(enc, np.vstack([x, x_aug])))
    loss, _, _ = infonce_loss(z[:n], z[n:], tau)
    return loss, z


def encode(enc: Encoder, x: np.ndarray) -> np.ndarray:
    """L2-normalized encoder features for the rows of ``x``."""
    return normalize_rows(forward(enc, x))[0]
