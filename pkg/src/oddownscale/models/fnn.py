"""Fully connected ReLU regressor trained with Adam and a triangular LR cycle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .base import ConvergenceError, Model, ModelError, check_xy

logger = logging.getLogger(__name__)

WIDTHS = (50, 100, 150)
DEPTHS = (2, 4)
SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class FnnConfig:
    width: int = 150
    depth: int = 2
    seed: int = 0
    epochs: int = 2000
    batch_size: int = 5000
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    lr_max: float = 1e-2
    lr_min: float = 1e-6
    cycles: int = 1
    allow_off_grid: bool = False

    kind = "fnn"

    def __post_init__(self) -> None:
        if self.width < 1 or self.depth < 1 or self.epochs < 1 or self.batch_size < 1 or self.cycles < 1:
            raise ModelError("width, depth, epochs, batch_size and cycles must be positive")
        if not self.allow_off_grid:
            if self.width not in WIDTHS:
                raise ModelError(f"width={self.width} is off the grid {WIDTHS}")
            if self.depth not in DEPTHS:
                raise ModelError(f"depth={self.depth} is off the grid {DEPTHS}")

    def grid_key(self) -> tuple:
        return (self.width, self.depth, self.seed)


def triangular_lr(step: int, total_steps: int, lr_min: float, lr_max: float, cycles: int = 1) -> float:
    """Symmetric triangle: ``lr_min`` at each cycle edge, ``lr_max`` mid-cycle."""
    if total_steps <= 1:
        return lr_max
    span = (total_steps - 1) / cycles
    phase = (step / span) % 1.0 if step < total_steps - 1 else 1.0
    return lr_min + (lr_max - lr_min) * (1.0 - abs(2.0 * phase - 1.0))


def relu(z):
    return np.maximum(z, 0.0)


class FnnModel(Model):
    """``layers`` holds ``(W, b)`` with ``W`` shaped ``(fan_in, fan_out)``."""

    kind = "fnn"

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]], config: FnnConfig | None = None,
                 loss_history: list[float] | None = None):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers]
        for (w0, b0), (w1, _) in zip(self.layers, self.layers[1:]):
            if w0.shape[1] != w1.shape[0] or b0.shape != (w0.shape[1],):
                raise ModelError("layer dimensions do not chain")
        if self.layers[-1][0].shape[1] != 1:
            raise ModelError("output layer must have width 1")
        self.n_features = self.layers[0][0].shape[0]
        self.config = config
        self.loss_history = loss_history or []

    def _predict(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in self.layers[:-1]:
            h = relu(h @ w + b)
        w, b = self.layers[-1]
        return (h @ w + b)[:, 0]

    def __repr__(self) -> str:
        widths = [w.shape[1] for w, _ in self.layers[:-1]]
        return f"FnnModel(hidden={widths})"


def init_layers(n_in: int, width: int, depth: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-uniform weights, biases uniform in ``+-1/sqrt(fan_in)``."""
    dims = [n_in] + [width] * depth + [1]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w_bound = np.sqrt(6.0 / fan_in)
        b_bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-w_bound, w_bound, size=(fan_in, fan_out)),
                       rng.uniform(-b_bound, b_bound, size=fan_out)))
    return layers


def loss_and_grads(layers, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient with respect to every ``(W, b)``."""
    acts = [x]
    pre = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w, b = layers[-1]
    out = (h @ w + b)[:, 0]
    resid = out - y
    loss = float(np.mean(resid * resid))
    delta = (2.0 / y.size) * resid[:, None]
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
        if k:
            delta = (delta @ w.T) * (pre[k - 1] > 0)
    return loss, grads


def fit_fnn(x, y, config: FnnConfig | None = None) -> FnnModel:
    config = config or FnnConfig()
    x, y = check_xy(x, y, min_rows=1)
    n = x.shape[0]
    rng = np.random.default_rng(config.seed)
    layers = init_layers(x.shape[1], config.width, config.depth, rng)
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    batch = min(config.batch_size, n)
    per_epoch = -(-n // batch)
    total = config.epochs * per_epoch
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n) if per_epoch > 1 else np.arange(n)
        epoch_loss = 0.0
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            loss, grads = loss_and_grads(layers, x[idx], y[idx])
            if not np.isfinite(loss):
                raise ConvergenceError(f"loss became {loss} at epoch {epoch}")
            epoch_loss += loss * idx.size
            lr = triangular_lr(step, total, config.lr_min, config.lr_max, config.cycles)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for k, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
                mw, mb = m[k]
                vw, vb = v[k]
                for p, g, mp, vp in ((w, gw, mw, vw), (b, gb, mb, vb)):
                    mp *= b1
                    mp += (1.0 - b1) * g
                    vp *= b2
                    vp += (1.0 - b2) * g * g
                    p -= lr * (mp / c1) / (np.sqrt(vp / c2) + eps)
        history.append(epoch_loss / n)
    logger.debug("fnn %s final training loss %.6g", config, history[-1])
    return FnnModel(layers, config, history)
