"""Training with rotation-aware group Lasso penalties.

The objective is data loss plus ``lam * sum(w**2)`` over all weight matrices,
plus ``lam_p`` times the summed positional group norms and ``lam_d`` times
the summed diagonal group norms of every conv layer.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorcore as tc
from .masks import diagonal_index
from .network import ToyCNN, accuracy, backward, forward

log = logging.getLogger(__name__)

GROUP_EPS = 1e-12


class DivergenceError(RuntimeError):
    pass


@dataclass
class RegFactors:
    lam: float = 0.0
    lam_p: float = 0.0
    lam_d: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    schedule: str = "cosine"  # "cosine" | "step" | "constant"
    milestones: list = field(default_factory=lambda: [50, 100, 130, 160])
    step_factor: float = 5.0
    batch_size: int = 100
    epochs: int = 200
    label_smoothing: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.schedule not in ("cosine", "step", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "cosine":
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * epoch / self.epochs))
        if self.schedule == "step":
            return self.lr / self.step_factor ** sum(epoch >= m for m in self.milestones)
        return self.lr


# group norms ---------------------------------------------------------------

def positional_norms(w) -> np.ndarray:
    """(f, f) array of L2 norms over all filters and channels at each position."""
    return np.sqrt(np.einsum("oiuv,oiuv->uv", w, w))


def diagonal_norms(w, c_n: int) -> np.ndarray:
    """(c_in/c_n, c_out/c_n, c_n) array of diagonal group L2 norms."""
    c_out, c_in = w.shape[:2]
    bi, bo, j = diagonal_index(c_out, c_in, c_n)
    shape = (c_in // c_n, c_out // c_n, c_n)
    flat = np.ravel_multi_index((bi, bo, j), shape)
    sq = np.einsum("oiuv,oiuv->oi", w, w)
    return np.sqrt(np.bincount(flat.ravel(), weights=sq.ravel(), minlength=int(np.prod(shape)))).reshape(shape)


def lasso_position(w) -> float:
    return float(positional_norms(w).sum())


def lasso_diagonal(w, c_n: int) -> float:
    return float(diagonal_norms(w, c_n).sum())


def _scaled(w, norms, eps):
    inv = np.where(norms > eps, 1.0 / np.where(norms > eps, norms, 1.0), 0.0)
    return w * inv


def lasso_subgradient(w, reg: RegFactors, c_n: int, eps: float = GROUP_EPS) -> np.ndarray:
    """Gradient of ``lam_p * R_pos + lam_d * R_diag`` for one layer; 0 on zero-norm groups."""
    grad = np.zeros_like(w)
    if reg.lam_p:
        grad += reg.lam_p * _scaled(w, positional_norms(w)[None, None], eps)
    if reg.lam_d:
        c_out, c_in = w.shape[:2]
        bi, bo, j = diagonal_index(c_out, c_in, c_n)
        per_kernel = diagonal_norms(w, c_n)[bi, bo, j]
        grad += reg.lam_d * _scaled(w, per_kernel[:, :, None, None], eps)
    return grad


def regularizer(model: ToyCNN, reg: RegFactors) -> float:
    total = 0.0
    if reg.lam:
        total += reg.lam * sum(float(np.sum(w * w)) for w in model.conv_weights() + [model.dense_w])
    for w in model.conv_weights():
        if reg.lam_p:
            total += reg.lam_p * lasso_position(w)
        if reg.lam_d:
            total += reg.lam_d * lasso_diagonal(w, model.c_n)
    return total


def total_loss(model: ToyCNN, x, y, reg: RegFactors, smoothing: float = 0.0) -> float:
    logits, _ = forward(model, x)
    return tc.softmax_xent_labelsmooth_forward(logits, y, smoothing) + regularizer(model, reg)


def loss_and_grads(model: ToyCNN, x, y, reg: RegFactors, smoothing: float = 0.0):
    """Full objective and its gradient for every array in ``model.params()``."""
    logits, cache = forward(model, x)
    loss = tc.softmax_xent_labelsmooth_forward(logits, y, smoothing) + regularizer(model, reg)
    grads = backward(model, cache, tc.softmax_xent_labelsmooth_backward(logits, y, smoothing))
    n_conv = len(model.convs)
    for k, w in enumerate(model.conv_weights()):
        if reg.lam:
            grads[2 * k] += 2.0 * reg.lam * w
        if reg.lam_p or reg.lam_d:
            grads[2 * k] += lasso_subgradient(w, reg, model.c_n)
    if reg.lam:
        grads[2 * n_conv] += 2.0 * reg.lam * model.dense_w
    return loss, grads


# optimisation --------------------------------------------------------------

class SGD:
    """Heavy-ball momentum, ``v = mu*v + g; w -= lr*v``; respects prune masks."""

    def __init__(self, model: ToyCNN, momentum: float = 0.9):
        self.model = model
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in model.params()]

    def step(self, grads, lr: float):
        for p, g, v, m in zip(self.model.params(), grads, self.velocity, self.model.param_masks()):
            if m is not None:
                g = g * m
            v *= self.momentum
            v += g
            p -= lr * v
            if m is not None:
                p *= m


def mean_group_norms(model: ToyCNN) -> tuple[float, float]:
    pos = np.concatenate([positional_norms(w).ravel() for w in model.conv_weights()])
    diag = np.concatenate([diagonal_norms(w, model.c_n).ravel() for w in model.conv_weights()])
    return float(pos.mean()), float(diag.mean())


def run_epoch(model, opt, x, y, reg, lr, batch_size, smoothing, rng):
    order = rng.permutation(len(x))
    losses = []
    for s in range(0, len(x), batch_size):
        idx = order[s:s + batch_size]
        loss, grads = loss_and_grads(model, x[idx], y[idx], reg, smoothing)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at lr={lr}")
        opt.step(grads, lr)
        if not all(np.isfinite(p).all() for p in model.params()):
            raise DivergenceError(f"non-finite parameters after a step at lr={lr}")
        losses.append(loss)
    return float(np.mean(losses))


def train(model: ToyCNN, data, config: TrainConfig, reg: RegFactors):
    """SGD-momentum training on the full objective. Mutates and returns ``model``.

    ``data`` is ``(x_train, y_train, x_eval, y_eval)``. The history holds one
    dict per epoch.
    """
    x_tr, y_tr, x_ev, y_ev = data
    rng = np.random.default_rng(config.seed)
    opt = SGD(model, config.momentum)
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        loss = run_epoch(model, opt, x_tr, y_tr, reg, lr, config.batch_size, config.label_smoothing, rng)
        pos, diag = mean_group_norms(model)
        history.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss,
            "eval_accuracy": accuracy(model, x_ev, y_ev),
            "mean_positional_norm": pos,
            "mean_diagonal_norm": diag,
        })
        log.debug("epoch %d loss %.4f acc %.2f", epoch, loss, history[-1]["eval_accuracy"])
    return model, history
