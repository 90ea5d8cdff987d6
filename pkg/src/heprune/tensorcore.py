"""Dense float64 layers with hand-written backward passes.

Activations are numpy arrays laid out ``(batch, channels, height, width)``;
single samples of shape ``(channels, height, width)`` are accepted by the
convolution entry points and returned without the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    pass


@dataclass
class ConvLayerParams:
    weights: np.ndarray  # (c_out, c_in, f, f)
    bias: np.ndarray  # (c_out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise DimensionError(f"conv weights must be 4-D, got {self.weights.shape}")
        c_out, _, fh, fw = self.weights.shape
        if fh != fw or fh % 2 == 0:
            raise DimensionError(f"kernel must be square with odd size, got {fh}x{fw}")
        if self.bias.shape != (c_out,):
            raise DimensionError(f"bias shape {self.bias.shape} does not match c_out={c_out}")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def f(self) -> int:
        return self.weights.shape[2]

    def copy(self) -> "ConvLayerParams":
        return ConvLayerParams(self.weights.copy(), self.bias.copy())


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected (c,h,w) or (n,c,h,w) input, got shape {x.shape}")


def _windows(x, f):
    r = f // 2
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
    # (n, c, h, w, f, f)
    return sliding_window_view(xp, (f, f), axis=(2, 3))


def conv2d_forward(x, p: ConvLayerParams) -> np.ndarray:
    """Stride-1 'same' convolution (cross-correlation, as in CNN frameworks)."""
    xb, single = _as_batch(x)
    if xb.shape[1] != p.c_in:
        raise DimensionError(f"input has {xb.shape[1]} channels, layer expects {p.c_in}")
    win = _windows(xb, p.f)
    out = np.einsum("ncyxuv,ocuv->noyx", win, p.weights, optimize=True)
    out += p.bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(x, p: ConvLayerParams, grad_out):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    if gb.shape != (xb.shape[0], p.c_out) + xb.shape[2:]:
        raise DimensionError(f"grad_out shape {gb.shape} inconsistent with input {xb.shape}")
    f = p.f
    grad_w = np.einsum("ncyxuv,noyx->ocuv", _windows(xb, f), gb, optimize=True)
    grad_b = gb.sum(axis=(0, 2, 3))
    flipped = p.weights[:, :, ::-1, ::-1]
    grad_x = np.einsum("noyxab,ocab->ncyx", _windows(gb, f), flipped, optimize=True)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def global_avg_pool_forward(x):
    return x.mean(axis=(-2, -1))


def global_avg_pool_backward(x, grad_out):
    h, w = x.shape[-2:]
    return np.broadcast_to(grad_out[..., None, None] / (h * w), x.shape).copy()


def dense_forward(x, weights, bias):
    """``x`` is (n, d_in); ``weights`` is (d_out, d_in)."""
    if x.shape[-1] != weights.shape[1]:
        raise DimensionError(f"dense input width {x.shape[-1]} != {weights.shape[1]}")
    return x @ weights.T + bias


def dense_backward(x, weights, grad_out):
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def smoothed_targets(labels, num_classes: int, smoothing: float):
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {smoothing}")
    q = np.full((len(labels), num_classes), smoothing / num_classes)
    q[np.arange(len(labels)), labels] += 1.0 - smoothing
    return q


def softmax_xent_labelsmooth_forward(logits, labels, smoothing: float = 0.0) -> float:
    """Mean over the batch of ``-sum_k q_k log p_k``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = smoothed_targets(np.asarray(labels), logits.shape[1], smoothing)
    return float(-(q * _log_softmax(logits)).sum() / logits.shape[0])


def softmax_xent_labelsmooth_backward(logits, labels, smoothing: float = 0.0):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = smoothed_targets(np.asarray(labels), logits.shape[1], smoothing)
    return (np.exp(_log_softmax(logits)) - q) / logits.shape[0]
