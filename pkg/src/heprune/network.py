"""Desk-scale CNN: stacked same-padded convs, ReLU, global average pool, dense head."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .heconv import mimo_conv
from .masks import PruneMask
from .packing import RotationLedger, pack, unpack


@dataclass
class ToyCNN:
    convs: list  # ConvLayerParams
    dense_w: np.ndarray  # (num_classes, channels)
    dense_b: np.ndarray
    c_n: int
    masks: list = field(default_factory=list)

    def __post_init__(self):
        if not self.masks:
            self.masks = [PruneMask.full(p.c_out, p.c_in, p.f, self.c_n) for p in self.convs]

    @property
    def num_classes(self) -> int:
        return self.dense_w.shape[0]

    def copy(self) -> "ToyCNN":
        return ToyCNN(
            [p.copy() for p in self.convs],
            self.dense_w.copy(),
            self.dense_b.copy(),
            self.c_n,
            [m.copy() for m in self.masks],
        )

    def params(self) -> list:
        """Flat list of parameter arrays, in the order used for gradients."""
        out = []
        for p in self.convs:
            out += [p.weights, p.bias]
        return out + [self.dense_w, self.dense_b]

    def param_masks(self) -> list:
        out = []
        for m in self.masks:
            out += [m.weight_mask(), m.bias_mask()]
        return out + [None, None]

    def apply_masks(self):
        """Hard-zero every pruned weight (in place)."""
        for p, m in zip(self.convs, self.masks):
            p.weights *= m.weight_mask()
            p.bias *= m.bias_mask()

    def conv_weights(self) -> list:
        return [p.weights for p in self.convs]


def xavier_uniform(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(in_channels: int, widths, num_classes: int, c_n: int, f: int = 3, seed: int = 0) -> ToyCNN:
    rng = np.random.default_rng(seed)
    convs = []
    c_in = in_channels
    for c_out in widths:
        w = xavier_uniform(rng, (c_out, c_in, f, f), c_in * f * f, c_out * f * f)
        convs.append(tc.ConvLayerParams(w, np.zeros(c_out)))
        c_in = c_out
    dense_w = xavier_uniform(rng, (num_classes, c_in), c_in, num_classes)
    return ToyCNN(convs, dense_w, np.zeros(num_classes), c_n)


def forward(model: ToyCNN, x):
    """Batched forward pass; returns ``(logits, cache)``."""
    cache = {"inputs": [], "pre": []}
    h = np.asarray(x, dtype=np.float64)
    for p in model.convs:
        cache["inputs"].append(h)
        z = tc.conv2d_forward(h, p)
        cache["pre"].append(z)
        h = tc.relu_forward(z)
    cache["last"] = h
    pooled = tc.global_avg_pool_forward(h)
    cache["pooled"] = pooled
    return tc.dense_forward(pooled, model.dense_w, model.dense_b), cache


def backward(model: ToyCNN, cache, grad_logits) -> list:
    """Gradients for every array in ``model.params()``, same order."""
    g_pooled, g_dw, g_db = tc.dense_backward(cache["pooled"], model.dense_w, grad_logits)
    g = tc.global_avg_pool_backward(cache["last"], g_pooled)
    conv_grads = []
    for p, x_in, z in reversed(list(zip(model.convs, cache["inputs"], cache["pre"]))):
        g = tc.relu_backward(z, g)
        g, gw, gb = tc.conv2d_backward(x_in, p, g)
        conv_grads.append((gw, gb))
    grads = []
    for gw, gb in reversed(conv_grads):
        grads += [gw, gb]
    return grads + [g_dw, g_db]


def predict(model: ToyCNN, x, batch_size: int = 256) -> np.ndarray:
    out = []
    for s in range(0, len(x), batch_size):
        logits, _ = forward(model, x[s:s + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(model: ToyCNN, x, y) -> float:
    """Percent correct."""
    return 100.0 * float(np.mean(predict(model, x) == y))


def packed_forward(model: ToyCNN, x, ledger: RotationLedger | None = None, n_slots: int | None = None):
    """Logits for one ``(c, h, w)`` sample with every conv run in the packed domain.

    ReLU acts slot-wise; pooling and the dense head run on the unpacked result.
    """
    ledger = RotationLedger() if ledger is None else ledger
    pt = pack(x, model.c_n, n_slots)
    for idx, (p, m) in enumerate(zip(model.convs, model.masks)):
        pt = mimo_conv(pt, p, m, ledger, layer_id=idx)
        for v in pt.vectors:
            np.maximum(v.slots, 0.0, out=v.slots)
    h = unpack(pt)
    return tc.dense_forward(h.mean(axis=(1, 2))[None], model.dense_w, model.dense_b)[0]


@dataclass
class SyntheticTask:
    """Seeded multi-class images: class prototypes plus Gaussian noise."""

    num_classes: int = 8
    channels: int = 4
    size: int = 8
    n_train: int = 512
    n_test: int = 512
    noise: float = 1.0
    seed: int = 0

    def generate(self):
        rng = np.random.default_rng(self.seed)
        protos = rng.normal(size=(self.num_classes, self.channels, self.size, self.size))

        def draw(n):
            y = np.arange(n) % self.num_classes
            rng.shuffle(y)
            x = protos[y] + self.noise * rng.normal(size=(n, self.channels, self.size, self.size))
            return x, y

        x_tr, y_tr = draw(self.n_train)
        x_te, y_te = draw(self.n_test)
        return x_tr, y_tr, x_te, y_te


def model_to_dict(model: ToyCNN) -> dict:
    return {
        "c_n": model.c_n,
        "convs": [
            {"shape": list(p.weights.shape), "weights": p.weights.ravel().tolist(), "bias": p.bias.tolist()}
            for p in model.convs
        ],
        "dense_w": {"shape": list(model.dense_w.shape), "data": model.dense_w.ravel().tolist()},
        "dense_b": model.dense_b.tolist(),
        "masks": [m.to_dict() for m in model.masks],
    }


def model_from_dict(d: dict) -> ToyCNN:
    convs = [
        tc.ConvLayerParams(np.asarray(c["weights"]).reshape(c["shape"]), np.asarray(c["bias"]))
        for c in d["convs"]
    ]
    dw = np.asarray(d["dense_w"]["data"]).reshape(d["dense_w"]["shape"])
    masks = [PruneMask.from_dict(m) for m in d.get("masks", [])]
    return ToyCNN(convs, dw, np.asarray(d["dense_b"]), int(d["c_n"]), masks)


def save_checkpoint(path, model: ToyCNN, **meta):
    payload = {"format": "heprune-checkpoint/1", "model": model_to_dict(model), **meta}
    path = Path(path)
    # write-then-rename so concurrent writers never leave a torn file
    with tempfile.NamedTemporaryFile("w", dir=path.parent or ".", suffix=".tmp", delete=False) as fh:
        fh.write(json.dumps(payload))
    os.replace(fh.name, path)


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    payload = json.loads(Path(path).read_text())
    model = model_from_dict(payload.pop("model"))
    return model, payload
