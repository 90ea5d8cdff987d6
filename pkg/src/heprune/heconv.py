"""Convolution over packed slot vectors by rotating activations.

A layer is evaluated as a sum over block pairs ``(bi, bo)`` and diagonals
``j`` of channel-rotated single-input convolutions. Every spatial rotation of
an input block is computed once and shared by all slices that consume it.
Pruned positions and diagonals are skipped, so the ledger reflects exactly
the rotations a ciphertext evaluation would execute.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .costmodel import layer_report
from .masks import PruneMask
from .packing import PackedTensor, RotationLedger, SlotVector, rotate_pi, rotate_tau
from .tensorcore import ConvLayerParams


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class DiagonalSlice:
    """The ``c_n`` kernels ``W[bo*c_n + (i+j) % c_n, bi*c_n + i]`` for ``i < c_n``."""

    bi: int
    bo: int
    j: int
    kernels: np.ndarray  # (c_n, f, f), indexed by local input channel

    @property
    def c_n(self) -> int:
        return self.kernels.shape[0]

    @property
    def f(self) -> int:
        return self.kernels.shape[1]

    @classmethod
    def from_weights(cls, weights, bi: int, bo: int, j: int, c_n: int) -> "DiagonalSlice":
        local = np.arange(c_n)
        rows = bo * c_n + (local + j) % c_n
        cols = bi * c_n + local
        return cls(bi, bo, j, np.asarray(weights)[rows, cols])


@lru_cache(maxsize=256)
def _valid_slots(c_n: int, h: int, w: int, f: int, n_slots: int) -> np.ndarray:
    """(f, f, n_slots) booleans: slot reads an in-bounds pixel under offset (u, v)."""
    r = f // 2
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.zeros((f, f, n_slots), dtype=bool)
    for u in range(f):
        for v in range(f):
            yy, xx = ys + u - r, xs + v - r
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            out[u, v, :c_n * h * w] = np.tile(ok.ravel(), c_n)
    out.flags.writeable = False
    return out


def arrange_gamma(w_slice: DiagonalSlice, pos, h: int, w: int, n_slots: int | None = None) -> np.ndarray:
    """Slot-aligned weight vector for kernel offset ``pos = (u, v)``.

    Slot ``s`` of local channel ``i`` carries ``kernels[i, u, v]``, zeroed where
    the rotated activation at ``s`` would come from outside the image.
    """
    u, v = pos
    f, c_n = w_slice.f, w_slice.c_n
    if not (0 <= u < f and 0 <= v < f):
        raise IndexError(f"kernel offset {pos} outside {f}x{f}")
    n_slots = c_n * h * w if n_slots is None else n_slots
    per_slot = np.zeros(n_slots)
    per_slot[:c_n * h * w] = np.repeat(w_slice.kernels[:, u, v], h * w)
    return per_slot * _valid_slots(c_n, h, w, f, n_slots)[u, v]


def _offsets(f: int, positional):
    """Kernel offsets in ascending row-major order, skipping pruned ones."""
    return [(u, v) for u in range(f) for v in range(f) if positional is None or positional[u, v]]


def rotated_inputs(x: SlotVector, f: int, positional, ledger: RotationLedger, layer_id=None) -> dict:
    """All spatial rotations of ``x`` needed by the retained offsets."""
    r = f // 2
    return {(u, v): rotate_tau(x, u - r, v - r, ledger, layer_id) for (u, v) in _offsets(f, positional)}


def siso_conv(x: SlotVector, w_slice: DiagonalSlice, pos_mask, ledger: RotationLedger,
              rotated: dict | None = None, layer_id=None) -> SlotVector:
    """``sum_i tau_i(x) * gamma_i(w_slice)`` over retained offsets.

    ``pos_mask`` is an (f, f) boolean array or None for no positional pruning.
    Pass ``rotated`` (from :func:`rotated_inputs`) to reuse rotations already
    paid for; otherwise they are executed and counted here.
    """
    if x.c_n != w_slice.c_n:
        raise LayoutError(f"vector packs {x.c_n} channels, slice expects {w_slice.c_n}")
    f = w_slice.f
    if rotated is None:
        rotated = rotated_inputs(x, f, pos_mask, ledger, layer_id)
    acc = np.zeros(x.n_slots)
    for pos in _offsets(f, pos_mask):
        acc += rotated[pos].slots * arrange_gamma(w_slice, pos, x.h, x.w, x.n_slots)
    return x.with_slots(acc)


def mimo_conv(x: PackedTensor, p: ConvLayerParams, mask: PruneMask | None,
              ledger: RotationLedger, layer_id=None) -> PackedTensor:
    """Packed convolution of a whole layer; weights outside ``mask`` count as zero."""
    c_n = x.c_n
    if p.c_in % c_n or p.c_out % c_n:
        raise LayoutError(f"c_n={c_n} must divide c_in={p.c_in} and c_out={p.c_out}")
    if x.n_blocks * c_n != p.c_in:
        raise LayoutError(f"packed input has {x.n_blocks * c_n} channels, layer expects {p.c_in}")
    if mask is None:
        mask = PruneMask.full(p.c_out, p.c_in, p.f, c_n)
    if mask.diagonal.shape != (p.c_in // c_n, p.c_out // c_n, c_n) or mask.f != p.f:
        raise LayoutError("mask dimensions do not match the layer")

    weights = p.weights * mask.weight_mask()
    bias = p.bias * mask.bias_mask()
    in_blocks, out_blocks = p.c_in // c_n, p.c_out // c_n
    hw = x.h * x.w
    template = x.vectors[0]

    rotated = [rotated_inputs(v, p.f, mask.positional, ledger, layer_id) for v in x.vectors]

    outputs = []
    for bo in range(out_blocks):
        acc = np.zeros(template.n_slots)
        for bi in range(in_blocks):
            for j in range(c_n):
                if not mask.diagonal[bi, bo, j]:
                    continue
                sl = DiagonalSlice.from_weights(weights, bi, bo, j, c_n)
                part = siso_conv(x.vectors[bi], sl, mask.positional, ledger, rotated[bi], layer_id)
                # partial for output o = i + j sits at local slot-channel i: shift right by j
                acc += rotate_pi(part, (c_n - j) % c_n, ledger, layer_id).slots
        acc[:c_n * hw] += np.repeat(bias[bo * c_n:(bo + 1) * c_n], hw)
        outputs.append(SlotVector(acc, c_n, x.h, x.w, channel_base=bo * c_n, layer_id=layer_id))
    return PackedTensor(outputs, p.c_out, x.h, x.w, c_n)


def count_rotations(ledger: RotationLedger) -> tuple[int, int, int]:
    return ledger.tau_count, ledger.pi_count, ledger.total


def ledger_export(ledger: RotationLedger, masks: dict) -> list[dict]:
    """Per-layer report rows; ``masks`` maps layer id to the mask used."""
    rows = []
    for layer_id, mask in masks.items():
        tau, pi = ledger.layer(layer_id)
        rows.append(layer_report(layer_id, mask, tau, pi))
    return rows


def ledger_json(ledger: RotationLedger, masks: dict) -> str:
    return json.dumps(ledger_export(ledger, masks), indent=2)
