"""Channel-major slot packing of activations into virtual ciphertexts.

Each :class:`SlotVector` holds ``c_n`` channels back to back, channel ``c``
occupying slots ``[c*h*w, (c+1)*h*w)`` in row-major spatial order. Rotations
are pure slot permutations that bump a :class:`RotationLedger`; no
cryptography is performed.
"""
from __future__ import annotations

import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class CapacityError(ValueError):
    pass


class RotationLedger:
    """Counts of executed non-trivial rotations, with a per-layer breakdown.

    Increments are guarded by a lock so one ledger can be shared across
    threads evaluating different output blocks.
    """

    def __init__(self):
        self.tau_count = 0
        self.pi_count = 0
        self.per_layer: dict = defaultdict(lambda: {"tau": 0, "pi": 0})
        self._lock = threading.Lock()

    def add_tau(self, layer_id=None, n: int = 1):
        with self._lock:
            self.tau_count += n
            self.per_layer[layer_id]["tau"] += n

    def add_pi(self, layer_id=None, n: int = 1):
        with self._lock:
            self.pi_count += n
            self.per_layer[layer_id]["pi"] += n

    @property
    def total(self) -> int:
        return self.tau_count + self.pi_count

    def merge(self, other: "RotationLedger"):
        for layer_id, counts in other.per_layer.items():
            self.add_tau(layer_id, counts["tau"])
            self.add_pi(layer_id, counts["pi"])

    def layer(self, layer_id) -> tuple[int, int]:
        counts = self.per_layer.get(layer_id, {"tau": 0, "pi": 0})
        return counts["tau"], counts["pi"]

    def __repr__(self):
        return f"RotationLedger(tau={self.tau_count}, pi={self.pi_count})"


@dataclass(frozen=True)
class SlotVector:
    slots: np.ndarray
    c_n: int
    h: int
    w: int
    channel_base: int = 0
    layer_id: object = field(default=None, compare=False)

    @property
    def span(self) -> int:
        """Number of slots occupied by packed channels."""
        return self.c_n * self.h * self.w

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def channel(self, c: int) -> np.ndarray:
        hw = self.h * self.w
        return self.slots[c * hw:(c + 1) * hw].reshape(self.h, self.w)

    def with_slots(self, slots) -> "SlotVector":
        return SlotVector(slots, self.c_n, self.h, self.w, self.channel_base, self.layer_id)


@dataclass
class PackedTensor:
    vectors: list
    c_in: int  # logical channel count before zero padding
    h: int
    w: int
    c_n: int

    @property
    def n_blocks(self) -> int:
        return len(self.vectors)


def channels_per_ciphertext(n_slots: int, h: int, w: int, c_in: int | None = None) -> int:
    """Largest power of two ``c`` with ``c*h*w <= n_slots``, optionally capped at ``c_in``.

    >>> channels_per_ciphertext(4096, 32, 32)
    4
    """
    hw = h * w
    if hw <= 0 or n_slots <= 0:
        raise CapacityError("slot count and spatial dims must be positive")
    if hw > n_slots:
        raise CapacityError(f"one {h}x{w} channel needs {hw} slots, only {n_slots} available")
    c_n = 1 << ((n_slots // hw).bit_length() - 1)
    if c_in is not None:
        c_n = min(c_n, 1 << max(int(c_in) - 1, 0).bit_length())
    return c_n


def pack(x, c_n: int, n_slots: int | None = None) -> PackedTensor:
    """Pack a ``(c_in, h, w)`` array; ``c_in`` is zero-padded to a multiple of ``c_n``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"pack expects (c, h, w), got {x.shape}")
    c_in, h, w = x.shape
    span = c_n * h * w
    n_slots = span if n_slots is None else n_slots
    if span > n_slots:
        raise CapacityError(f"{c_n} channels of {h}x{w} need {span} slots > {n_slots}")
    n_blocks = -(-c_in // c_n)
    padded = np.zeros((n_blocks * c_n, h, w))
    padded[:c_in] = x
    vectors = []
    for b in range(n_blocks):
        slots = np.zeros(n_slots)
        slots[:span] = padded[b * c_n:(b + 1) * c_n].ravel()
        vectors.append(SlotVector(slots, c_n, h, w, channel_base=b * c_n))
    return PackedTensor(vectors, c_in, h, w, c_n)


def unpack(pt: PackedTensor) -> np.ndarray:
    hw = pt.h * pt.w
    blocks = [v.slots[:pt.c_n * hw].reshape(pt.c_n, pt.h, pt.w) for v in pt.vectors]
    return np.concatenate(blocks, axis=0)[:pt.c_in].copy()


def _rotate_span(v: SlotVector, k: int) -> np.ndarray:
    # Cyclic over the packed span; models the packed block replicated to fill
    # the ciphertext so that channel-block shifts wrap within c_n channels.
    out = v.slots.copy()
    span = v.span
    out[:span] = np.roll(v.slots[:span], -k)
    return out


def rotate_tau(v: SlotVector, dy: int, dx: int, ledger: RotationLedger, layer_id=None) -> SlotVector:
    """Left-rotate by ``dy*w + dx`` slots (spatial shift of every packed channel)."""
    if abs(dy) >= v.h or abs(dx) >= v.w:
        raise ValueError(f"shift ({dy}, {dx}) out of range for {v.h}x{v.w} channels")
    if dy == 0 and dx == 0:
        return v
    ledger.add_tau(layer_id)
    return v.with_slots(_rotate_span(v, dy * v.w + dx))


def rotate_pi(v: SlotVector, j: int, ledger: RotationLedger, layer_id=None) -> SlotVector:
    """Left-rotate by ``j`` whole channels."""
    if not 0 <= j < v.c_n:
        raise ValueError(f"channel rotation {j} outside [0, {v.c_n})")
    if j == 0:
        return v
    ledger.add_pi(layer_id)
    return v.with_slots(_rotate_span(v, j * v.h * v.w))
