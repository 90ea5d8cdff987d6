"""Structured prune masks for one convolution layer."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def diagonal_index(c_out: int, c_in: int, c_n: int):
    """Per-kernel ``(bi, bo, j)`` coordinates, each an int array of shape (c_out, c_in).

    Kernel ``W[o, i]`` sits on diagonal ``j`` of block pair ``(i // c_n, o // c_n)``
    where ``o = i + j (mod c_n)`` on the local channel indices.
    """
    if c_out % c_n or c_in % c_n:
        raise ValueError(f"c_n={c_n} must divide c_in={c_in} and c_out={c_out}")
    o = np.arange(c_out)[:, None]
    i = np.arange(c_in)[None, :]
    bi = np.broadcast_to(i // c_n, (c_out, c_in))
    bo = np.broadcast_to(o // c_n, (c_out, c_in))
    j = (o % c_n - i % c_n) % c_n
    for a in (bi, bo, j):
        a.flags.writeable = False
    return bi, bo, j


@dataclass
class PruneMask:
    """Active (True) / pruned (False) flags for the structured weight groups of a layer.

    ``positional`` is layer-global, shape (f, f). ``diagonal`` has shape
    (c_in/c_n, c_out/c_n, c_n), indexed ``[bi, bo, j]``. ``channel`` is an
    optional per-output-channel flag used only by the channel-pruning baseline.
    """

    positional: np.ndarray
    diagonal: np.ndarray
    c_n: int
    channel: np.ndarray | None = None

    @classmethod
    def full(cls, c_out: int, c_in: int, f: int, c_n: int, channel: bool = False) -> "PruneMask":
        if c_out % c_n or c_in % c_n:
            raise ValueError(f"c_n={c_n} must divide c_in={c_in} and c_out={c_out}")
        return cls(
            positional=np.ones((f, f), dtype=bool),
            diagonal=np.ones((c_in // c_n, c_out // c_n, c_n), dtype=bool),
            c_n=c_n,
            channel=np.ones(c_out, dtype=bool) if channel else None,
        )

    @property
    def f(self) -> int:
        return self.positional.shape[0]

    @property
    def c_in(self) -> int:
        return self.diagonal.shape[0] * self.c_n

    @property
    def c_out(self) -> int:
        return self.diagonal.shape[1] * self.c_n

    def copy(self) -> "PruneMask":
        return PruneMask(
            self.positional.copy(),
            self.diagonal.copy(),
            self.c_n,
            None if self.channel is None else self.channel.copy(),
        )

    def weight_mask(self) -> np.ndarray:
        """Dense boolean mask of shape (c_out, c_in, f, f)."""
        bi, bo, j = diagonal_index(self.c_out, self.c_in, self.c_n)
        kernel_on = self.diagonal[bi, bo, j]
        if self.channel is not None:
            kernel_on = kernel_on & self.channel[:, None]
        return kernel_on[:, :, None, None] & self.positional[None, None, :, :]

    def bias_mask(self) -> np.ndarray:
        if self.channel is None:
            return np.ones(self.c_out, dtype=bool)
        return self.channel.copy()

    def non_center_positional(self) -> np.ndarray:
        r = self.f // 2
        flat = self.positional.copy()
        flat[r, r] = False
        return flat

    @property
    def alpha(self) -> float:
        """Retained fraction of the f*f - 1 rotation-bearing positions."""
        n = self.f * self.f - 1
        return float(self.non_center_positional().sum() / n) if n else 1.0

    @property
    def beta(self) -> float:
        """Retained fraction of the j != 0 diagonal groups over all block pairs."""
        nontrivial = self.diagonal[:, :, 1:]
        return float(nontrivial.mean()) if nontrivial.size else 1.0

    def is_subset_of(self, other: "PruneMask") -> bool:
        """True when every group active here is also active in ``other``."""
        ok = not np.any(self.positional & ~other.positional)
        ok = ok and not np.any(self.diagonal & ~other.diagonal)
        if self.channel is not None and other.channel is not None:
            ok = ok and not np.any(self.channel & ~other.channel)
        return bool(ok)

    def to_dict(self) -> dict:
        d = {
            "c_n": self.c_n,
            "positional": self.positional.astype(int).tolist(),
            "diagonal": self.diagonal.astype(int).tolist(),
        }
        if self.channel is not None:
            d["channel"] = self.channel.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PruneMask":
        channel = d.get("channel")
        return cls(
            np.asarray(d["positional"], dtype=bool),
            np.asarray(d["diagonal"], dtype=bool),
            int(d["c_n"]),
            None if channel is None else np.asarray(channel, dtype=bool),
        )
