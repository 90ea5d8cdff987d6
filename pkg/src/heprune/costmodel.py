"""Closed-form rotation counts for packed convolution layers."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

from .masks import PruneMask


class DivisibilityError(ValueError):
    pass


@dataclass(frozen=True)
class LayerCostSpec:
    c_in: int
    c_out: int
    f: int
    c_n: int
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("c_in", "c_out", "f", "c_n"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be a positive integer")
        if self.f % 2 == 0:
            raise ValueError(f"filter size must be odd, got {self.f}")
        if self.c_in % self.c_n or self.c_out % self.c_n:
            raise DivisibilityError(
                f"c_n={self.c_n} must divide c_in={self.c_in} and c_out={self.c_out}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_mask(cls, mask: PruneMask) -> "LayerCostSpec":
        return cls(mask.c_in, mask.c_out, mask.f, mask.c_n, mask.alpha, mask.beta)

    @property
    def in_blocks(self) -> int:
        return self.c_in // self.c_n

    @property
    def out_blocks(self) -> int:
        return self.c_out // self.c_n

    def to_dict(self) -> dict:
        return asdict(self)


def _terms(spec: LayerCostSpec):
    siso = spec.f * spec.f - 1
    ras = (spec.c_n - 1) * spec.out_blocks
    return siso, ras


def rotations_unpruned(spec: LayerCostSpec) -> int:
    siso, ras = _terms(spec)
    return (siso + ras) * spec.in_blocks


def rotations_pruned(spec: LayerCostSpec) -> float:
    siso, ras = _terms(spec)
    return (spec.alpha * siso + spec.beta * ras) * spec.in_blocks


def dominance_gap(spec: LayerCostSpec, fraction: float) -> tuple[float, float]:
    """Rotations saved by pruning ``fraction`` of positional vs of diagonal groups."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction={fraction} outside [0, 1]")
    siso, ras = _terms(spec)
    return fraction * siso * spec.in_blocks, fraction * ras * spec.in_blocks


def exact_rotations(mask: PruneMask) -> tuple[int, int]:
    """``(tau, pi)`` executed by the packed convolution under ``mask``.

    One spatial rotation per retained non-center position per input block,
    one channel rotation per retained ``j != 0`` diagonal per block pair.
    """
    in_blocks = mask.diagonal.shape[0]
    tau = int(mask.non_center_positional().sum()) * in_blocks
    pi = int(mask.diagonal[:, :, 1:].sum())
    return tau, pi


class NetworkCost(NamedTuple):
    unpruned: int
    pruned: float
    per_layer: list


def network_cost(specs: Sequence[LayerCostSpec]) -> NetworkCost:
    rows = [(rotations_unpruned(s), rotations_pruned(s)) for s in specs]
    return NetworkCost(
        unpruned=sum(r[0] for r in rows),
        pruned=float(sum(r[1] for r in rows)),
        per_layer=rows,
    )


def network_exact_rotations(masks: Sequence[PruneMask]) -> int:
    return sum(sum(exact_rotations(m)) for m in masks)


def reduction_pct(rotations: float, baseline: float) -> float:
    if baseline <= 0:
        return 0.0
    return 100.0 * (1.0 - rotations / baseline)


def layer_report(layer_id, mask: PruneMask, tau: int, pi: int) -> dict:
    """One row of the ledger export."""
    spec = LayerCostSpec.from_mask(mask)
    return {
        "layer_id": layer_id,
        "tau": int(tau),
        "pi": int(pi),
        "total": int(tau + pi),
        "alpha": spec.alpha,
        "beta": spec.beta,
        "estimate_unpruned": rotations_unpruned(spec),
        "estimate_pruned": rotations_pruned(spec),
    }
