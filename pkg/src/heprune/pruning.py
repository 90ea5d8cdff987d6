"""Threshold-scheduled structured pruning with fine-tuning.

Each iteration raises the thresholds, prunes every group whose L2 norm is
strictly below its threshold, then fine-tunes the surviving weights without
any regularization. Masks only ever shrink, and pruned weights are held at
exactly zero through fine-tuning.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .costmodel import exact_rotations, network_exact_rotations, reduction_pct
from .masks import PruneMask, diagonal_index
from .network import ToyCNN, accuracy
from .training import SGD, RegFactors, diagonal_norms, positional_norms, run_epoch

MODES = ("both", "positional", "diagonal", "channel")

TRAJECTORY_COLUMNS = [
    "iteration", "threshold_p", "threshold_d", "alpha", "beta",
    "rotations", "rotations_reduction_pct", "accuracy",
]


class Thresholds(NamedTuple):
    positional: float | None = None
    diagonal: float | None = None
    channel: float | None = None


@dataclass
class PruneSchedule:
    iterations: int = 100
    threshold_start: float = 0.0
    threshold_step_p: float = 0.01
    threshold_step_d: float = 0.01
    threshold_step_c: float = 0.01
    finetune_steps: int = 10
    finetune_lr: float = 1e-4
    finetune_batch_size: int = 100
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.threshold_start < 0 or min(self.threshold_step_p, self.threshold_step_d,
                                           self.threshold_step_c) < 0:
            raise ValueError("thresholds must be non-negative and non-decreasing")

    def thresholds(self, t: int, mode: str = "both") -> Thresholds:
        """Linear ramp ``start + t * step`` for the group kinds ``mode`` prunes."""
        p = self.threshold_start + t * self.threshold_step_p
        d = self.threshold_start + t * self.threshold_step_d
        c = self.threshold_start + t * self.threshold_step_c
        return Thresholds(
            positional=p if mode in ("both", "positional") else None,
            diagonal=d if mode in ("both", "diagonal") else None,
            channel=c if mode == "channel" else None,
        )


def positional_group_norm(w, u: int, v: int) -> float:
    f = w.shape[2]
    if not (0 <= u < f and 0 <= v < f):
        raise IndexError(f"position ({u}, {v}) outside {f}x{f}")
    return float(np.sqrt(np.sum(w[:, :, u, v] ** 2)))


def diagonal_group_norm(w, bi: int, bo: int, j: int, c_n: int) -> float:
    c_out, c_in = w.shape[:2]
    if not (0 <= bi < c_in // c_n and 0 <= bo < c_out // c_n and 0 <= j < c_n):
        raise IndexError(f"diagonal group ({bi}, {bo}, {j}) out of range")
    local = np.arange(c_n)
    kernels = w[bo * c_n + (local + j) % c_n, bi * c_n + local]
    return float(np.sqrt(np.sum(kernels ** 2)))


def channel_norms(w) -> np.ndarray:
    return np.sqrt(np.einsum("oiuv,oiuv->o", w, w))


def prune_step(w, mask: PruneMask, thresholds: Thresholds) -> PruneMask:
    """New mask with every group whose norm is ``< threshold`` pruned.

    Norms are taken on the already-masked weights; previously pruned groups
    stay pruned. The caller zeroes weights via ``ToyCNN.apply_masks``.
    """
    w = w * mask.weight_mask()
    new = mask.copy()
    if thresholds.positional is not None:
        new.positional &= ~(positional_norms(w) < thresholds.positional)
    if thresholds.diagonal is not None:
        new.diagonal &= ~(diagonal_norms(w, mask.c_n) < thresholds.diagonal)
    if thresholds.channel is not None:
        if new.channel is None:
            new.channel = np.ones(w.shape[0], dtype=bool)
        new.channel &= ~(channel_norms(w) < thresholds.channel)
    return new


def network_alpha_beta(masks) -> tuple[float, float]:
    """Rotation-weighted retained fractions over all layers."""
    tau = pi = tau_max = pi_max = 0
    for m in masks:
        t, p = exact_rotations(m)
        tau, pi = tau + t, pi + p
        full = PruneMask.full(m.c_out, m.c_in, m.f, m.c_n)
        t0, p0 = exact_rotations(full)
        tau_max, pi_max = tau_max + t0, pi_max + p0
    return (tau / tau_max if tau_max else 1.0), (pi / pi_max if pi_max else 1.0)


def unpruned_rotations(model: ToyCNN) -> int:
    return network_exact_rotations(
        [PruneMask.full(p.c_out, p.c_in, p.f, model.c_n) for p in model.convs])


def active_parameters(model: ToyCNN) -> int:
    return int(sum(m.weight_mask().sum() + m.bias_mask().sum() for m in model.masks))


def total_conv_parameters(model: ToyCNN) -> int:
    return int(sum(p.weights.size + p.bias.size for p in model.convs))


def finetune(model: ToyCNN, opt: SGD, x, y, schedule: PruneSchedule, rng):
    if schedule.finetune_steps <= 0:
        return
    n = len(x)
    bs = min(schedule.finetune_batch_size, n)
    for _ in range(schedule.finetune_steps):
        idx = rng.choice(n, size=bs, replace=False)
        run_epoch(model, opt, x[idx], y[idx], RegFactors(), schedule.finetune_lr, bs, 0.0, rng)


def _record(model, t, th: Thresholds, x_ev, y_ev, base_rot, base_params):
    alpha, beta = network_alpha_beta(model.masks)
    rot = network_exact_rotations(model.masks)
    return {
        "iteration": t,
        "threshold_p": th.positional if th.positional is not None else math.nan,
        "threshold_d": th.diagonal if th.diagonal is not None else math.nan,
        "alpha": alpha,
        "beta": beta,
        "rotations": rot,
        "rotations_reduction_pct": reduction_pct(rot, base_rot),
        "accuracy": accuracy(model, x_ev, y_ev),
        "param_reduction_pct": reduction_pct(active_parameters(model), base_params),
        "masks": [m.copy() for m in model.masks],
    }


def prune_with_finetune(model: ToyCNN, schedule: PruneSchedule, data, mode: str = "both",
                        on_iteration=None) -> list[dict]:
    """Run the prune/fine-tune loop; mutates ``model``.

    Returns one record per iteration, preceded by iteration 0 for the model as
    handed in. ``on_iteration(record, model)`` is called after each record.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if data is None:
        raise ValueError("pruning needs (x_train, y_train, x_eval, y_eval)")
    x_tr, y_tr, x_ev, y_ev = data
    if mode == "channel":
        for m in model.masks:
            if m.channel is None:
                m.channel = np.ones(m.c_out, dtype=bool)
    model.apply_masks()
    rng = np.random.default_rng(schedule.seed)
    opt = SGD(model, schedule.momentum)
    base_rot = unpruned_rotations(model)
    base_params = total_conv_parameters(model)

    records = [_record(model, 0, schedule.thresholds(0, mode), x_ev, y_ev, base_rot, base_params)]
    if on_iteration:
        on_iteration(records[-1], model)
    for t in range(1, schedule.iterations + 1):
        th = schedule.thresholds(t, mode)
        model.masks = [prune_step(p.weights, m, th) for p, m in zip(model.convs, model.masks)]
        model.apply_masks()
        finetune(model, opt, x_tr, y_tr, schedule, rng)
        records.append(_record(model, t, th, x_ev, y_ev, base_rot, base_params))
        if on_iteration:
            on_iteration(records[-1], model)
    return records


def channel_prune_baseline(model: ToyCNN, schedule: PruneSchedule, data, on_iteration=None):
    """Per-output-channel L2 pruning; track ``param_reduction_pct`` rather than rotations."""
    return prune_with_finetune(model, schedule, data, mode="channel", on_iteration=on_iteration)


def write_trajectory_csv(path, records, extra_columns=("param_reduction_pct",)):
    cols = TRAJECTORY_COLUMNS + list(extra_columns)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for r in records:
            writer.writerow({k: r[k] for k in cols})


def read_trajectory_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {k: float(v) for k, v in r.items()}
        d["iteration"] = int(d["iteration"])
        d["rotations"] = int(d["rotations"])
        out.append(d)
    return out


def schedule_from_dict(d: dict) -> PruneSchedule:
    return PruneSchedule(**d)


def schedule_to_dict(s: PruneSchedule) -> dict:
    return asdict(s)


__all__ = [
    "PruneMask", "PruneSchedule", "Thresholds", "diagonal_index", "positional_group_norm",
    "diagonal_group_norm", "prune_step", "prune_with_finetune", "channel_prune_baseline",
]
